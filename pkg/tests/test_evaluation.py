import math

import pytest
from hypothesis import given, settings, strategies as st

from leakguard.evaluation import (METHODS, SCOPES, EvalScheme, Evaluator, LengthMismatch, Prediction,
                                  binary_metrics, cross_validate, multilabel_metrics, plan_folds,
                                  run_method_comparison, score, stratified_folds)
from leakguard.model import EMAIL, IMEI, PASSWORD, USERNAME
from leakguard.tracegen import DEFAULT_KEY_TEMPLATES, GenConfig, generate

A, B, C = IMEI, EMAIL, PASSWORD


def test_multilabel_examples():
    assert multilabel_metrics([{A, B}], [{B, C}]) == pytest.approx(
        {"accuracy": 1 / 3, "precision": 0.5, "recall": 0.5})
    assert multilabel_metrics([set()], [set()]) == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0}
    assert multilabel_metrics([set()], [{A}]) == {"accuracy": 0.0, "precision": 0.0, "recall": 0.0}
    assert multilabel_metrics([{A}, {B}], [{A}, {B}]) == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0}
    with pytest.raises(LengthMismatch):
        multilabel_metrics([{A}], [])
    with pytest.raises(ValueError):
        multilabel_metrics([], [])


sets = st.frozensets(st.sampled_from([A, B, C, USERNAME]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(sets, sets), min_size=1, max_size=20))
def test_multilabel_bounds(pairs):
    m = multilabel_metrics([p for p, _ in pairs], [t for _, t in pairs])
    assert all(0.0 <= v <= 1.0 for v in m.values())
    # accuracy never exceeds precision or recall per example, hence on average
    assert m["accuracy"] <= min(m["precision"], m["recall"]) + 1e-12


def test_binary_examples():
    preds = [True] * 3 + [True] + [False] * 2 + [False] * 4
    truth = [True] * 3 + [False] + [True] * 2 + [False] * 4
    m = binary_metrics(preds, truth)
    assert m["recall"] == pytest.approx(0.6)
    assert m["specificity"] == pytest.approx(0.8)
    assert m["f_measure"] == pytest.approx(2 / 3, abs=1e-4)
    assert m["precision"] == pytest.approx(0.75)
    m = binary_metrics([False] * 4, [True, False, True, False])
    assert m["recall"] == 0.0 and m["specificity"] == 1.0 and "precision" in m["undefined"]
    m = binary_metrics([True, False], [True, False])
    assert all(m[k] == 1.0 for k in ("accuracy", "precision", "recall", "specificity", "f_measure"))
    with pytest.raises(LengthMismatch):
        binary_metrics([True], [True, False])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=80), st.integers(2, 7), st.integers(0, 1000))
def test_fold_partition(labels, k, seed):
    folds = stratified_folds(labels, k, seed)
    flat = sorted(i for f in folds for i in f)
    assert flat == list(range(len(labels)))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    pos = [sum(labels[i] for i in f) for f in folds]
    assert max(pos) - min(pos) <= 1
    assert stratified_folds(labels, k, seed) == folds


def test_leak_scheme_excludes_empty_truth():
    preds = [Prediction(0, "a", True, frozenset({A})), Prediction(1, "a", True, frozenset({A}))]
    n, m = score(preds, [frozenset({A}), frozenset()], EvalScheme.LEAK)
    assert n == 1 and m["accuracy"] == 1.0
    n, m = score(preds, [frozenset({A}), frozenset()], EvalScheme.COMBINED)
    assert n == 2 and m["accuracy"] == 0.5
    assert score(preds, [frozenset(), frozenset()], EvalScheme.LEAK) is None


@pytest.fixture(scope="module")
def evaluator(small_data):
    return Evaluator(small_data, k=3, seed=1)


def test_report_shape(evaluator, small_data):
    for scope in SCOPES:
        rep = evaluator.report(6, EvalScheme.LEAK, scope)
        assert rep.rows
        for row in rep.rows:
            assert all(0.0 <= row.metrics[m] <= 1.0 for m in rep.metric_names())
        if scope == "general":
            assert [r.entity for r in rep.rows] == ["general"]
    rep = evaluator.report(4, EvalScheme.BINARY)
    assert rep.metric_names() == ["f_measure", "specificity", "recall", "accuracy"]
    assert sum(r.n for r in rep.rows) == len(small_data)
    mean, std = rep.aggregate("f_measure")
    vals = [r.metrics["f_measure"] for r in rep.specialized_rows]
    assert mean == pytest.approx(sum(vals) / len(vals))
    if len(vals) > 1:
        assert std == pytest.approx(math.sqrt(sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)))
    assert "mean ± sd" in rep.format()


def test_predictions_cover_dataset(evaluator, small_data):
    for m in METHODS:
        preds = evaluator.predictions(m, "per-app")
        assert [p.record for p in preds] == list(range(len(small_data)))


def test_truth_scope_of_methods(evaluator, small_data):
    # methods 2 and 5 are scored against unknown labels only
    rep = evaluator.report(5, EvalScheme.LEAK)
    n_unknown = sum(1 for r in small_data.records if any(not t.predefined for t in r.labels))
    assert rep.overall.n == n_unknown
    rep = evaluator.report(6, EvalScheme.LEAK)
    assert rep.overall.n == sum(1 for r in small_data.records if r.labels)


def test_determinism(small_data):
    a = cross_validate(small_data, 6, "combined", k=3, seed=4).to_json()
    b = cross_validate(small_data, 6, "combined", k=3, seed=4).to_json()
    assert a == b


def test_bad_inputs(evaluator, small_data):
    with pytest.raises(ValueError):
        evaluator.predictions(7, "per-app")
    with pytest.raises(ValueError):
        evaluator.predictions(1, "per-host")
    with pytest.raises(ValueError):
        stratified_folds([True], 1, 0)
    with pytest.raises(ValueError):
        Evaluator(small_data.subset(()))


def predefined_only_config(**kw):
    tmpl = {k: v for k, v in DEFAULT_KEY_TEMPLATES.items()
            if k in ("IMEI", "AndroidId", "AdvertiserId", "Email", "Location", "MacAddress")}
    return GenConfig(num_apps=5, num_domains=10, packets_per_app=80, seed=3, key_templates=tmpl, **kw)


@pytest.fixture(scope="module")
def predefined_data():
    d = generate(predefined_only_config())
    assert all(t.predefined for r in d.records for t in r.labels)
    return d


def test_zero_unknown_leaks(predefined_data):
    cmp = run_method_comparison(predefined_data, seed=0, k=3, methods=(2, 5), schemes=(EvalScheme.LEAK,),
                                scopes=("per-app",))
    apps = sorted({r.app_id for r in predefined_data.records})
    for m in (2, 5):
        rep = cmp.reports[(m, "leak", "per-app")]
        assert rep.rows == [] and rep.overall is None
        assert rep.flagged == apps
        assert all(math.isnan(v) for v in rep.aggregate())


def test_all_predefined_string_matching_exact(predefined_data):
    ev = Evaluator(predefined_data, k=3, seed=0)
    for m in (3, 6):
        rep = ev.report(m, EvalScheme.LEAK, "per-app")
        assert rep.overall.metrics["accuracy"] == 1.0
        assert all(r.metrics["accuracy"] == 1.0 for r in rep.rows)


def test_plan_folds_flags(small_data):
    plan = plan_folds(small_data, 1000, 0, "per-app")
    assert set(plan.flagged) == {r.app_id for r in small_data.records}
    assert plan_folds(small_data, 3, 0, "general").flagged == {}


def test_comparison_output(small_data):
    cmp = run_method_comparison(small_data, seed=0, k=3, methods=(1, 6))
    assert len(cmp.reports) == 2 * 3 * 3
    text = cmp.format()
    assert "scheme leak" in text and "per-domain" in text
    assert cmp.dumps() == run_method_comparison(small_data, seed=0, k=3, methods=(1, 6)).dumps()
