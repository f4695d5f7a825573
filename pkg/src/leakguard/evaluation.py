"""Metrics and the k-fold comparison of the six detection methods.

Methods:
  1 baseline (binary tree + key heuristic), all PII
  2 baseline, unknown PII only
  3 string matching + baseline on unknown PII
  4 multi-label trees, all PII
  5 multi-label trees, unknown PII only
  6 string matching + multi-label trees on unknown PII

Schemes: ``binary`` (leak or not), ``leak`` (type sets, leaking packets
only), ``combined`` (type sets, every packet, no leak = empty set).
"""
from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .matcher import build_automaton, match_pii, pii_pattern_set
from .model import Dataset, unknown_only
from .recon import train_recon
from .registry import LabelPolicy, ModelRegistry, Scope, train_registry
from .features import extract_parse
from .tree import TrainConfig

METHODS = (1, 2, 3, 4, 5, 6)
METHOD_NAMES = {
    1: "baseline (all)",
    2: "baseline (unknown)",
    3: "string + baseline (unknown)",
    4: "multi-label (all)",
    5: "multi-label (unknown)",
    6: "string + multi-label (unknown)",
}
SCOPES = ("per-app", "per-domain", "general")
GENERAL = "general"


class LengthMismatch(ValueError):
    pass


class EvalScheme(enum.Enum):
    BINARY = "binary"
    LEAK = "leak"
    COMBINED = "combined"


# --- metrics -----------------------------------------------------------------------

def _ratio(num: int, den: int, both_empty: bool) -> float:
    if den:
        return num / den
    return 1.0 if both_empty else 0.0


def multilabel_metrics(preds: Sequence, truths: Sequence) -> dict:
    """Example-based accuracy, precision and recall averaged over examples.

    An example whose denominator is empty scores 1 when prediction and truth
    are both empty, else 0.
    """
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise ValueError("no examples")
    acc = prec = rec = 0.0
    for p, t in zip(preds, truths):
        p, t = set(p), set(t)
        inter = len(p & t)
        both = not p and not t
        acc += _ratio(inter, len(p | t), both)
        prec += _ratio(inter, len(p), both)
        rec += _ratio(inter, len(t), both)
    n = len(preds)
    return {"accuracy": acc / n, "precision": prec / n, "recall": rec / n}


def binary_metrics(preds: Sequence[bool], truths: Sequence[bool]) -> dict:
    """Confusion-matrix metrics; a zero denominator scores 0 and is listed in ``undefined``."""
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    p = np.asarray(preds, dtype=bool)
    t = np.asarray(truths, dtype=bool)
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    tn = int((~p & ~t).sum())
    undefined = []

    def div(a, b, name):
        if b == 0:
            undefined.append(name)
            return 0.0
        return a / b

    precision = div(tp, tp + fp, "precision")
    recall = div(tp, tp + fn, "recall")
    specificity = div(tn, tn + fp, "specificity")
    f = div(2 * precision * recall, precision + recall, "f_measure")
    accuracy = div(tp + tn, len(p), "accuracy")
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "specificity": specificity,
            "f_measure": f, "undefined": undefined}


# --- folds -------------------------------------------------------------------------

def stratified_folds(labels: Sequence[bool], k: int, seed: int) -> list[list[int]]:
    """Index folds stratified on ``labels``; disjoint, covering, sizes within 1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = random.Random(seed)
    pos = [i for i, y in enumerate(labels) if y]
    neg = [i for i, y in enumerate(labels) if not y]
    rng.shuffle(pos)
    rng.shuffle(neg)
    folds: list[list[int]] = [[] for _ in range(k)]
    for j, i in enumerate(pos + neg):
        folds[j % k].append(i)
    return [sorted(f) for f in folds]


# --- per-record predictions --------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    record: int          # index into dataset records
    entity: str          # specialized model key or GENERAL
    leak: bool
    types: frozenset


def _registry_scope(scope: str) -> Scope:
    return Scope.PER_DOMAIN if scope == "per-domain" else Scope.PER_APP


def _policy(method: int) -> LabelPolicy:
    return LabelPolicy.ALL if method in (1, 4) else LabelPolicy.UNKNOWN


def truth_of(method: int, labels: frozenset) -> frozenset:
    return unknown_only(labels) if method in (2, 5) else labels


def _predict_fold(method: int, scope: str, train: Dataset, test: Dataset, auto, config: TrainConfig,
                  cache: dict) -> list[tuple[str, bool, frozenset]]:
    policy = _policy(method)
    rscope = _registry_scope(scope)
    use_strings = method in (3, 6)
    out = []
    if method in (1, 2, 3):
        key = ("recon", policy)
        if key not in cache:
            cache[key] = train_recon(train, rscope, policy, config)
        reg = cache[key]
        for r in test.records:
            if scope == GENERAL:
                ent, model = None, reg.general
                leak = model.predict(r.payload)
                types = frozenset(reg.table.types_for(extract_parse(r.payload, reg.table.vocabulary))) \
                    if leak else frozenset()
            else:
                ent, leak, types = reg.predict(r.payload, r.app_id, r.domain)
            if use_strings:
                s = frozenset(match_pii(auto, r.payload))
                types |= s
                leak = leak or bool(s)
            out.append((ent or GENERAL, leak, types))
    else:
        key = ("ml", policy)
        if key not in cache:
            cache[key] = train_registry(train, rscope, policy, config)
        reg: ModelRegistry = cache[key]
        for r in test.records:
            if scope == GENERAL:
                ent, model = None, reg.general
            else:
                h = reg.select(r.app_id, r.domain)
                ent, model = h.entity, h.model
            types = model.predict(extract_parse(r.payload, model.vocabulary))
            if use_strings:
                types |= frozenset(match_pii(auto, r.payload))
            out.append((ent or GENERAL, bool(types), frozenset(types)))
    return out


@dataclass
class FoldPlan:
    folds: list[list[int]]
    flagged: dict = field(default_factory=dict)   # entity -> positives, for entities with < k positives


def flag_entities(data: Dataset, k: int, scope: str, method: int | None = None) -> dict:
    """Entities with fewer than k positives under ``method``'s truth (any leak if None)."""
    if scope == GENERAL:
        return {}
    pos: dict[str, int] = {}
    for r in data.records:
        e = r.app_id if scope == "per-app" else r.domain
        if e is not None:
            truth = r.labels if method is None else truth_of(method, r.labels)
            pos[e] = pos.get(e, 0) + bool(truth)
    return {e: n for e, n in sorted(pos.items()) if n < k}


def plan_folds(data: Dataset, k: int, seed: int, scope: str) -> FoldPlan:
    folds = stratified_folds([r.has_leak for r in data.records], k, seed)
    return FoldPlan(folds, flag_entities(data, k, scope))


class Evaluator:
    """Runs each (method, scope) once over the folds and scores any scheme from the cached predictions."""

    def __init__(self, data: Dataset, k: int = 5, seed: int = 0, config: TrainConfig = TrainConfig()):
        if not len(data):
            raise ValueError("empty dataset")
        self.data, self.k, self.seed, self.config = data, k, seed, config
        self.auto = build_automaton(pii_pattern_set(data.literals(predefined_only=True)))
        self._preds: dict[tuple[int, str], list[Prediction]] = {}
        self._models: dict[Scope, list[dict]] = {}

    def predictions(self, method: int, scope: str) -> list[Prediction]:
        if method not in METHODS:
            raise ValueError(f"unknown method {method}")
        if scope not in SCOPES:
            raise ValueError(f"unknown scope {scope}")
        key = (method, scope)
        if key not in self._preds:
            self._run_scope(scope, [method])
        return self._preds[key]

    def _run_scope(self, scope: str, methods) -> None:
        recs = self.data.records
        plan = plan_folds(self.data, self.k, self.seed, scope)
        # folds do not depend on scope, so the general column reuses the per-app models
        caches = self._models.setdefault(_registry_scope(scope), [{} for _ in plan.folds])
        results = {m: [None] * len(recs) for m in methods}
        for fi, test_idx in enumerate(plan.folds):
            test_set = set(test_idx)
            train = self.data.subset(r for i, r in enumerate(recs) if i not in test_set)
            test = self.data.subset(recs[i] for i in test_idx)
            for m in methods:
                for i, (ent, leak, types) in zip(test_idx, _predict_fold(m, scope, train, test, self.auto,
                                                                           self.config, caches[fi])):
                    results[m][i] = Prediction(i, ent, leak, types)
        for m in methods:
            self._preds[(m, scope)] = results[m]

    def run(self, methods, scopes) -> None:
        for s in scopes:
            todo = [m for m in methods if (m, s) not in self._preds]
            if todo:
                self._run_scope(s, todo)

    def report(self, method: int, scheme: EvalScheme, scope: str = "per-app") -> "MetricsReport":
        preds = self.predictions(method, scope)
        recs = self.data.records
        groups: dict[str, list[Prediction]] = {}
        for p in preds:
            groups.setdefault(p.entity, []).append(p)
        rows = []
        for ent in sorted(groups, key=lambda e: (e == GENERAL, e)):
            row = score(groups[ent], [truth_of(method, recs[p.record].labels) for p in groups[ent]], scheme)
            if row is not None:
                rows.append(Row(ent, *row))
        overall = score(preds, [truth_of(method, recs[p.record].labels) for p in preds], scheme)
        return MetricsReport(method, scheme, scope, rows, Row("all", *overall) if overall else None,
                             sorted(flag_entities(self.data, self.k, scope, method)))


def score(preds: Sequence[Prediction], truths: Sequence[frozenset], scheme: EvalScheme):
    """(n, metrics) for one group of predictions, or None if the scheme selects no record."""
    if scheme is EvalScheme.BINARY:
        m = binary_metrics([p.leak for p in preds], [bool(t) for t in truths])
        return len(preds), m
    if scheme is EvalScheme.LEAK:
        pairs = [(p.types, t) for p, t in zip(preds, truths) if t]
    else:
        pairs = [(p.types, t) for p, t in zip(preds, truths)]
    if not pairs:
        return None
    return len(pairs), multilabel_metrics([p for p, _ in pairs], [t for _, t in pairs])


# --- reports -------------------------------------------------------------------------

@dataclass
class Row:
    entity: str
    n: int
    metrics: dict


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    mean = sum(values) / len(values)
    if len(values) < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


@dataclass
class MetricsReport:
    method: int
    scheme: EvalScheme
    scope: str
    rows: list[Row]
    overall: Row | None
    flagged: list = field(default_factory=list)

    @property
    def specialized_rows(self) -> list[Row]:
        return [r for r in self.rows if r.entity != GENERAL]

    @property
    def general_row(self) -> Row | None:
        return next((r for r in self.rows if r.entity == GENERAL), None)

    def aggregate(self, metric: str = "accuracy") -> tuple[float, float]:
        """Mean and sample standard deviation across specialized classifiers.

        With no specialized rows (general scope) the general row stands alone.
        """
        rows = self.specialized_rows or self.rows
        return _mean_std([r.metrics[metric] for r in rows])

    def metric_names(self) -> list[str]:
        if self.scheme is EvalScheme.BINARY:
            return ["f_measure", "specificity", "recall", "accuracy"]
        return ["accuracy", "precision", "recall"]

    def to_json(self) -> dict:
        names = self.metric_names()
        agg = {m: dict(zip(("mean", "std"), self.aggregate(m))) for m in names}
        return {
            "method": self.method,
            "method_name": METHOD_NAMES[self.method],
            "scheme": self.scheme.value,
            "scope": self.scope,
            "rows": [{"entity": r.entity, "n": r.n, **{m: r.metrics[m] for m in names}} for r in self.rows],
            "overall": None if self.overall is None else
            {"n": self.overall.n, **{m: self.overall.metrics[m] for m in names}},
            "aggregate": {m: {k: _finite(v) for k, v in d.items()} for m, d in agg.items()},
            "fold_too_small": self.flagged,
        }

    def format(self) -> str:
        names = self.metric_names()
        width = max([len(r.entity) for r in self.rows] + [10])
        lines = [f"method {self.method} ({METHOD_NAMES[self.method]}), scheme {self.scheme.value}, "
                 f"scope {self.scope}",
                 f"{'classifier':<{width}}  {'n':>5}  " + "  ".join(f"{m:>11}" for m in names)]
        for r in self.rows:
            lines.append(f"{r.entity:<{width}}  {r.n:>5}  " + "  ".join(f"{r.metrics[m]:>11.4f}" for m in names))
        cells = []
        for m in names:
            mean, std = self.aggregate(m)
            cells.append(f"{_pct(mean, std):>11}")
        lines.append(f"{'mean ± sd':<{width}}  {'':>5}  " + "  ".join(cells))
        if self.flagged:
            lines.append(f"fewer than k positives: {', '.join(self.flagged)}")
        return "\n".join(lines)


def _finite(v: float):
    return None if v is None or math.isnan(v) else v


def _pct(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{100 * mean:.1f}±{100 * std:.1f}"


def cross_validate(data: Dataset, method_id: int, scheme: EvalScheme | str, k: int = 5, seed: int = 0,
                   scope: str = "per-app", config: TrainConfig = TrainConfig()) -> MetricsReport:
    return Evaluator(data, k, seed, config).report(method_id, EvalScheme(scheme), scope)


@dataclass
class Comparison:
    reports: dict          # (method, scheme value, scope) -> MetricsReport
    methods: tuple
    schemes: tuple
    scopes: tuple

    def cell(self, method: int, scheme: EvalScheme, scope: str, metric: str | None = None):
        rep = self.reports[(method, scheme.value, scope)]
        return rep.aggregate(metric or rep.metric_names()[0])

    def to_json(self) -> dict:
        out = []
        for (m, s, sc), rep in sorted(self.reports.items()):
            out.append(rep.to_json())
        return {"reports": out}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    def format(self) -> str:
        blocks = []
        for scheme in self.schemes:
            metric = "f_measure" if scheme is EvalScheme.BINARY else "accuracy"
            head = f"{'method':<32}" + "".join(f"{s:>16}" for s in self.scopes)
            lines = [f"scheme {scheme.value} ({metric}, mean±sd % over classifiers)", head]
            for m in self.methods:
                cells = "".join(f"{_pct(*self.cell(m, scheme, s, metric)):>16}" for s in self.scopes)
                lines.append(f"{m} {METHOD_NAMES[m]:<30}" + cells)
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks)


def run_method_comparison(data: Dataset, seed: int = 0, k: int = 5, methods=METHODS,
                          schemes=tuple(EvalScheme), scopes=SCOPES,
                          config: TrainConfig = TrainConfig()) -> Comparison:
    ev = Evaluator(data, k, seed, config)
    ev.run(methods, scopes)
    reports = {}
    for sc in scopes:
        for m in methods:
            for s in schemes:
                reports[(m, s.value, sc)] = ev.report(m, s, sc)
    return Comparison(reports, tuple(methods), tuple(schemes), tuple(scopes))
