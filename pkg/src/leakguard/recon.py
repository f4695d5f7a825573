"""Two-step baseline: a binary leak/no-leak tree per entity, then a
key-probability heuristic that guesses which PII types a leaking packet holds.

Keys are bare words (no flanking delimiters). For every type the table keeps
P(type | key) = #(packets with key and type) / #(packets with key), and a
per-type threshold picked on validation data.
"""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .features import EmptyVocabulary, FeatureVector, Mode, Vocabulary, build_vocabulary, extract_parse
from .model import Dataset, PiiType, pii_type
from .registry import (LabelPolicy, Scope, VocabConfig, as_policy_dataset, eligible, entity_key,
                       group_by_entity)
from .tree import DecisionTree, TrainConfig, feature_matrix, train_tree_matrix

THRESHOLD_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
DEFAULT_THRESHOLD = 0.5
RECON_VOCAB = VocabConfig(mode=Mode.BARE)


@dataclass
class KeyProbabilityTable:
    vocabulary: Vocabulary
    probs: dict[PiiType, dict[int, float]]
    thresholds: dict[PiiType, float] = field(default_factory=dict)

    def threshold(self, t: PiiType) -> float:
        return self.thresholds.get(t, DEFAULT_THRESHOLD)

    def prob(self, t: PiiType, key: bytes) -> float:
        fid = self.vocabulary.index.get(key)
        return 0.0 if fid is None else self.probs.get(t, {}).get(fid, 0.0)

    def types_for(self, fv: FeatureVector) -> set[PiiType]:
        out = set()
        for t, table in self.probs.items():
            th = self.threshold(t)
            if any(table.get(fid, 0.0) > th for fid in fv):
                out.add(t)
        return out

    def to_json(self) -> dict:
        lit = self.vocabulary.literal
        out = {t.name: {lit(f).decode("latin-1"): p for f, p in sorted(tbl.items())}
               for t, tbl in sorted(self.probs.items())}
        out["thresholds"] = {t.name: th for t, th in sorted(self.thresholds.items())}
        return out

    @classmethod
    def from_json(cls, obj: dict, vocabulary: Vocabulary, custom=()) -> "KeyProbabilityTable":
        idx = vocabulary.index
        probs = {pii_type(name, custom): {idx[k.encode("latin-1")]: float(p) for k, p in tbl.items()}
                 for name, tbl in obj.items() if name != "thresholds"}
        ths = {pii_type(name, custom): float(v) for name, v in obj.get("thresholds", {}).items()}
        return cls(vocabulary, probs, ths)


def build_key_table(train: Dataset, vocab: Vocabulary, types=None) -> KeyProbabilityTable:
    key_count: Counter = Counter()
    joint: dict[PiiType, Counter] = defaultdict(Counter)
    for r in train.records:
        fv = extract_parse(r.payload, vocab)
        key_count.update(fv)
        for t in r.labels:
            if types is None or t in types:
                joint[t].update(fv)
    probs = {t: {fid: c / key_count[fid] for fid, c in sorted(cnt.items())}
             for t, cnt in sorted(joint.items())}
    if types is not None:
        for t in types:
            probs.setdefault(t, {})
    return KeyProbabilityTable(vocab, probs)


def _f1(tp: int, fp: int, fn: int) -> float:
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


def calibrate_thresholds(table: KeyProbabilityTable, validation: Dataset) -> KeyProbabilityTable:
    """Per type, the grid threshold with the best F1 (highest one on ties)."""
    if not len(validation):
        raise ValueError("validation set is empty")
    vectors = [extract_parse(r.payload, table.vocabulary) for r in validation.records]
    thresholds = {}
    for t, tbl in table.probs.items():
        truth = np.array([t in r.labels for r in validation.records])
        if not truth.any():
            thresholds[t] = DEFAULT_THRESHOLD
            continue
        best_p = np.array([max((tbl.get(f, 0.0) for f in fv), default=0.0) for fv in vectors])
        best, best_f1 = DEFAULT_THRESHOLD, -1.0
        for th in THRESHOLD_GRID:
            pred = best_p > th
            tp = int((pred & truth).sum())
            f1 = _f1(tp, int((pred & ~truth).sum()), int((~pred & truth).sum()))
            if f1 >= best_f1:
                best, best_f1 = th, f1
        thresholds[t] = best
    return KeyProbabilityTable(table.vocabulary, table.probs, thresholds)


def heuristic_extract(payload: bytes, binary_tree: DecisionTree, table: KeyProbabilityTable,
                      vocab: Vocabulary, tree_vocab: Vocabulary | None = None) -> set[PiiType]:
    """Types whose keys clear their threshold, gated by the binary tree.

    ``tree_vocab`` is the tree's own vocabulary when it differs from the
    table's (specialized trees use entity-local words).
    """
    fv_tree = extract_parse(payload, tree_vocab or vocab)
    leak, _ = binary_tree.predict(fv_tree)
    if not leak:
        return set()
    fv = fv_tree if tree_vocab is None else extract_parse(payload, vocab)
    return table.types_for(fv)


# --- per-entity baseline ---------------------------------------------------------

@dataclass
class BinaryModel:
    vocabulary: Vocabulary
    tree: DecisionTree

    def predict(self, payload: bytes) -> bool:
        return self.tree.predict(extract_parse(payload, self.vocabulary))[0]


def _train_binary(data: Dataset, vc: VocabConfig, config: TrainConfig) -> BinaryModel:
    vocab = build_vocabulary(data, vc.delims, min_count=vc.min_count, max_doc_frac=vc.max_doc_frac, mode=vc.mode)
    X = feature_matrix([extract_parse(r.payload, vocab) for r in data.records], len(vocab))
    y = np.array([r.has_leak for r in data.records])
    return BinaryModel(vocab, train_tree_matrix(X, y, config))


@dataclass
class ReconRegistry:
    scope: Scope
    label_policy: LabelPolicy
    specialized: dict[str, BinaryModel]
    general: BinaryModel
    table: KeyProbabilityTable

    def select(self, app_id, domain) -> tuple[str | None, BinaryModel]:
        key = entity_key(self.scope, app_id, domain)
        m = self.specialized.get(key) if key is not None else None
        return (key, m) if m is not None else (None, self.general)

    def predict(self, payload: bytes, app_id=None, domain=None) -> tuple[str | None, bool, frozenset]:
        key, model = self.select(app_id, domain)
        if not model.predict(payload):
            return key, False, frozenset()
        return key, True, frozenset(self.table.types_for(extract_parse(payload, self.table.vocabulary)))


def train_recon(train: Dataset, scope: Scope = Scope.PER_APP, label_policy: LabelPolicy = LabelPolicy.ALL,
                config: TrainConfig = TrainConfig(), vocab_config: VocabConfig = RECON_VOCAB,
                validation: Dataset | None = None) -> ReconRegistry:
    """Binary trees per eligible entity plus a general tree and one global key table.

    Thresholds are calibrated on ``validation`` (the training set if omitted).
    """
    data = as_policy_dataset(train, label_policy)
    specialized = {}
    for key, recs in group_by_entity(data, scope).items():
        if eligible(recs, LabelPolicy.ALL):
            try:
                specialized[key] = _train_binary(data.subset(recs), vocab_config, config)
            except EmptyVocabulary:
                pass
    general = _train_binary(data, vocab_config, config)
    types = set()
    for r in data.records:
        types |= r.labels
    table = build_key_table(data, general.vocabulary, types)
    val = as_policy_dataset(validation, label_policy) if validation is not None else data
    table = calibrate_thresholds(table, val)
    return ReconRegistry(scope, label_policy, specialized, general, table)


def dumps_table(table: KeyProbabilityTable) -> str:
    return json.dumps(table.to_json(), sort_keys=True)
