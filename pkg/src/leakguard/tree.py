"""C4.5-style decision trees over binary word-presence features.

Each internal node tests whether one feature is present. Splits are chosen
by gain ratio; ties go to the lowest feature id, and vocabulary ids follow
byte order of the literals, so ties resolve lexicographically by literal and
training does not depend on sample order. Leaves predict the majority class
with ties going to "no leak". There is no pruning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy import sparse

from .features import FeatureVector, Vocabulary, extract_parse
from .model import Dataset, PiiType, pii_type


@dataclass(frozen=True)
class TrainConfig:
    min_gain_ratio: float = 1e-6
    min_samples_split: int = 4
    max_depth: int = 32

    def __post_init__(self):
        if self.min_gain_ratio < 0 or self.min_samples_split < 2 or self.max_depth < 1:
            raise ValueError(f"invalid training config {self}")


@dataclass(frozen=True)
class Leaf:
    positive: bool
    confidence: float


@dataclass(frozen=True)
class Node:
    feature_id: int
    absent: "TreeNode"
    present: "TreeNode"


TreeNode = Union[Leaf, Node]


class DecisionTree:
    def __init__(self, root: TreeNode):
        self.root = root

    def __eq__(self, other) -> bool:
        return isinstance(other, DecisionTree) and self.root == other.root

    def __repr__(self) -> str:
        return f"DecisionTree(depth={self.depth}, features={sorted(self.feature_ids_used)})"

    def predict(self, fv: FeatureVector) -> tuple[bool, float]:
        node = self.root
        while type(node) is Node:
            node = node.present if node.feature_id in fv else node.absent
        return node.positive, node.confidence

    @property
    def feature_ids_used(self) -> set[int]:
        out = set()
        stack = [self.root]
        while stack:
            n = stack.pop()
            if isinstance(n, Node):
                out.add(n.feature_id)
                stack += (n.absent, n.present)
        return out

    @property
    def depth(self) -> int:
        def d(n):
            return 0 if isinstance(n, Leaf) else 1 + max(d(n.absent), d(n.present))
        return d(self.root)

    def to_json(self) -> dict:
        def enc(n):
            if isinstance(n, Leaf):
                return {"leaf": n.positive, "conf": n.confidence}
            return {"f": n.feature_id, "a": enc(n.absent), "p": enc(n.present)}
        return enc(self.root)

    @classmethod
    def from_json(cls, obj: dict) -> "DecisionTree":
        def dec(o):
            if "leaf" in o:
                return Leaf(bool(o["leaf"]), float(o["conf"]))
            return Node(int(o["f"]), dec(o["a"]), dec(o["p"]))
        return cls(dec(obj))

    def remap(self, mapping: Mapping[int, int]) -> "DecisionTree":
        def rm(n):
            if isinstance(n, Leaf):
                return n
            return Node(mapping[n.feature_id], rm(n.absent), rm(n.present))
        return DecisionTree(rm(self.root))


def predict_tree(tree: DecisionTree, fv: FeatureVector) -> tuple[bool, float]:
    return tree.predict(fv)


# --- split criterion -----------------------------------------------------------

def _h(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def gain_ratio(samples: Sequence[tuple[FeatureVector, bool]], feature_id: int) -> float:
    """Information gain of splitting on presence of ``feature_id``, over split info."""
    n = len(samples)
    if n == 0:
        raise ValueError("gain_ratio of an empty sample")
    pos = sum(1 for _, y in samples if y)
    a = sum(1 for fv, _ in samples if feature_id in fv)
    ap = sum(1 for fv, y in samples if y and feature_id in fv)
    split_info = _h(a / n)
    if split_info == 0.0:
        return 0.0
    b, bp = n - a, pos - ap
    cond = (a / n) * _h(ap / a) + (b / n) * _h(bp / b)
    return (_h(pos / n) - cond) / split_info


def _entropy_vec(p: np.ndarray) -> np.ndarray:
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))
    return h


def _gain_ratios(n: int, pos: int, a: np.ndarray, ap: np.ndarray) -> np.ndarray:
    """Vectorised gain ratio; features constant over the node score -1."""
    a = a.astype(np.float64)
    ap = ap.astype(np.float64)
    b = n - a
    bp = pos - ap
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = (a / n) * _entropy_vec(np.where(a > 0, ap / a, 0.0)) \
            + (b / n) * _entropy_vec(np.where(b > 0, bp / b, 0.0))
        split = _entropy_vec(a / n)
        gr = (_h(pos / n) - cond) / split
    return np.where((a > 0) & (b > 0), gr, -1.0)


# --- training --------------------------------------------------------------------

def feature_matrix(vectors: Sequence[FeatureVector], n_features: int) -> sparse.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    for fv in vectors:
        indices.extend(sorted(fv))
        indptr.append(len(indices))
    data = np.ones(len(indices), dtype=np.int32)
    return sparse.csr_matrix((data, np.array(indices, dtype=np.int64), np.array(indptr)),
                             shape=(len(vectors), n_features))


def _leaf(n: int, pos: int) -> Leaf:
    positive = pos * 2 > n
    return Leaf(positive, (pos if positive else n - pos) / n)


def train_tree_matrix(X: sparse.csr_matrix, y: np.ndarray, config: TrainConfig = TrainConfig()) -> DecisionTree:
    y = np.asarray(y, dtype=bool)
    if X.shape[0] == 0:
        raise ValueError("cannot train on zero samples")

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        n = len(idx)
        ys = y[idx]
        pos = int(ys.sum())
        if pos == 0 or pos == n or n < config.min_samples_split or depth >= config.max_depth:
            return _leaf(n, pos)
        sub = X[idx]
        a = np.asarray(sub.sum(axis=0)).ravel()
        ap = sub.T.dot(ys.astype(np.int64))
        gr = _gain_ratios(n, pos, a, ap)
        if gr.size == 0:
            return _leaf(n, pos)
        best = int(np.argmax(gr))
        if gr[best] < 0 or gr[best] < config.min_gain_ratio:
            return _leaf(n, pos)
        col = np.asarray(sub[:, best].todense()).ravel() > 0
        return Node(best, grow(idx[~col], depth + 1), grow(idx[col], depth + 1))

    return DecisionTree(grow(np.arange(X.shape[0]), 0))


def train_tree(samples: Sequence[tuple[FeatureVector, bool]], config: TrainConfig = TrainConfig(),
               n_features: int | None = None) -> DecisionTree:
    if not samples:
        raise ValueError("cannot train on zero samples")
    if n_features is None:
        n_features = 1 + max((max(fv) for fv, _ in samples if fv), default=-1)
    X = feature_matrix([fv for fv, _ in samples], n_features)
    return train_tree_matrix(X, np.array([bool(lbl) for _, lbl in samples]), config)


# --- binary relevance ------------------------------------------------------------

class EmptyLabelSet(ValueError):
    pass


class VocabularyMismatch(ValueError):
    pass


class EmptyReducedVocabulary(ValueError):
    pass


class BinaryRelevanceModel:
    """One independent binary tree per PII label over a shared vocabulary."""

    def __init__(self, label_trees: Mapping[PiiType, DecisionTree], vocabulary: Vocabulary):
        self.label_trees = dict(sorted(label_trees.items()))
        self.vocabulary = vocabulary
        self._items = tuple(self.label_trees.items())

    @property
    def vocabulary_ref(self) -> str:
        return self.vocabulary.digest

    @property
    def label_set(self) -> frozenset:
        return frozenset(self.label_trees)

    def predict(self, fv: FeatureVector) -> frozenset:
        out = []
        for label, tree in self._items:
            node = tree.root
            while type(node) is Node:
                node = node.present if node.feature_id in fv else node.absent
            if node.positive:
                out.append(label)
        return frozenset(out)

    def to_json(self, vocab_ref: str | None = None) -> dict:
        return {"vocab_ref": vocab_ref or self.vocabulary_ref,
                "labels": [{"type": t.name, "tree": tr.to_json()} for t, tr in self.label_trees.items()]}

    @classmethod
    def from_json(cls, obj: dict, vocabulary: Vocabulary, custom: Iterable[PiiType] = ()) -> "BinaryRelevanceModel":
        custom = tuple(custom)
        trees = {pii_type(e["type"], custom): DecisionTree.from_json(e["tree"]) for e in obj["labels"]}
        model = cls(trees, vocabulary)
        n = len(vocabulary)
        if any(f >= n for f in tree_features(model)):
            raise VocabularyMismatch("tree references a feature outside the vocabulary")
        return model


def train_binary_relevance(train: Dataset, labels: Iterable[PiiType], vocab: Vocabulary,
                           config: TrainConfig = TrainConfig(), X: sparse.csr_matrix | None = None
                           ) -> BinaryRelevanceModel:
    labels = sorted(set(labels))
    if not labels:
        raise EmptyLabelSet("binary relevance needs at least one label")
    if X is None:
        X = feature_matrix([extract_parse(r.payload, vocab) for r in train.records], len(vocab))
    trees = {}
    for label in labels:
        y = np.array([label in r.labels for r in train.records], dtype=bool)
        trees[label] = train_tree_matrix(X, y, config)
    return BinaryRelevanceModel(trees, vocab)


def predict_multilabel(model: BinaryRelevanceModel, fv: FeatureVector) -> frozenset:
    if fv and max(fv) >= len(model.vocabulary):
        raise VocabularyMismatch("feature id outside the model vocabulary")
    return model.predict(fv)


def tree_features(model: BinaryRelevanceModel) -> set[int]:
    out: set[int] = set()
    for tree in model.label_trees.values():
        out |= tree.feature_ids_used
    return out


def reduce_and_retrain(model: BinaryRelevanceModel, train: Dataset, config: TrainConfig = TrainConfig(),
                       X: sparse.csr_matrix | None = None) -> tuple[Vocabulary, BinaryRelevanceModel]:
    """Retrain from scratch on only the words the trees test.

    ``X`` is the training matrix over the full vocabulary, if already built.
    """
    used = sorted(tree_features(model))
    if not used:
        raise EmptyReducedVocabulary("model trees test no features")
    reduced, _ = model.vocabulary.restrict(used)
    if X is None:
        X = feature_matrix([extract_parse(r.payload, model.vocabulary) for r in train.records],
                           len(model.vocabulary))
    # restrict() keeps literal order, so reduced id i is used[i]
    Xr = X[:, used].tocsr()
    reduced_model = train_binary_relevance(train, model.label_set, reduced, config, X=Xr)
    return reduced, reduced_model
