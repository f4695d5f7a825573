"""Specialized (per-app or per-domain) classifiers with a general fallback."""
from __future__ import annotations

import enum
import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace

from .features import DEFAULT_DELIMITERS, EmptyVocabulary, Mode, Vocabulary, build_vocabulary, extract_parse
from .model import Dataset, PacketRecord, unknown_only
from .tree import (BinaryRelevanceModel, EmptyReducedVocabulary, TrainConfig, feature_matrix,
                   reduce_and_retrain, train_binary_relevance, tree_features)

log = logging.getLogger(__name__)


class Scope(enum.Enum):
    PER_APP = "per-app"
    PER_DOMAIN = "per-domain"


class LabelPolicy(enum.Enum):
    ALL = "all"
    UNKNOWN = "unknown"


class NoGeneralTrainingData(ValueError):
    pass


def entity_key(scope: Scope, app_id: str | None, domain: str | None) -> str | None:
    return app_id if scope is Scope.PER_APP else domain


def record_entity(scope: Scope, r: PacketRecord) -> str | None:
    return entity_key(scope, r.app_id, r.domain)


def policy_labels(policy: LabelPolicy, labels: frozenset) -> frozenset:
    return labels if policy is LabelPolicy.ALL else unknown_only(labels)


def group_by_entity(data: Dataset, scope: Scope) -> dict[str, list[PacketRecord]]:
    groups: dict[str, list[PacketRecord]] = defaultdict(list)
    for r in data.records:
        key = record_entity(scope, r)
        if key is not None:
            groups[key].append(r)
    return dict(sorted(groups.items()))


def eligible(records, policy: LabelPolicy) -> bool:
    """At least one packet with an exposure and one without, under ``policy``."""
    pos = sum(1 for r in records if policy_labels(policy, r.labels))
    return 0 < pos < len(records)


@dataclass(frozen=True)
class VocabConfig:
    min_count: int = 2
    max_doc_frac: float = 0.9
    mode: Mode = Mode.WRAPPED
    delims: frozenset = DEFAULT_DELIMITERS


@dataclass(frozen=True)
class ModelHandle:
    entity: str | None   # None = general
    model: BinaryRelevanceModel

    @property
    def specialized(self) -> bool:
        return self.entity is not None


@dataclass
class ModelRegistry:
    scope: Scope
    label_policy: LabelPolicy
    specialized: dict[str, BinaryRelevanceModel]
    general: BinaryRelevanceModel
    full_general_vocab_size: int = 0
    skipped: dict[str, str] = field(default_factory=dict)

    def select(self, app_id: str | None, domain: str | None) -> ModelHandle:
        key = entity_key(self.scope, app_id, domain)
        model = self.specialized.get(key) if key is not None else None
        if model is None:
            return ModelHandle(None, self.general)
        return ModelHandle(key, model)

    def models(self):
        yield None, self.general
        yield from self.specialized.items()

    @property
    def reduction_factor(self) -> float:
        n = len(self.general.vocabulary)
        return self.full_general_vocab_size / n if n else float("inf")

    @property
    def loaded_feature_count(self) -> int:
        """Words the engine has to search for: tree-node features of every model."""
        return sum(len(tree_features(m)) for _, m in self.models())


def _labels_in(records, policy: LabelPolicy) -> set:
    out: set = set()
    for r in records:
        out |= policy_labels(policy, r.labels)
    return out


def _train_model(data: Dataset, policy: LabelPolicy, vc: VocabConfig, config: TrainConfig):
    vocab = build_vocabulary(data, vc.delims, min_count=vc.min_count, max_doc_frac=vc.max_doc_frac, mode=vc.mode)
    X = feature_matrix([extract_parse(r.payload, vocab) for r in data.records], len(vocab))
    labels = _labels_in(data.records, policy)
    if not labels:
        return BinaryRelevanceModel({}, vocab), X
    return train_binary_relevance(data, labels, vocab, config, X=X), X


def as_policy_dataset(data: Dataset, policy: LabelPolicy) -> Dataset:
    if policy is LabelPolicy.ALL:
        return data
    return data.subset(replace(r, labels=unknown_only(r.labels)) for r in data.records)


def train_registry(train: Dataset, scope: Scope = Scope.PER_APP, label_policy: LabelPolicy = LabelPolicy.UNKNOWN,
                   config: TrainConfig = TrainConfig(), vocab_config: VocabConfig = VocabConfig()) -> ModelRegistry:
    if not len(train):
        raise NoGeneralTrainingData("empty training set")
    data = as_policy_dataset(train, label_policy)
    specialized = {}
    skipped = {}
    for key, recs in group_by_entity(data, scope).items():
        if not eligible(recs, LabelPolicy.ALL):
            continue
        try:
            specialized[key], _ = _train_model(data.subset(recs), LabelPolicy.ALL, vocab_config, config)
        except EmptyVocabulary as exc:
            skipped[key] = str(exc)
            log.debug("no specialized model for %s: %s", key, exc)

    try:
        full, X = _train_model(data, LabelPolicy.ALL, vocab_config, config)
    except EmptyVocabulary as exc:
        raise NoGeneralTrainingData(str(exc)) from exc
    try:
        _, general = reduce_and_retrain(full, data, config, X=X)
    except EmptyReducedVocabulary:
        empty, _ = full.vocabulary.restrict(())
        general = BinaryRelevanceModel(full.label_trees, empty)
    return ModelRegistry(scope, label_policy, specialized, general, len(full.vocabulary), skipped)


def select_model(registry: ModelRegistry, packet: PacketRecord) -> ModelHandle:
    return registry.select(packet.app_id, packet.domain)


@dataclass(frozen=True)
class Coverage:
    specialized_count: int
    traffic_fraction: float
    leak_packet_fraction: float

    def __str__(self) -> str:
        return (f"{self.specialized_count} ({self.traffic_fraction:.1%} of traffic, "
                f"{self.leak_packet_fraction:.1%} of packets with PII)")


def coverage_stats(registry: ModelRegistry, data: Dataset) -> Coverage:
    n = leaks = hit = hit_leaks = 0
    for r in data.records:
        own = registry.select(r.app_id, r.domain).specialized
        leak = bool(policy_labels(registry.label_policy, r.labels))
        n += 1
        hit += own
        leaks += leak
        hit_leaks += own and leak
    return Coverage(len(registry.specialized), hit / n if n else 0.0, hit_leaks / leaks if leaks else 0.0)


# --- persistence ---------------------------------------------------------------

def _dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def save_registry(registry: ModelRegistry, directory: str | os.PathLike) -> None:
    os.makedirs(os.path.join(directory, "models"), exist_ok=True)
    os.makedirs(os.path.join(directory, "vocab"), exist_ok=True)
    entities = []
    for i, (key, model) in enumerate(registry.specialized.items()):
        vref = f"vocab/v{i:04d}.json"
        mref = f"models/m{i:04d}.json"
        _dump(model.vocabulary.to_json(), os.path.join(directory, vref))
        _dump(model.to_json(vref), os.path.join(directory, mref))
        entities.append({"key": key, "model": mref})
    _dump(registry.general.vocabulary.to_json(), os.path.join(directory, "vocab/general.json"))
    _dump(registry.general.to_json("vocab/general.json"), os.path.join(directory, "general.json"))
    _dump({
        "scope": registry.scope.value,
        "label_policy": registry.label_policy.value,
        "general": "general.json",
        "full_general_vocab_size": registry.full_general_vocab_size,
        "entities": entities,
        "skipped": registry.skipped,
    }, os.path.join(directory, "registry.json"))


def _load_model(directory, ref: str, custom) -> BinaryRelevanceModel:
    with open(os.path.join(directory, ref), encoding="utf-8") as fh:
        obj = json.load(fh)
    with open(os.path.join(directory, obj["vocab_ref"]), encoding="utf-8") as fh:
        vocab = Vocabulary.from_json(json.load(fh))
    return BinaryRelevanceModel.from_json(obj, vocab, custom)


def load_registry(directory: str | os.PathLike, custom_types=()) -> ModelRegistry:
    with open(os.path.join(directory, "registry.json"), encoding="utf-8") as fh:
        idx = json.load(fh)
    specialized = {e["key"]: _load_model(directory, e["model"], custom_types) for e in idx["entities"]}
    return ModelRegistry(
        Scope(idx["scope"]), LabelPolicy(idx["label_policy"]), specialized,
        _load_model(directory, idx["general"], custom_types),
        idx.get("full_general_vocab_size", 0), idx.get("skipped", {}))

