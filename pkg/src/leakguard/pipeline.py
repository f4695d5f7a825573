"""Per-packet detection: app lookup, one automaton pass, hybrid merge, policy actions."""
from __future__ import annotations

import enum
import json
import random
import string
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .features import Mode
from .matcher import Automaton, FeaturePattern, PatternSet, PiiPattern
from .model import Direction, PacketRecord, PiiType, PortOutOfRange, pii_type
from .registry import ModelRegistry, Scope
from .tree import tree_features


class EngineNotLoaded(RuntimeError):
    pass


class PromptUnavailable(RuntimeError):
    pass


class ConnectionTable:
    """Source port -> app, shared between packet workers."""

    def __init__(self):
        self._entries: dict[int, str] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _check(port: int) -> None:
        if not 0 <= port <= 65535:
            raise PortOutOfRange(f"port {port}")

    def register(self, src_port: int, app_id: str) -> None:
        self._check(src_port)
        with self._lock:
            self._entries[src_port] = app_id

    def lookup(self, src_port: int) -> str | None:
        with self._lock:
            return self._entries.get(src_port)

    def close(self, src_port: int) -> None:
        self._check(src_port)
        with self._lock:
            self._entries.pop(src_port, None)

    def snapshot(self) -> dict[int, str]:
        with self._lock:
            return dict(self._entries)


def register_connection(table: ConnectionTable, src_port: int, app_id: str) -> None:
    table.register(src_port, app_id)


def lookup_app(table: ConnectionTable, src_port: int) -> str | None:
    return table.lookup(src_port)


def close_connection(table: ConnectionTable, src_port: int) -> None:
    table.close(src_port)


class Method(enum.Enum):
    STRING_MATCH = "StringMatch"
    CLASSIFIER = "Classifier"


@dataclass(frozen=True)
class PacketMeta:
    packet_id: int = 0
    src_port: int | None = None
    app_id: str | None = None
    domain: str | None = None
    direction: Direction = Direction.OUT

    @classmethod
    def of(cls, r: PacketRecord) -> "PacketMeta":
        return cls(r.id, r.src_port, r.app_id, r.domain, r.direction)


@dataclass(frozen=True)
class Detection:
    packet_id: int
    app: str | None
    pii_found: frozenset          # of (PiiType, Method)
    model_used: str
    elapsed_micros: int
    literals: Mapping = field(default_factory=dict)   # PiiType -> matched literals

    @property
    def types(self) -> frozenset:
        return frozenset(t for t, _ in self.pii_found)

    def method_of(self, t: PiiType) -> Method | None:
        for u, m in self.pii_found:
            if u == t:
                return m
        return None


class DetectionEngine:
    """Immutable automaton and models, shared by all workers.

    The automaton holds every predefined PII literal plus the distinct
    tree-feature literals of every loaded model; ``_slot_maps`` translates a
    matched feature slot into each model's local feature id.
    """

    def __init__(self, registry: ModelRegistry, pii_dictionary: Mapping, connections: ConnectionTable | None = None,
                 backend: str | None = None):
        self.registry = registry
        self.connections = connections if connections is not None else ConnectionTable()
        ps = PatternSet()
        for t in sorted(pii_dictionary):
            if t.predefined:
                for lit in pii_dictionary[t]:
                    ps.add_pii(t, lit if isinstance(lit, bytes) else lit.encode())
        slots: dict[tuple[bytes, int], int] = {}
        self._slot_maps: dict[int, dict[int, int]] = {}
        for _, model in registry.models():
            vocab = model.vocabulary
            if vocab.mode is not Mode.WRAPPED and tree_features(model):
                raise ValueError("substring detection needs delimiter-wrapped features")
            local = {}
            for fid in sorted(tree_features(model)):
                key = (vocab.literal(fid), vocab.anchor(fid))
                slot = slots.get(key)
                if slot is None:
                    slot = slots[key] = len(slots)
                    ps.add_feature(slot, *key)
                local[slot] = fid
            self._slot_maps[id(model)] = local
        self.automaton = Automaton(ps, backend)
        self.search_count = 0

    @property
    def feature_slots(self) -> int:
        return sum(1 for p in self.automaton.patterns if isinstance(p.kind, FeaturePattern))

    def model_name(self, entity: str | None) -> str:
        if entity is None:
            return "general"
        return ("app:" if self.registry.scope is Scope.PER_APP else "domain:") + entity


def inspect_packet(payload: bytes, meta: PacketMeta, engine: DetectionEngine | None) -> Detection:
    if engine is None or getattr(engine, "automaton", None) is None:
        raise EngineNotLoaded("no detection engine loaded")
    t0 = time.perf_counter_ns()
    app = None
    if meta.src_port is not None:
        app = engine.connections.lookup(meta.src_port)
    if app is None:
        app = meta.app_id
    if meta.direction is Direction.IN:
        return Detection(meta.packet_id, app, frozenset(), "general", (time.perf_counter_ns() - t0) // 1000)

    engine.search_count += 1
    pats = engine.automaton.patterns
    strings: dict[PiiType, list[bytes]] = {}
    slots = []
    for pid in engine.automaton.matched_ids(payload):
        p = pats[pid]
        if isinstance(p.kind, PiiPattern):
            strings.setdefault(p.kind.pii, []).append(p.literal)
        else:
            slots.append(p.kind.feature_id)

    handle = engine.registry.select(app, meta.domain)
    local = engine._slot_maps[id(handle.model)]
    fv = frozenset(local[s] for s in slots if s in local)
    found = {(t, Method.STRING_MATCH) for t in strings}
    for t in handle.model.predict(fv):
        if t not in strings:
            found.add((t, Method.CLASSIFIER))
    elapsed = (time.perf_counter_ns() - t0) // 1000
    return Detection(meta.packet_id, app, frozenset(found), engine.model_name(handle.entity), elapsed,
                     {t: tuple(v) for t, v in strings.items()})


def inspect_record(r: PacketRecord, engine: DetectionEngine) -> Detection:
    return inspect_packet(r.payload, PacketMeta.of(r), engine)


# --- policy ----------------------------------------------------------------------

class Action(enum.Enum):
    ALLOW = "allow"
    BLOCK = "block"
    HASH = "hash"


PROMPT = "prompt"


class PolicyStore:
    """Remembered (app, type) -> Action decisions with a default of Prompt or a fixed action."""

    def __init__(self, rules: Mapping | None = None, default: Action | str = PROMPT):
        self.rules: dict[tuple[str | None, PiiType], Action] = dict(rules or {})
        self.default = default
        self.pending: list[tuple[str | None, PiiType]] = []
        self._lock = threading.Lock()

    def get(self, app: str | None, t: PiiType) -> Action | None:
        with self._lock:
            return self.rules.get((app, t))

    def set(self, app: str | None, t: PiiType, action: Action) -> None:
        with self._lock:
            self.rules[(app, t)] = action

    def queue(self, app: str | None, t: PiiType) -> None:
        with self._lock:
            if (app, t) not in self.pending:
                self.pending.append((app, t))

    def to_json(self) -> dict:
        default = self.default.value if isinstance(self.default, Action) else self.default
        return {"default": default,
                "rules": [{"app": a, "type": t.name, "action": act.value}
                          for (a, t), act in sorted(self.rules.items(), key=lambda kv: (kv[0][0] or "", kv[0][1]))]}

    @classmethod
    def from_json(cls, obj: Mapping, custom=()) -> "PolicyStore":
        default = obj.get("default", PROMPT)
        rules = {(e["app"], pii_type(e["type"], custom)): Action(e["action"]) for e in obj.get("rules", [])}
        return cls(rules, default if default == PROMPT else Action(default))


@dataclass(frozen=True)
class ActionOutcome:
    forwarded: bool
    payload: bytes | None
    modified: bool
    pending: tuple = ()

    @property
    def disposition(self) -> str:
        return "Forwarded" if self.forwarded else "Dropped"


_ALNUM = string.ascii_letters + string.digits


def _random_fill(rng: random.Random, n: int) -> bytes:
    return "".join(rng.choice(_ALNUM) for _ in range(n)).encode()


def hash_replace(payload: bytes, literals, rng: random.Random) -> bytes:
    """Overwrite every occurrence of ``literals`` with random alphanumerics of equal length."""
    literals = [lit for lit in literals if lit]
    mask = bytearray(len(payload))
    for lit in literals:
        i = payload.find(lit)
        while i >= 0:
            mask[i:i + len(lit)] = b"\1" * len(lit)
            i = payload.find(lit, i + 1)
    while True:
        out = bytearray(payload)
        i, n = 0, len(payload)
        while i < n:
            if mask[i]:
                j = i
                while j < n and mask[j]:
                    j += 1
                out[i:j] = _random_fill(rng, j - i)
                i = j
            else:
                i += 1
        out = bytes(out)
        if not any(lit in out for lit in literals):
            return out


def _decide(app, t, store: PolicyStore, prompt_fn, streaming: bool):
    action = store.get(app, t)
    if action is not None:
        return action
    if isinstance(store.default, Action):
        return store.default
    if streaming:
        store.queue(app, t)
        return None
    if prompt_fn is None:
        raise PromptUnavailable(f"no rule for {app}/{t.name} and no prompt available")
    with store._lock:
        # another worker may have answered meanwhile
        action = store.rules.get((app, t))
        if action is None:
            action = prompt_fn(app, t)
            store.rules[(app, t)] = action
    return action


def apply_policy(payload: bytes, detection: Detection, store: PolicyStore,
                 prompt_fn: Callable[[str | None, PiiType], Action] | None = None,
                 rng: random.Random | None = None, streaming: bool = False) -> ActionOutcome:
    """Apply the remembered or prompted action for each detected (app, type).

    Block wins over everything. A hash rule on a type found only by the
    classifier has no byte span to overwrite, so it blocks. In streaming mode
    undecided types are queued and the packet goes through flagged.
    """
    if not detection.pii_found:
        return ActionOutcome(True, payload, False)
    app = detection.app
    to_hash: list[bytes] = []
    pending = []
    blocked = False
    for t in sorted(detection.types):
        action = _decide(app, t, store, prompt_fn, streaming)
        if action is None:
            pending.append(t)
        elif action is Action.BLOCK:
            blocked = True
        elif action is Action.HASH:
            lits = detection.literals.get(t)
            if detection.method_of(t) is Method.STRING_MATCH and lits:
                to_hash.extend(lits)
            else:
                blocked = True
    if blocked:
        return ActionOutcome(False, None, False, tuple(pending))
    if to_hash:
        out = hash_replace(payload, to_hash, rng or random.Random(0))
        return ActionOutcome(True, out, out != payload, tuple(pending))
    return ActionOutcome(True, payload, False, tuple(pending))


def log_entry(detection: Detection, outcome: ActionOutcome | None = None) -> dict:
    if outcome is None:
        action = "none"
    elif not outcome.forwarded:
        action = "block"
    elif outcome.modified:
        action = "hash"
    elif outcome.pending:
        action = "pending"
    else:
        action = "allow" if detection.pii_found else "none"
    return {
        "packet_id": detection.packet_id,
        "app": detection.app,
        "types": [{"type": t.name, "method": m.value} for t, m in sorted(detection.pii_found, key=lambda x: x[0])],
        "model": detection.model_used,
        "action": action,
        "us": int(detection.elapsed_micros),
    }


def dumps_log_entry(detection: Detection, outcome: ActionOutcome | None = None) -> str:
    return json.dumps(log_entry(detection, outcome), sort_keys=True)
