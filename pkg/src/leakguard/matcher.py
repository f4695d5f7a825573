"""Single-pass multi-pattern exact matching (Aho-Corasick) over raw bytes.

One automaton holds both the predefined-PII literals and the classifier
feature literals, so a packet is scanned once for everything. The scan loop
runs in a compiled extension when it is built; otherwise a pure-Python loop
over the same tables is used. Set ``LEAKGUARD_PURE=1`` to force the fallback.
"""
from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _ac_pure
from .model import PiiType

try:
    if os.environ.get("LEAKGUARD_PURE"):
        raise ImportError("pure backend forced")
    from . import _ackernel
except ImportError:
    _ackernel = None

BACKENDS = ("compiled", "pure") if _ackernel is not None else ("pure",)
DEFAULT_BACKEND = BACKENDS[0]

# anchor bits: match must start at payload offset 0 / end at the last byte
ANCHOR_START = 1
ANCHOR_END = 2


class EmptyPattern(ValueError):
    pass


class DuplicatePatternId(ValueError):
    pass


@dataclass(frozen=True)
class PiiPattern:
    pii: PiiType


@dataclass(frozen=True)
class FeaturePattern:
    feature_id: int


@dataclass(frozen=True)
class Pattern:
    pattern_id: int
    literal: bytes
    kind: PiiPattern | FeaturePattern
    anchor: int = 0


class Match(NamedTuple):
    pattern_id: int
    end_offset: int


class PatternSet:
    """Ordered patterns with dense ids from 0."""

    def __init__(self, patterns: Iterable[Pattern] = ()):
        self.patterns: list[Pattern] = []
        for p in patterns:
            self._append(p)

    def _append(self, p: Pattern) -> None:
        if not p.literal:
            raise EmptyPattern(f"pattern {p.pattern_id} has an empty literal")
        if p.pattern_id != len(self.patterns):
            if 0 <= p.pattern_id < len(self.patterns):
                raise DuplicatePatternId(p.pattern_id)
            raise ValueError(f"pattern ids must be dense from 0, got {p.pattern_id}")
        self.patterns.append(p)

    def add(self, literal: bytes, kind, anchor: int = 0) -> int:
        pid = len(self.patterns)
        self._append(Pattern(pid, bytes(literal), kind, anchor))
        return pid

    def add_pii(self, pii: PiiType, literal: bytes) -> int:
        return self.add(literal, PiiPattern(pii))

    def add_feature(self, feature_id: int, literal: bytes, anchor: int = 0) -> int:
        return self.add(literal, FeaturePattern(feature_id), anchor)

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)

    def __getitem__(self, i: int) -> Pattern:
        return self.patterns[i]


class Automaton:
    """Compiled trie with failure links, flattened to a dense transition table.

    ``delta[state * 256 + byte]`` is the next state; ``out_ids[out_start[s]:
    out_start[s + 1]]`` lists every pattern ending at state ``s`` (its own and
    those inherited through failure links), sorted by pattern id.
    """

    def __init__(self, pattern_set: PatternSet, backend: str | None = None):
        backend = backend or DEFAULT_BACKEND
        if backend not in BACKENDS:
            raise ValueError(f"backend {backend!r} unavailable (have {BACKENDS})")
        self.backend = backend
        self.patterns: tuple[Pattern, ...] = tuple(pattern_set)
        self._compile()
        self._pure_tables = None

    @property
    def pattern_count(self) -> int:
        return len(self.patterns)

    def _compile(self) -> None:
        goto: list[dict[int, int]] = [{}]
        own: list[list[int]] = [[]]
        for p in self.patterns:
            s = 0
            for b in p.literal:
                nxt = goto[s].get(b)
                if nxt is None:
                    nxt = len(goto)
                    goto[s][b] = nxt
                    goto.append({})
                    own.append([])
                s = nxt
            own[s].append(p.pattern_id)

        n = len(goto)
        delta = np.zeros((n, 256), dtype=np.int32)
        fail = [0] * n
        outputs: list[list[int]] = [[] for _ in range(n)]
        queue = deque()
        for b, s in goto[0].items():
            delta[0, b] = s
            queue.append(s)
        while queue:
            s = queue.popleft()
            f = fail[s]
            delta[s] = delta[f]
            outputs[s] = sorted(own[s] + outputs[f])
            for b, t in goto[s].items():
                fail[t] = delta[f, b]
                delta[s, b] = t
                queue.append(t)

        out_start = np.zeros(n + 1, dtype=np.int32)
        np.cumsum([len(o) for o in outputs], out=out_start[1:])
        self.delta = delta.reshape(-1)
        self.out_start = out_start
        self.out_ids = np.fromiter((pid for o in outputs for pid in o), dtype=np.int32,
                                   count=int(out_start[-1]))
        self.pat_len = np.array([len(p.literal) for p in self.patterns], dtype=np.int32)
        self.anchor = np.array([p.anchor for p in self.patterns], dtype=np.uint8)
        self.state_count = n

    def _pure(self):
        if self._pure_tables is None:
            self._pure_tables = (self.delta.tolist(), self.out_start.tolist(),
                                 self.out_ids.tolist(), self.pat_len.tolist(),
                                 self.anchor.tolist())
        return self._pure_tables

    def search(self, payload: bytes) -> list[Match]:
        """Every occurrence of every literal, ordered by (end_offset, pattern_id)."""
        if not payload or not self.patterns:
            return []
        if self.backend == "compiled":
            raw = _ackernel.search(self.delta, self.out_start, self.out_ids, payload)
        else:
            d, os_, oi, _, _ = self._pure()
            raw = _ac_pure.search(d, os_, oi, payload)
        return [Match(pid, end) for pid, end in raw]

    def matched_ids(self, payload: bytes) -> list[int]:
        """Distinct pattern ids found in one pass, honoring pattern anchors."""
        if not payload or not self.patterns:
            return []
        if self.backend == "compiled":
            return _ackernel.matched(self.delta, self.out_start, self.out_ids,
                                     self.pat_len, self.anchor, payload)
        d, os_, oi, pl, an = self._pure()
        return _ac_pure.matched(d, os_, oi, pl, an, payload)

    def with_backend(self, backend: str) -> "Automaton":
        other = object.__new__(Automaton)
        other.__dict__.update(self.__dict__)
        if backend not in BACKENDS:
            raise ValueError(f"backend {backend!r} unavailable (have {BACKENDS})")
        other.backend = backend
        return other


def build_automaton(pattern_set: PatternSet | Sequence[Pattern], backend: str | None = None) -> Automaton:
    if not isinstance(pattern_set, PatternSet):
        pattern_set = PatternSet(pattern_set)
    return Automaton(pattern_set, backend)


def search(automaton: Automaton, payload: bytes) -> list[Match]:
    return automaton.search(payload)


def match_pii(automaton: Automaton, payload: bytes) -> set[PiiType]:
    found = set()
    for pid in automaton.matched_ids(payload):
        kind = automaton.patterns[pid].kind
        if isinstance(kind, PiiPattern):
            found.add(kind.pii)
    return found


def pii_pattern_set(literals: dict) -> PatternSet:
    """PatternSet holding every literal of every PII type (``{type: [bytes]}``)."""
    ps = PatternSet()
    for t in sorted(literals):
        for lit in literals[t]:
            ps.add_pii(t, lit if isinstance(lit, bytes) else lit.encode())
    return ps
