"""Word features for the classifiers.

Payloads are split into words at delimiter bytes. In delimiter-wrapped mode a
feature literal keeps the bytes flanking the word (``/profile?`` rather than
``profile``), which lets a plain substring search find exactly the words a
tokenizer would produce. Two extractors are provided: ``extract_parse``
tokenizes the payload, ``extract_dpi`` runs one automaton pass.
"""
from __future__ import annotations

import base64
import enum
import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .matcher import ANCHOR_END, ANCHOR_START, Automaton, FeaturePattern, PatternSet
from .model import Dataset

DEFAULT_DELIMITERS = frozenset(b'?=:&/ ,;\r\n"')

FeatureVector = frozenset  # of feature ids


class Mode(enum.Enum):
    BARE = "bare"
    WRAPPED = "wrapped"


class EmptyVocabulary(ValueError):
    pass


class AutomatonVocabMismatch(ValueError):
    pass


class Token(NamedTuple):
    word: bytes
    left: int | None   # None = payload boundary
    right: int | None


def _token_regex(delims: frozenset) -> re.Pattern:
    if not delims:
        raise ValueError("delimiter set must be nonempty")
    cls = b"".join(re.escape(bytes([d])) for d in sorted(delims))
    return re.compile(b"[^" + cls + b"]+")


_regex_cache: dict = {}


def _regex(delims) -> re.Pattern:
    delims = frozenset(delims)
    rx = _regex_cache.get(delims)
    if rx is None:
        rx = _regex_cache[delims] = _token_regex(delims)
    return rx


def tokenize(payload: bytes, delims=DEFAULT_DELIMITERS) -> list[Token]:
    n = len(payload)
    out = []
    for m in _regex(delims).finditer(payload):
        s, e = m.span()
        out.append(Token(m.group(), payload[s - 1] if s else None, payload[e] if e < n else None))
    return out


def wrap(tok: Token) -> bytes:
    left = b"" if tok.left is None else bytes((tok.left,))
    right = b"" if tok.right is None else bytes((tok.right,))
    return left + tok.word + right


def token_key(tok: Token, mode: Mode) -> bytes:
    return wrap(tok) if mode is Mode.WRAPPED else tok.word


@dataclass(frozen=True)
class FeatureKey:
    feature_id: int
    literal: bytes
    mode: Mode


class Vocabulary:
    """Feature literals with dense ids assigned in byte-lexicographic order."""

    def __init__(self, literals: Iterable[bytes], mode: Mode, delims=DEFAULT_DELIMITERS):
        lits = sorted(set(literals))
        self.mode = mode
        self.delims = frozenset(delims)
        self.entries = tuple(FeatureKey(i, lit, mode) for i, lit in enumerate(lits))
        self.index = {lit: i for i, lit in enumerate(lits)}
        self.digest = hashlib.sha1(
            mode.value.encode() + bytes(sorted(self.delims)) + b"\0".join(lits)).hexdigest()

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.digest == other.digest

    def __hash__(self) -> int:
        return hash(self.digest)

    def literal(self, feature_id: int) -> bytes:
        return self.entries[feature_id].literal

    def anchor(self, feature_id: int) -> int:
        """Edge constraint for substring search of a wrapped entry.

        A wrapped literal that does not start (end) with a delimiter came from
        a word touching the payload start (end), so it only counts there.
        """
        if self.mode is Mode.BARE:
            return 0
        lit = self.entries[feature_id].literal
        a = 0
        if lit[0] not in self.delims:
            a |= ANCHOR_START
        if lit[-1] not in self.delims:
            a |= ANCHOR_END
        return a

    def restrict(self, feature_ids: Iterable[int]) -> tuple["Vocabulary", dict]:
        """Sub-vocabulary over ``feature_ids`` and the old-id -> new-id map."""
        keep = sorted(set(feature_ids))
        sub = Vocabulary((self.entries[i].literal for i in keep), self.mode, self.delims)
        return sub, {i: sub.index[self.entries[i].literal] for i in keep}

    def feature_patterns(self, pattern_set: PatternSet | None = None) -> PatternSet:
        ps = pattern_set if pattern_set is not None else PatternSet()
        for e in self.entries:
            ps.add_feature(e.feature_id, e.literal, self.anchor(e.feature_id))
        return ps

    def automaton(self, backend: str | None = None, extra: PatternSet | None = None) -> Automaton:
        """Automaton over this vocabulary's literals (after any ``extra`` patterns)."""
        ps = self.feature_patterns(extra)
        a = Automaton(ps, backend)
        a.feature_digest = self.digest
        return a

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "delimiters_b64": base64.b64encode(bytes(sorted(self.delims))).decode(),
            "entries": [{"id": e.feature_id, "literal_b64": base64.b64encode(e.literal).decode()}
                        for e in self.entries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        delims = base64.b64decode(obj["delimiters_b64"]) if "delimiters_b64" in obj else DEFAULT_DELIMITERS
        entries = sorted(obj["entries"], key=lambda e: e["id"])
        vocab = cls((base64.b64decode(e["literal_b64"]) for e in entries), Mode(obj["mode"]), delims)
        if [e["id"] for e in entries] != list(range(len(vocab))):
            raise ValueError("vocabulary ids are not dense or literals repeat")
        return vocab

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def forbidden_words(pii_literals: Iterable[bytes], delims) -> set[bytes]:
    """PII literals plus the word pieces a tokenizer would cut them into."""
    out = set()
    for lit in pii_literals:
        out.add(lit)
        out.update(t.word for t in tokenize(lit, delims))
    return out


def build_vocabulary(train: Dataset, delims=DEFAULT_DELIMITERS, *, min_count: int = 2,
                     max_doc_frac: float = 0.9, mode: Mode = Mode.WRAPPED,
                     pii_literals: Iterable[bytes] | None = None) -> Vocabulary:
    """Vocabulary from training payloads filtered by document frequency.

    Words equal to a PII literal (or to a delimiter-split piece of one) never
    become features. ``pii_literals`` defaults to every literal in the
    dataset's PII dictionary.
    """
    if not len(train):
        raise EmptyVocabulary("no training records")
    if pii_literals is None:
        pii_literals = [lit for lits in train.literals().values() for lit in lits]
    banned = forbidden_words(pii_literals, delims)
    df: Counter = Counter()
    words: dict[bytes, bytes] = {}
    for r in train.records:
        keys = set()
        for tok in tokenize(r.payload, delims):
            if tok.word in banned:
                continue
            k = token_key(tok, mode)
            keys.add(k)
            words[k] = tok.word
        df.update(keys)
    cap = max_doc_frac * len(train)
    kept = [k for k, c in df.items() if min_count <= c <= cap]
    if not kept:
        raise EmptyVocabulary("no word survives the frequency filter")
    return Vocabulary(kept, mode, delims)


def extract_parse(payload: bytes, vocab: Vocabulary, delims=None) -> FeatureVector:
    index = vocab.index
    mode = vocab.mode
    found = set()
    for tok in tokenize(payload, vocab.delims if delims is None else delims):
        fid = index.get(token_key(tok, mode))
        if fid is not None:
            found.add(fid)
    return frozenset(found)


def extract_dpi(payload: bytes, vocab: Vocabulary, automaton: Automaton) -> FeatureVector:
    if getattr(automaton, "feature_digest", None) != vocab.digest:
        raise AutomatonVocabMismatch("automaton was not compiled from this vocabulary")
    pats = automaton.patterns
    return frozenset(pats[pid].kind.feature_id for pid in automaton.matched_ids(payload)
                     if isinstance(pats[pid].kind, FeaturePattern))
