"""Per-packet latency of feature extraction and multi-label prediction."""
from __future__ import annotations

import random
import statistics
import string
import time
from dataclasses import dataclass

import numpy as np

from .features import DEFAULT_DELIMITERS, Mode, Vocabulary, extract_dpi, extract_parse
from .matcher import BACKENDS
from .model import UNKNOWN_TYPES
from .tree import BinaryRelevanceModel, TrainConfig, feature_matrix, train_tree_matrix


@dataclass(frozen=True)
class Timing:
    name: str
    median_us: float
    mean_us: float
    std_us: float

    def row(self) -> str:
        return f"{self.name:<32} {self.median_us:>10.2f} {self.mean_us:>10.2f} {self.std_us:>10.2f}"


def _time(fn, args_list, iters: int) -> np.ndarray:
    samples = np.empty(iters)
    n = len(args_list)
    clock = time.perf_counter_ns
    for i in range(iters):
        a = args_list[i % n]
        t0 = clock()
        fn(a)
        samples[i] = (clock() - t0) / 1000.0
    return samples


def _summary(name: str, samples: np.ndarray) -> Timing:
    std = statistics.stdev(samples) if len(samples) > 1 else 0.0
    return Timing(name, float(np.median(samples)), float(samples.mean()), float(std))


class BenchSetup:
    """Synthetic vocabulary of wrapped key literals, payloads that use some of them, and a trained model."""

    def __init__(self, payload_size: int = 1500, patterns: int = 500, seed: int = 0, n_payloads: int = 64):
        if payload_size < 1 or patterns < 1:
            raise ValueError("payload size and pattern count must be positive")
        rng = random.Random(seed)
        words: set[str] = set()
        while len(words) < patterns:
            words.add("".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(3, 10))))
        self.words = sorted(words)
        self.vocab = Vocabulary((f"&{w}=".encode() for w in self.words), Mode.WRAPPED, DEFAULT_DELIMITERS)
        self.automaton = self.vocab.automaton()
        self.payloads = [self._payload(rng, payload_size) for _ in range(n_payloads)]
        self.model = self._model(rng)

    def _payload(self, rng: random.Random, size: int) -> bytes:
        head = "POST /api/v1/event HTTP/1.1\r\nHost: ads.example.com\r\n\r\nv=1"
        parts = [head]
        n = len(head)
        while n < size:
            key = rng.choice(self.words) if rng.random() < 0.3 else \
                "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(3, 10)))
            val = "".join(rng.choice(string.hexdigits.lower()) for _ in range(rng.randint(4, 16)))
            s = f"&{key}={val}"
            parts.append(s)
            n += len(s)
        return "".join(parts).encode()[:size]

    def _model(self, rng: random.Random) -> BinaryRelevanceModel:
        n = len(self.vocab)
        samples = []
        for _ in range(400):
            samples.append(frozenset(rng.sample(range(n), min(n, 30))))
        X = feature_matrix(samples, n)
        trees = {}
        for t in UNKNOWN_TYPES:
            keys = rng.sample(range(n), min(n, 3))
            y = np.array([any(k in fv for k in keys) for fv in samples])
            trees[t] = train_tree_matrix(X, y, TrainConfig())
        return BinaryRelevanceModel(trees, self.vocab)


def run_bench(payload_size: int = 1500, patterns: int = 500, iters: int = 10000, seed: int = 0) -> list[Timing]:
    if iters < 1:
        raise ValueError("iters must be >= 1")
    s = BenchSetup(payload_size, patterns, seed)
    vocab, auto = s.vocab, s.automaton
    out = [
        _summary("DPI extraction", _time(lambda p: extract_dpi(p, vocab, auto), s.payloads, iters)),
        _summary("parse-based extraction", _time(lambda p: extract_parse(p, vocab), s.payloads, iters)),
    ]
    vectors = [extract_dpi(p, vocab, auto) for p in s.payloads]
    out.append(_summary("multi-label prediction", _time(s.model.predict, vectors, iters)))
    for b in BACKENDS:
        ab = auto.with_backend(b)
        out.append(_summary(f"DPI extraction [{b}]", _time(lambda p: extract_dpi(p, vocab, ab), s.payloads,
                                                           iters if b != "pure" else max(1, iters // 10))))
    return out


def format_bench(rows: list[Timing], payload_size: int, patterns: int, iters: int) -> str:
    lines = [f"payload {payload_size} bytes, {patterns} patterns, {iters} iterations (microseconds)",
             f"{'step':<32} {'median':>10} {'mean':>10} {'std':>10}"]
    lines += [r.row() for r in rows]
    return "\n".join(lines)
