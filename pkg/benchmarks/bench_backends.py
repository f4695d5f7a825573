"""Compare the compiled Aho-Corasick scan loop with the pure-Python fallback.

    python3 benchmarks/bench_backends.py --payload-size 1500 --patterns 500 --iters 2000
"""
import argparse
import time

import numpy as np

from leakguard.bench import BenchSetup
from leakguard.matcher import BACKENDS


def measure(fn, payloads, iters):
    for p in payloads[:4]:
        fn(p)
    out = np.empty(iters)
    for i in range(iters):
        p = payloads[i % len(payloads)]
        t0 = time.perf_counter_ns()
        fn(p)
        out[i] = (time.perf_counter_ns() - t0) / 1000.0
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--payload-size", type=int, default=1500)
    ap.add_argument("--patterns", type=int, default=500)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    setup = BenchSetup(args.payload_size, args.patterns, args.seed)
    autos = {b: setup.automaton.with_backend(b) for b in BACKENDS}
    ref = [autos[BACKENDS[-1]].matched_ids(p) for p in setup.payloads]
    for b, a in autos.items():
        assert [a.matched_ids(p) for p in setup.payloads] == ref, f"{b} disagrees"

    print(f"payload {args.payload_size} bytes, {args.patterns} patterns, {args.iters} iterations (microseconds)")
    print(f"{'backend':<10} {'op':<12} {'median':>10} {'mean':>10} {'std':>10}")
    medians = {}
    for b, a in autos.items():
        for op in ("search", "matched_ids"):
            s = measure(getattr(a, op), setup.payloads, args.iters)
            medians[b, op] = float(np.median(s))
            print(f"{b:<10} {op:<12} {np.median(s):>10.2f} {s.mean():>10.2f} {s.std(ddof=1):>10.2f}")
    if "compiled" in autos:
        for op in ("search", "matched_ids"):
            print(f"speedup {op}: {medians['pure', op] / medians['compiled', op]:.1f}x")
    else:
        print("compiled backend not available; only the fallback was timed")


if __name__ == "__main__":
    main()
