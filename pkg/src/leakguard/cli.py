"""Command-line interface: gen, train, detect, eval, graph, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .model import DatasetError, load_pii_dictionary, parse_dataset, write_dataset

log = logging.getLogger("leakguard")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
POLICY_SHORTHANDS = {"all-allow": "allow", "all-block": "block", "all-hash": "hash"}
PROMPT_TEXT = "[a]llow/[b]lock/[h]ash for {app}/{type}? "


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_dataset(path):
    try:
        return parse_dataset(path)
    except (OSError, DatasetError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc


# --- gen ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    from .tracegen import GenConfig, format_summary, generate, summarize
    try:
        cfg = GenConfig() if args.config == "default" else GenConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        data = generate(cfg)
    except (OSError, ValueError, TypeError) as exc:
        raise DataError(f"bad generator config {args.config}: {exc}") from exc
    write_dataset(data, args.out)
    print(format_summary(summarize(data)))
    return EXIT_OK


# --- train -------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .registry import LabelPolicy, NoGeneralTrainingData, Scope, coverage_stats, save_registry, train_registry
    data = _read_dataset(args.data)
    try:
        reg = train_registry(data, Scope(args.scope), LabelPolicy(args.labels))
    except NoGeneralTrainingData as exc:
        raise DataError(str(exc)) from exc
    save_registry(reg, args.out)
    print(f"specialized classifiers: {coverage_stats(reg, data)}")
    print(f"general vocabulary: {reg.full_general_vocab_size} -> {len(reg.general.vocabulary)} words "
          f"(reduction factor {reg.reduction_factor:.1f}x)")
    print(f"loaded feature count: {reg.loaded_feature_count}")
    return EXIT_OK


# --- detect ------------------------------------------------------------------------

def _load_policy(source: str, custom):
    from .pipeline import Action, PolicyStore
    if source in POLICY_SHORTHANDS:
        return PolicyStore(default=Action(POLICY_SHORTHANDS[source]))
    try:
        with open(source, encoding="utf-8") as fh:
            return PolicyStore.from_json(json.load(fh), custom)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read policy {source}: {exc}") from exc


def _stdin_prompt(app, t):
    from .pipeline import Action, PromptUnavailable
    answers = {"a": Action.ALLOW, "b": Action.BLOCK, "h": Action.HASH}
    sys.stderr.write(PROMPT_TEXT.format(app=app, type=t.name))
    sys.stderr.flush()
    while True:
        line = sys.stdin.readline()
        if not line:
            raise PromptUnavailable(f"no answer for {app}/{t.name}")
        choice = line.strip().lower()[:1]
        if choice in answers:
            return answers[choice]


def cmd_detect(args) -> int:
    from .pipeline import (PROMPT, Action, DetectionEngine, PacketMeta, PolicyStore, PromptUnavailable,
                           apply_policy, inspect_packet, log_entry)
    from .registry import load_registry
    data = _read_dataset(args.data)
    if args.pii:
        try:
            dictionary = load_pii_dictionary(args.pii)
        except (OSError, ValueError, DatasetError) as exc:
            raise DataError(f"cannot read PII dictionary {args.pii}: {exc}") from exc
    else:
        dictionary = data.pii_dictionary
    if not dictionary:
        raise DataError("no PII dictionary: pass --pii or use a dataset with a dictionary header")
    custom = tuple(t for t in dictionary if t.custom)
    try:
        registry = load_registry(args.models, custom)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load models from {args.models}: {exc}") from exc

    if args.interactive:
        store, prompt_fn, workers = PolicyStore(default=PROMPT), _stdin_prompt, 1
    else:
        store = _load_policy(args.policy, custom) if args.policy else PolicyStore(default=Action.ALLOW)
        prompt_fn, workers = None, max(1, args.workers)

    engine = DetectionEngine(registry, dictionary)
    for r in data.records:
        engine.connections.register(r.src_port, r.app_id)

    def inspect(r):
        return inspect_packet(r.payload, PacketMeta(r.id, r.src_port, r.app_id, r.domain, r.direction), engine)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            detections = list(pool.map(inspect, data.records))
    else:
        detections = map(inspect, data.records)

    rng = random.Random(args.seed)
    counts = {"packets": 0, "detections": 0, "forwarded": 0, "dropped": 0, "hashed": 0}
    forwarded = []
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        for r, det in zip(data.records, detections):
            try:
                outcome = apply_policy(r.payload, det, store, prompt_fn, rng)
            except PromptUnavailable as exc:
                raise DataError(str(exc)) from exc
            counts["packets"] += 1
            if det.pii_found:
                counts["detections"] += 1
                if log_fh:
                    log_fh.write(json.dumps(log_entry(det, outcome), sort_keys=True) + "\n")
            if outcome.forwarded:
                counts["forwarded"] += 1
                counts["hashed"] += outcome.modified
                forwarded.append(replace(r, payload=outcome.payload) if outcome.modified else r)
            else:
                counts["dropped"] += 1
    finally:
        if log_fh:
            log_fh.close()
    if args.out:
        write_dataset(data.subset(forwarded), args.out)
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    for (app, t), action in sorted(store.rules.items(), key=lambda kv: (kv[0][0] or "", kv[0][1])):
        print(f"rule {app}/{t.name}: {action.value}")
    return EXIT_OK


# --- eval --------------------------------------------------------------------------

def cmd_eval(args) -> int:
    from .evaluation import METHODS, SCOPES, EvalScheme, run_method_comparison
    data = _read_dataset(args.data)
    if not len(data):
        raise DataError("dataset is empty")
    methods = METHODS if args.method == "all" else (int(args.method),)
    schemes = tuple(EvalScheme) if args.scheme == "all" else (EvalScheme(args.scheme),)
    scopes = SCOPES if args.scope == "all" else (args.scope,)
    cmp = run_method_comparison(data, seed=args.seed, k=args.k, methods=methods, schemes=schemes, scopes=scopes)
    print(cmp.format())
    if args.verbose:
        for rep in cmp.reports.values():
            print()
            print(rep.format())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(cmp.dumps() + "\n")
    return EXIT_OK


# --- graph -------------------------------------------------------------------------

def cmd_graph(args) -> int:
    from .graph import IoFailure, build_bipartite, detect_communities, export_graph, project_domains
    data = _read_dataset(args.data)
    g = project_domains(build_bipartite(data))
    comm = detect_communities(g, args.seed) if args.communities and g.nodes else None
    try:
        export_graph(g, comm, args.format, args.out)
    except IoFailure as exc:
        raise DataError(str(exc)) from exc
    print(f"domains={len(g.nodes)} edges={len(g.edges)}", end="")
    if comm is not None:
        print(f" communities={len(comm.communities)} modularity={comm.modularity:.4f}", end="")
    print()
    return EXIT_OK


# --- bench -------------------------------------------------------------------------

def cmd_bench(args) -> int:
    from .bench import format_bench, run_bench
    if args.iters < 1 or args.payload_size < 1 or args.patterns < 1:
        raise UsageError("--iters, --payload-size and --patterns must be positive")
    rows = run_bench(args.payload_size, args.patterns, args.iters, args.seed)
    print(format_bench(rows, args.payload_size, args.patterns, args.iters))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leakguard", description="Detect PII exposures in packet traces.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a labeled synthetic trace")
    g.add_argument("--config", required=True, help="generator config JSON, or 'default'")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train specialized and general classifiers")
    t.add_argument("--data", required=True)
    t.add_argument("--scope", choices=("per-app", "per-domain"), default="per-app")
    t.add_argument("--labels", choices=("all", "unknown"), default="unknown")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="run detection and policy actions over a trace")
    d.add_argument("--data", required=True)
    d.add_argument("--models", required=True)
    d.add_argument("--pii", help="PII dictionary JSON (default: the dataset header)")
    mode = d.add_mutually_exclusive_group()
    mode.add_argument("--interactive", action="store_true")
    mode.add_argument("--policy", help="policy JSON, or all-allow / all-block / all-hash")
    d.add_argument("--log", help="detection log JSONL")
    d.add_argument("--out", help="forwarded (possibly modified) trace")
    d.add_argument("--workers", type=int, default=1)
    d.add_argument("--seed", type=int, default=0, help="seed for replacement strings")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="k-fold comparison of the six methods")
    e.add_argument("--data", required=True)
    e.add_argument("--method", choices=("1", "2", "3", "4", "5", "6", "all"), default="all")
    e.add_argument("--scheme", choices=("binary", "leak", "combined", "all"), default="all")
    e.add_argument("--scope", choices=("per-app", "per-domain", "general", "all"), default="all")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--k", type=int, default=5)
    e.add_argument("--json", help="write the full report as JSON")
    e.set_defaults(func=cmd_eval)

    gr = sub.add_parser("graph", help="domain similarity graph export")
    gr.add_argument("--data", required=True)
    gr.add_argument("--format", choices=("dot", "json"), default="dot")
    gr.add_argument("--communities", action="store_true")
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--out", required=True)
    gr.set_defaults(func=cmd_graph)

    b = sub.add_parser("bench", help="per-packet latency benchmark")
    b.add_argument("--payload-size", type=int, default=1500)
    b.add_argument("--patterns", type=int, default=500)
    b.add_argument("--iters", type=int, default=10000)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"leakguard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"leakguard: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"leakguard: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
