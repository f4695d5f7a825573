"""App -> domain leak graph, domain similarity projection and modularity communities."""
from __future__ import annotations

import hashlib
import json
import os
import random
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations

from .model import Dataset, Direction, pii_type


class EmptyGraph(ValueError):
    pass


class IoFailure(OSError):
    pass


@dataclass
class BipartiteLeakGraph:
    app_nodes: set
    domain_nodes: set
    edges: dict          # (app, domain) -> frozenset of PiiType

    def apps_of(self, domain: str) -> set:
        return {a for a, d in self.edges if d == domain}


@dataclass
class DomainSimilarityGraph:
    nodes: dict          # domain -> frozenset of PiiType received
    edges: dict          # (d1, d2) with d1 < d2 -> common leaking apps

    def weight(self, a: str, b: str) -> int:
        return self.edges.get((a, b) if a < b else (b, a), 0)

    def __eq__(self, other) -> bool:
        return isinstance(other, DomainSimilarityGraph) and self.nodes == other.nodes and self.edges == other.edges


@dataclass
class CommunityAssignment:
    membership: dict     # domain -> community id (dense from 0)
    modularity: float
    history: list = field(default_factory=list)   # modularity at the start and after every local-move sweep

    @property
    def communities(self) -> list[list[str]]:
        out: dict[int, list[str]] = defaultdict(list)
        for n, c in sorted(self.membership.items()):
            out[c].append(n)
        return [out[c] for c in sorted(out)]


def build_bipartite(data: Dataset) -> BipartiteLeakGraph:
    """Edge per (app, domain) pair with at least one outgoing leak; records without a domain are skipped."""
    apps, domains = set(), set()
    edges: dict = defaultdict(frozenset)
    for r in data.records:
        if r.domain is None:
            continue
        apps.add(r.app_id)
        domains.add(r.domain)
        if r.labels and r.direction is Direction.OUT:
            edges[(r.app_id, r.domain)] |= r.labels
    return BipartiteLeakGraph(apps, domains, dict(sorted(edges.items())))


def project_domains(bg: BipartiteLeakGraph) -> DomainSimilarityGraph:
    """Domains joined by the number of apps that leak to both."""
    apps_of: dict[str, set] = defaultdict(set)
    received: dict[str, frozenset] = {d: frozenset() for d in bg.domain_nodes}
    for (a, d), types in bg.edges.items():
        apps_of[d].add(a)
        received[d] = received.get(d, frozenset()) | types
    edges = {}
    for d1, d2 in combinations(sorted(apps_of), 2):
        w = len(apps_of[d1] & apps_of[d2])
        if w:
            edges[(d1, d2)] = w
    return DomainSimilarityGraph(dict(sorted(received.items())), edges)


# --- modularity --------------------------------------------------------------------

def modularity(g: DomainSimilarityGraph, membership: dict) -> float:
    """Weighted modularity: sum over communities of in/m - (tot/2m)^2; 0 when there are no edges."""
    m = float(sum(g.edges.values()))
    if m == 0:
        return 0.0
    inside: dict = defaultdict(float)
    tot: dict = defaultdict(float)
    for (a, b), w in g.edges.items():
        tot[membership[a]] += w
        tot[membership[b]] += w
        if membership[a] == membership[b]:
            inside[membership[a]] += w
    return sum(inside[c] / m - (tot[c] / (2 * m)) ** 2 for c in tot)


class _Level:
    """Symmetric weighted graph over 0..n-1; ``adj[i][i]`` holds twice the internal weight."""

    def __init__(self, n: int, adj: list[dict]):
        self.n = n
        self.adj = adj
        self.k = [sum(a.values()) for a in adj]
        self.m2 = sum(self.k)


def _local_moves(level: _Level, order: list[int], after_sweep) -> tuple[list[int], bool]:
    comm = list(range(level.n))
    tot = list(level.k)
    m2 = level.m2
    moved_any = False
    while True:
        moved = False
        for i in order:
            ki = level.k[i]
            links: dict[int, float] = defaultdict(float)
            for j, w in level.adj[i].items():
                if j != i:
                    links[comm[j]] += w
            old = comm[i]
            tot[old] -= ki
            best, best_gain = old, links.get(old, 0.0) - tot[old] * ki / m2
            for c in sorted(links):
                gain = links[c] - tot[c] * ki / m2
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            comm[i] = best
            tot[best] += ki
            if best != old:
                moved = moved_any = True
        if not moved:
            return comm, moved_any
        after_sweep(comm)


def _relabel(comm: list[int]) -> list[int]:
    ids: dict[int, int] = {}
    return [ids.setdefault(c, len(ids)) for c in comm]


def detect_communities(g: DomainSimilarityGraph, seed: int = 0) -> CommunityAssignment:
    """Louvain: greedy local moves to a fixpoint, then collapse communities and repeat."""
    nodes = sorted(g.nodes)
    if not nodes:
        raise EmptyGraph("graph has no nodes")
    index = {n: i for i, n in enumerate(nodes)}
    adj: list[dict] = [defaultdict(float) for _ in nodes]
    for (a, b), w in g.edges.items():
        adj[index[a]][index[b]] += w
        adj[index[b]][index[a]] += w
    level = _Level(len(nodes), adj)
    node_comm = list(range(len(nodes)))
    history = [modularity(g, {n: node_comm[i] for i, n in enumerate(nodes)})]
    if level.m2 == 0:
        return CommunityAssignment({n: i for i, n in enumerate(nodes)}, 0.0, history)

    rng = random.Random(seed)
    while True:
        order = list(range(level.n))
        rng.shuffle(order)
        comm, moved = _local_moves(level, order, lambda c: history.append(
            modularity(g, {n: c[node_comm[i]] for i, n in enumerate(nodes)})))
        if not moved:
            break
        comm = _relabel(comm)
        node_comm = [comm[c] for c in node_comm]
        n_new = max(comm) + 1
        new_adj: list[dict] = [defaultdict(float) for _ in range(n_new)]
        for i in range(level.n):
            for j, w in level.adj[i].items():
                new_adj[comm[i]][comm[j]] += w
        level = _Level(n_new, new_adj)

    final = _relabel(node_comm)
    membership = {n: final[i] for i, n in enumerate(nodes)}
    return CommunityAssignment(membership, modularity(g, membership), history)


# --- export ----------------------------------------------------------------------------

def _pii_names(types) -> list[str]:
    return sorted(t.name for t in types)


def pii_color(types) -> str:
    digest = hashlib.sha1(",".join(_pii_names(types)).encode()).hexdigest()
    return "#" + digest[:6]


def _dot_id(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(g: DomainSimilarityGraph, communities: CommunityAssignment | None = None) -> str:
    lines = ["graph domains {"]
    for d, types in g.nodes.items():
        attrs = [f'pii="{",".join(_pii_names(types))}"', f'color="{pii_color(types)}"']
        if communities is not None:
            attrs.append(f"community={communities.membership[d]}")
        lines.append(f"  {_dot_id(d)} [{' '.join(attrs)}];")
    for (a, b), w in g.edges.items():
        lines.append(f"  {_dot_id(a)} -- {_dot_id(b)} [weight={w} penwidth={float(w):.1f}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json_graph(g: DomainSimilarityGraph, communities: CommunityAssignment | None = None) -> dict:
    nodes = []
    for d, types in g.nodes.items():
        node = {"id": d, "pii": _pii_names(types)}
        if communities is not None:
            node["community"] = communities.membership[d]
        nodes.append(node)
    return {"nodes": nodes, "edges": [{"a": a, "b": b, "w": w} for (a, b), w in g.edges.items()]}


def from_json_graph(obj: dict, custom=()) -> tuple[DomainSimilarityGraph, dict | None]:
    nodes = {n["id"]: frozenset(pii_type(t, custom) for t in n["pii"]) for n in obj["nodes"]}
    edges = {}
    for e in obj["edges"]:
        a, b = sorted((e["a"], e["b"]))
        edges[(a, b)] = int(e["w"])
    membership = None
    if obj["nodes"] and all("community" in n for n in obj["nodes"]):
        membership = {n["id"]: int(n["community"]) for n in obj["nodes"]}
    return DomainSimilarityGraph(dict(sorted(nodes.items())), dict(sorted(edges.items()))), membership


def export_graph(g: DomainSimilarityGraph, communities: CommunityAssignment | None, fmt: str,
                 path: str | os.PathLike) -> None:
    if fmt == "dot":
        text = to_dot(g, communities)
    elif fmt == "json":
        text = json.dumps(to_json_graph(g, communities), sort_keys=True, indent=1) + "\n"
    else:
        raise ValueError(f"unknown graph format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_json_graph(path: str | os.PathLike, custom=()) -> tuple[DomainSimilarityGraph, dict | None]:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return from_json_graph(obj, custom)
