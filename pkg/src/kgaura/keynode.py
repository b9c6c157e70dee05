"""Key-node selection as minimum vertex cover.

Triples are read as undirected edges: parallel edges collapse to one
coverage constraint and a self-loop forces its endpoint into the cover.
Ties are always broken towards the lexicographically smallest entity id.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .graph import KnowledgeGraph

__all__ = [
    "BudgetExceeded",
    "MvcConfig",
    "NodeSet",
    "baseline_mvc",
    "exact_mvc",
    "malatya_centrality",
    "malatya_mvc",
    "select_key_nodes",
    "verify_cover",
]

METHODS = ("exact", "malatya", "degree_greedy", "edge_greedy")


@dataclass(frozen=True)
class NodeSet:
    members: tuple[str, ...]
    method: str
    fallback_from: str | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def objective(self) -> int:
        return len(self.members)

    def __contains__(self, item: object) -> bool:
        return item in self.members

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        d = {"method": self.method, "objective": self.objective, "members": list(self.members)}
        if self.fallback_from:
            d["fallback_from"] = self.fallback_from
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "NodeSet":
        return cls(tuple(sorted(d["members"])), d["method"], d.get("fallback_from"))


@dataclass
class MvcConfig:
    exact_node_threshold: int = 2000
    time_budget: float | None = 10.0
    # search-node cap; unlike wall time this keeps fallbacks reproducible
    node_budget: int | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.exact_node_threshold < 0:
            raise ValueError("exact_node_threshold must be >= 0")


class BudgetExceeded(RuntimeError):
    def __init__(self, incumbent: NodeSet, lower_bound: int) -> None:
        self.incumbent = incumbent
        self.lower_bound = lower_bound
        self.gap = incumbent.objective - lower_bound
        super().__init__(
            f"exact search budget exhausted; incumbent {incumbent.objective}, "
            f"lower bound {lower_bound}, gap {self.gap}"
        )


@dataclass
class _Simple:
    names: list[str]
    u: np.ndarray
    v: np.ndarray
    forced: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.names)


def _simplify(graph: KnowledgeGraph) -> _Simple:
    names = list(graph.sorted_entities)
    index = {e: i for i, e in enumerate(names)}
    forced: set[int] = set()
    pairs: set[tuple[int, int]] = set()
    for t in graph.triples:
        a, b = index[t.head], index[t.tail]
        if a == b:
            forced.add(a)
        else:
            pairs.add((a, b) if a < b else (b, a))
    # edges touching a forced node are already covered
    kept = sorted(p for p in pairs if p[0] not in forced and p[1] not in forced)
    arr = np.array(kept, dtype=np.int64).reshape(-1, 2)
    return _Simple(names, arr[:, 0].copy(), arr[:, 1].copy(), sorted(forced))


def _nodeset(s: _Simple, picked: Iterable[int], method: str, fallback: str | None = None) -> NodeSet:
    members = sorted({s.names[i] for i in picked} | {s.names[i] for i in s.forced})
    return NodeSet(tuple(members), method, fallback)


def verify_cover(graph: KnowledgeGraph, candidate: NodeSet | Iterable[str]) -> bool:
    members = set(candidate.members if isinstance(candidate, NodeSet) else candidate)
    return all(t.head in members or t.tail in members for t in graph.triples)


def malatya_centrality(degrees: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """MC(x) = sum over neighbours y of deg(x) / deg(y)."""
    inv = np.zeros(len(degrees), dtype=np.float64)
    nz = degrees > 0
    inv[nz] = 1.0 / degrees[nz]
    n = len(degrees)
    acc = np.bincount(u, weights=inv[v], minlength=n) + np.bincount(v, weights=inv[u], minlength=n)
    return degrees * acc


def _greedy_by_score(s: _Simple, scorer) -> list[int]:
    alive = np.ones(len(s.u), dtype=bool)
    picked: list[int] = []
    while alive.any():
        eu, ev = s.u[alive], s.v[alive]
        deg = np.bincount(eu, minlength=s.n) + np.bincount(ev, minlength=s.n)
        score = scorer(deg.astype(np.float64), eu, ev)
        best = score.max()
        # smallest index among (numerically) tied maxima
        x = int(np.flatnonzero(score >= best - 1e-12 * abs(best))[0])
        picked.append(x)
        alive &= (s.u != x) & (s.v != x)
    return picked


def malatya_mvc(graph: KnowledgeGraph) -> NodeSet:
    """Repeatedly take the node of maximal Malatya centrality on the residual graph."""
    s = _simplify(graph)
    return _nodeset(s, _greedy_by_score(s, malatya_centrality), "malatya")


def baseline_mvc(graph: KnowledgeGraph, strategy: str = "degree_greedy", seed: int | None = None) -> NodeSet:
    """Comparison baselines: max-degree greedy, or the maximal-matching 2-approximation.

    ``seed`` permutes the edge scan order of ``edge_greedy``; ``None`` scans
    edges in sorted order. ``degree_greedy`` ignores it.
    """
    s = _simplify(graph)
    if strategy == "degree_greedy":
        return _nodeset(s, _greedy_by_score(s, lambda deg, eu, ev: deg), "degree_greedy")
    if strategy == "edge_greedy":
        order = np.arange(len(s.u))
        if seed is not None:
            order = np.random.default_rng(seed).permutation(len(s.u))
        covered: set[int] = set()
        for k in order:
            a, b = int(s.u[k]), int(s.v[k])
            if a not in covered and b not in covered:
                covered.update((a, b))
        return _nodeset(s, covered, "edge_greedy")
    raise ValueError(f"unknown strategy {strategy!r}")


# --- exact branch and bound ------------------------------------------------


class _OutOfBudget(Exception):
    pass


class _Search:
    def __init__(self, deadline: float | None, node_budget: int | None) -> None:
        self.deadline = deadline
        self.node_budget = node_budget
        self.nodes = 0

    def tick(self) -> None:
        self.nodes += 1
        if self.node_budget is not None and self.nodes > self.node_budget:
            raise _OutOfBudget
        if self.deadline is not None and (self.nodes & 63 == 1) and time.monotonic() > self.deadline:
            raise _OutOfBudget


Adj = dict[int, set[int]]


def _remove(adj: Adj, x: int) -> None:
    for y in adj.pop(x, ()):
        nb = adj[y]
        nb.discard(x)


def _reduce(adj: Adj) -> list[int]:
    """Degree-0, degree-1 and triangle degree-2 reductions, applied to a fixpoint."""
    taken: list[int] = []
    changed = True
    while changed:
        changed = False
        for x in sorted(adj):
            if x not in adj:
                continue
            nb = adj[x]
            if not nb:
                del adj[x]
                changed = True
            elif len(nb) == 1:
                (y,) = nb
                taken.append(y)
                _remove(adj, y)
                del adj[x]
                changed = True
            elif len(nb) == 2:
                a, b = sorted(nb)
                if b in adj[a]:
                    taken.extend((a, b))
                    _remove(adj, a)
                    _remove(adj, b)
                    del adj[x]
                    changed = True
    return taken


def _matching_bound(adj: Adj) -> int:
    matched: set[int] = set()
    size = 0
    for x in sorted(adj):
        if x in matched:
            continue
        for y in sorted(adj[x]):
            if y not in matched:
                matched.update((x, y))
                size += 1
                break
    return size


def _components(adj: Adj) -> list[list[int]]:
    seen: set[int] = set()
    comps = []
    for start in sorted(adj):
        if start in seen:
            continue
        stack = [start]
        seen.add(start)
        comp = []
        while stack:
            x = stack.pop()
            comp.append(x)
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        comps.append(sorted(comp))
    return comps


def _best(adj: Adj, limit: int, search: _Search) -> list[int] | None:
    """Minimum cover of ``adj`` if one of size < ``limit`` exists, else None."""
    search.tick()
    adj = {x: set(nb) for x, nb in adj.items()}
    taken = _reduce(adj)
    limit -= len(taken)
    if not adj:
        return taken if limit > 0 else None
    if limit <= 1:
        return None
    comps = _components(adj)
    if len(comps) > 1:
        subs = [{x: adj[x] for x in c} for c in comps]
        bounds = [_matching_bound(a) for a in subs]
        total = sum(bounds)
        if total >= limit:
            return None
        result = list(taken)
        spent = 0
        for i, sub in enumerate(subs):
            rest = total - bounds[i]
            # remaining components need at least their bounds
            part = _best(sub, limit - spent - rest, search)
            if part is None:
                return None
            spent += len(part)
            total -= bounds[i]
            result.extend(part)
        return result

    if _matching_bound(adj) >= limit:
        return None
    x = min(adj, key=lambda k: (-len(adj[k]), k))
    nbrs = sorted(adj[x])
    best: list[int] | None = None

    a = {k: set(v) for k, v in adj.items()}
    _remove(a, x)
    sub = _best(a, limit - 1, search)
    if sub is not None:
        best = [x] + sub
        limit = len(best)

    if len(nbrs) < limit:
        b = {k: set(v) for k, v in adj.items()}
        for y in nbrs:
            _remove(b, y)
        b.pop(x, None)
        sub = _best(b, limit - len(nbrs), search)
        if sub is not None:
            best = nbrs + sub
    if best is None:
        return None
    return taken + best


def exact_mvc(
    graph: KnowledgeGraph, budget: float | None = None, *, node_budget: int | None = None
) -> NodeSet:
    """Provably minimum vertex cover by branch and bound on the 0/1 formulation.

    ``budget`` is a wall-clock limit in seconds. On exhaustion raises
    :class:`BudgetExceeded` carrying the heuristic incumbent and the root bound.
    """
    s = _simplify(graph)
    adj: Adj = {}
    for a, b in zip(s.u.tolist(), s.v.tolist()):
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    incumbent = _greedy_by_score(s, malatya_centrality)
    deadline = None if budget is None else time.monotonic() + budget
    search = _Search(deadline, node_budget)
    try:
        if budget is not None and budget <= 0:
            raise _OutOfBudget
        found = _best(adj, len(incumbent) + 1, search)
    except _OutOfBudget:
        lb = _matching_bound(adj) + len(s.forced)
        raise BudgetExceeded(_nodeset(s, incumbent, "malatya"), lb) from None
    return _nodeset(s, incumbent if found is None else found, "exact")


def select_key_nodes(graph: KnowledgeGraph, config: MvcConfig | None = None) -> NodeSet:
    """Exact cover up to ``exact_node_threshold`` entities, Malatya heuristic beyond."""
    config = config or MvcConfig()
    if len(graph.entities) > config.exact_node_threshold:
        return malatya_mvc(graph)
    try:
        return exact_mvc(graph, config.time_budget, node_budget=config.node_budget)
    except BudgetExceeded:
        result = malatya_mvc(graph)
        return NodeSet(result.members, "malatya", fallback_from="exact")
