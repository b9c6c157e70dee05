"""Adversary-grade retrievers: gazetteer (symbolic), dense cosine, and hybrid.

All three return the *whole* ``hops``-neighbourhood of their seed entities;
facts are never truncated to a top-k subset.
"""

from __future__ import annotations

import re
from operator import attrgetter
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Iterable

import numpy as np

from .embedding import EMBED_DIM, default_embed
from .graph import KnowledgeGraph, Triple, _expand

__all__ = [
    "DenseIndex",
    "RetrievalContext",
    "StaleIndexError",
    "build_dense_index",
    "match_entities",
    "retrieve",
    "retrieve_dense",
    "retrieve_hybrid",
    "retrieve_symbolic",
    "serialize_context",
]

RETRIEVERS = ("symbolic", "dense", "hybrid")
_WORD = re.compile(r"\w+")
_TRIPLE_KEY = attrgetter("head", "relation", "tail")


class StaleIndexError(RuntimeError):
    pass


@dataclass
class RetrievalContext:
    """Retrieved subgraph with each element's opaque flag (``None`` when unsealed)."""

    query: str
    nodes: dict[str, str | None] = field(default_factory=dict)
    triples: dict[Triple, str | None] = field(default_factory=dict)
    retriever: str = "symbolic"
    seeds: tuple[str, ...] = ()
    hops: int = 1
    decryptions: int = 0

    @property
    def triple_ids(self) -> frozenset[str]:
        return frozenset(t.triple_id for t in self.triples)

    def is_empty(self) -> bool:
        return not self.triples and not self.nodes

    def same_content(self, other: "RetrievalContext") -> bool:
        return set(self.nodes) == set(other.nodes) and set(self.triples) == set(other.triples)


def _unwrap(graph: Any) -> tuple[KnowledgeGraph, Any]:
    """Accept a plain graph or a sealed graph (anything with ``.graph`` and flag maps)."""
    if isinstance(graph, KnowledgeGraph):
        return graph, None
    return graph.graph, graph


@lru_cache(maxsize=1 << 18)
def _normalize(text: str) -> tuple[str, ...]:
    return tuple(_WORD.findall(text.lower()))


class _Gazetteer:
    def __init__(self, entities: Iterable[str]) -> None:
        index: dict[tuple[str, ...], list[str]] = {}
        for e in entities:
            key = _normalize(e)
            if key:
                index.setdefault(key, []).append(e)
        self.index = {k: tuple(sorted(v)) for k, v in index.items()}
        self.max_len = max((len(k) for k in self.index), default=0)

    def match(self, query: str) -> list[str]:
        tokens = _normalize(query)
        found: list[str] = []
        i = 0
        while i < len(tokens):
            for n in range(min(self.max_len, len(tokens) - i), 0, -1):
                hit = self.index.get(tokens[i : i + n])
                if hit:
                    for e in hit:
                        if e not in found:
                            found.append(e)
                    i += n
                    break
            else:
                i += 1
        return found


_GAZ_CACHE: "OrderedDict[int, tuple[frozenset, _Gazetteer]]" = OrderedDict()


def _gazetteer(graph: KnowledgeGraph) -> _Gazetteer:
    key = id(graph.entities)
    hit = _GAZ_CACHE.get(key)
    if hit is not None and hit[0] is graph.entities:
        _GAZ_CACHE.move_to_end(key)
        return hit[1]
    gaz = _Gazetteer(graph.entities)
    _GAZ_CACHE[key] = (graph.entities, gaz)
    while len(_GAZ_CACHE) > 16:
        _GAZ_CACHE.popitem(last=False)
    return gaz


def match_entities(query: str, graph: KnowledgeGraph) -> list[str]:
    """Case-insensitive longest-match gazetteer lookup, scanning left to right."""
    return _gazetteer(graph).match(query)


def _context(
    query: str, graph: Any, seeds: list[str], hops: int, retriever: str
) -> RetrievalContext:
    g, sealed = _unwrap(graph)
    triples = _expand(g._adj, seeds, hops) if seeds else set()
    nodes = set(seeds)
    for t in triples:
        nodes.add(t.head)
        nodes.add(t.tail)
    if sealed is None:
        node_map = {n: None for n in sorted(nodes)}
        trip_map = {t: None for t in sorted(triples, key=_TRIPLE_KEY)}
    else:
        node_map = {n: sealed.node_flag(n) for n in sorted(nodes)}
        trip_map = {t: sealed.triple_flag(t) for t in sorted(triples, key=_TRIPLE_KEY)}
    return RetrievalContext(query, node_map, trip_map, retriever, tuple(seeds), hops)


def retrieve_symbolic(query: str, graph: Any, hops: int = 1) -> RetrievalContext:
    g, _ = _unwrap(graph)
    return _context(query, graph, match_entities(query, g), hops, "symbolic")


@dataclass(frozen=True)
class DenseIndex:
    entities: tuple[str, ...]
    vectors: np.ndarray
    dim: int = EMBED_DIM

    def __len__(self) -> int:
        return len(self.entities)


def build_dense_index(graph: Any, dim: int = EMBED_DIM) -> DenseIndex:
    g, _ = _unwrap(graph)
    ents = g.sorted_entities
    mat = np.zeros((len(ents), dim), dtype=np.float64)
    for i, e in enumerate(ents):
        mat[i] = default_embed(g.label(e), dim)
    return DenseIndex(ents, mat, dim)


def _dense_seeds(
    query: str,
    g: KnowledgeGraph,
    index: DenseIndex,
    top_k: int,
    seed_ok: Callable[[str], bool] | None,
) -> list[str]:
    if len(index.entities) != len(g.entities):
        raise StaleIndexError(
            f"index covers {len(index.entities)} entities but the graph has {len(g.entities)}"
        )
    if top_k <= 0:
        return []
    q = default_embed(query, index.dim)
    if not q.any():
        return []
    sims = index.vectors @ q
    # entities are sorted, so a stable sort on -sim breaks ties lexicographically
    order = np.argsort(-sims, kind="stable")
    seeds: list[str] = []
    for i in order:
        e = index.entities[i]
        if seed_ok is not None and not seed_ok(e):
            continue
        seeds.append(e)
        if len(seeds) == top_k:
            break
    return seeds


def retrieve_dense(
    query: str,
    graph: Any,
    index: DenseIndex,
    top_k: int = 4,
    hops: int = 1,
    *,
    seed_ok: Callable[[str], bool] | None = None,
) -> RetrievalContext:
    """Seeds are the ``top_k`` entities by cosine similarity of their label to the query.

    ``seed_ok`` lets an authorized caller skip seeds it knows to be fake, so
    the next-ranked entity takes their place.
    """
    g, _ = _unwrap(graph)
    return _context(query, graph, _dense_seeds(query, g, index, top_k, seed_ok), hops, "dense")


def retrieve_hybrid(
    query: str,
    graph: Any,
    index: DenseIndex,
    top_k: int = 4,
    hops: int = 1,
    *,
    seed_ok: Callable[[str], bool] | None = None,
) -> RetrievalContext:
    g, _ = _unwrap(graph)
    seeds = match_entities(query, g)
    for e in _dense_seeds(query, g, index, top_k, seed_ok):
        if e not in seeds:
            seeds.append(e)
    return _context(query, graph, seeds, hops, "hybrid")


def retrieve(
    query: str,
    graph: Any,
    retriever: str = "symbolic",
    *,
    hops: int = 1,
    index: DenseIndex | None = None,
    top_k: int = 4,
    seed_ok: Callable[[str], bool] | None = None,
) -> RetrievalContext:
    if retriever == "symbolic":
        return retrieve_symbolic(query, graph, hops)
    if retriever not in RETRIEVERS:
        raise ValueError(f"unknown retriever {retriever!r}")
    if index is None:
        index = build_dense_index(graph)
    fn = retrieve_dense if retriever == "dense" else retrieve_hybrid
    return fn(query, graph, index, top_k, hops, seed_ok=seed_ok)


def serialize_context(context: RetrievalContext) -> str:
    return "\n".join(sorted(f"{t.head} —[{t.relation}]→ {t.tail}" for t in context.triples))
