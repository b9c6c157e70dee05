"""Immutable knowledge-graph values: ingestion, neighborhoods, injection, serialization.

Entity identity is the surface label itself. Relation direction is kept on
every triple, but neighborhood expansion treats incidence as undirected.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Any, Iterable, Iterator, Mapping, Union

__all__ = [
    "ORIGINAL",
    "ADULTERANT",
    "AdulterantError",
    "GraphError",
    "KnowledgeGraph",
    "NotFoundError",
    "ParseError",
    "Subgraph",
    "Triple",
    "inject",
    "neighborhood",
    "parse_property_json",
    "parse_triples",
    "serialize",
]

ORIGINAL = "original"
ADULTERANT = "adulterant"

Source = Union[bytes, str, IO[bytes], IO[str]]


class GraphError(ValueError):
    """Base class for graph construction and lookup failures."""


class ParseError(GraphError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class NotFoundError(GraphError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class AdulterantError(GraphError):
    """An injected element would duplicate or contradict existing content."""


def _check_id(value: str, what: str) -> str:
    if not isinstance(value, str) or not value:
        raise GraphError(f"{what} must be a non-empty string, got {value!r}")
    if "\t" in value or "\n" in value or "\r" in value:
        raise GraphError(f"{what} may not contain tab or newline characters: {value!r}")
    return value


@dataclass(frozen=True, order=True)
class Triple:
    head: str
    relation: str
    tail: str

    def __post_init__(self) -> None:
        _check_id(self.head, "head")
        _check_id(self.relation, "relation")
        _check_id(self.tail, "tail")

    @cached_property
    def triple_id(self) -> str:
        raw = f"{self.head}\t{self.relation}\t{self.tail}".encode("utf-8")
        return hashlib.sha256(raw).hexdigest()[:16]

    def other(self, entity: str) -> str:
        return self.tail if entity == self.head else self.head

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.head, self.relation, self.tail)


def _build_adjacency(triples: Iterable[Triple]) -> dict[str, tuple[Triple, ...]]:
    adj: dict[str, list[Triple]] = {}
    for t in sorted(triples):
        adj.setdefault(t.head, []).append(t)
        if t.tail != t.head:
            adj.setdefault(t.tail, []).append(t)
    return {k: tuple(v) for k, v in adj.items()}


class KnowledgeGraph:
    """An immutable set of entities, relation types and triples.

    Provenance (original vs adulterant) is tracked per node and per triple
    for in-process use; it is never written by :func:`serialize`.
    """

    def __init__(
        self,
        triples: Iterable[Triple] = (),
        entities: Iterable[str] = (),
        *,
        adulterant_entities: Iterable[str] = (),
        adulterant_triples: Iterable[Triple] = (),
    ) -> None:
        trip = frozenset(triples)
        ents = {_check_id(e, "entity") for e in entities}
        for t in trip:
            ents.add(t.head)
            ents.add(t.tail)
        self._triples = trip
        self._entities = frozenset(ents)
        self._relations = frozenset(t.relation for t in trip)
        self._adj = _build_adjacency(trip)
        self._adulterant_entities = frozenset(adulterant_entities)
        self._adulterant_triples = frozenset(adulterant_triples)
        if not self._adulterant_entities <= self._entities:
            raise GraphError("adulterant entity flags reference unknown entities")
        if not self._adulterant_triples <= self._triples:
            raise GraphError("adulterant triple flags reference unknown triples")

    @classmethod
    def _from_parts(
        cls,
        triples: frozenset[Triple],
        entities: frozenset[str],
        adj: dict[str, tuple[Triple, ...]],
        adulterant_entities: frozenset[str],
        adulterant_triples: frozenset[Triple],
        relations: frozenset[str] | None = None,
    ) -> "KnowledgeGraph":
        g = cls.__new__(cls)
        g._triples = triples
        g._entities = entities
        g._relations = frozenset(t.relation for t in triples) if relations is None else relations
        g._adj = adj
        g._adulterant_entities = adulterant_entities
        g._adulterant_triples = adulterant_triples
        return g

    @property
    def entities(self) -> frozenset[str]:
        return self._entities

    @property
    def relations(self) -> frozenset[str]:
        return self._relations

    @property
    def triples(self) -> frozenset[Triple]:
        return self._triples

    @cached_property
    def sorted_entities(self) -> tuple[str, ...]:
        return tuple(sorted(self._entities))

    @cached_property
    def sorted_triples(self) -> tuple[Triple, ...]:
        return tuple(sorted(self._triples))

    @cached_property
    def triple_ids(self) -> frozenset[str]:
        return frozenset(t.triple_id for t in self._triples)

    @cached_property
    def _out_index(self) -> dict[tuple[str, str], tuple[str, ...]]:
        out: dict[tuple[str, str], list[str]] = {}
        for t in self.sorted_triples:
            out.setdefault((t.head, t.relation), []).append(t.tail)
        return {k: tuple(v) for k, v in out.items()}

    def label(self, entity: str) -> str:
        return entity

    def incident(self, entity: str) -> tuple[Triple, ...]:
        if entity not in self._entities:
            raise NotFoundError(f"unknown entity {entity!r}")
        return self._adj.get(entity, ())

    def degree(self, entity: str) -> int:
        return len(self.incident(entity))

    def tails(self, head: str, relation: str) -> tuple[str, ...]:
        return self._out_index.get((head, relation), ())

    def adjacency(self) -> Mapping[str, tuple[Triple, ...]]:
        return dict(self._adj)

    def provenance(self, element: str | Triple) -> str:
        if isinstance(element, Triple):
            if element not in self._triples:
                raise NotFoundError(f"unknown triple {element}")
            return ADULTERANT if element in self._adulterant_triples else ORIGINAL
        if element not in self._entities:
            raise NotFoundError(f"unknown entity {element!r}")
        return ADULTERANT if element in self._adulterant_entities else ORIGINAL

    @property
    def adulterant_entities(self) -> frozenset[str]:
        return self._adulterant_entities

    @property
    def adulterant_triples(self) -> frozenset[Triple]:
        return self._adulterant_triples

    def adjacency_consistent(self) -> bool:
        return _build_adjacency(self._triples) == self._adj

    def __contains__(self, item: object) -> bool:
        if isinstance(item, Triple):
            return item in self._triples
        return item in self._entities

    def __len__(self) -> int:
        return len(self._triples)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._triples == other._triples and self._entities == other._entities

    def __hash__(self) -> int:
        return hash((self._triples, self._entities))

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={len(self._entities)}, "
            f"relations={len(self._relations)}, triples={len(self._triples)})"
        )


@dataclass(frozen=True)
class Subgraph:
    center: str
    hops: int
    triples: frozenset[Triple] = field(default_factory=frozenset)

    @property
    def nodes(self) -> frozenset[str]:
        nodes = {self.center}
        for t in self.triples:
            nodes.add(t.head)
            nodes.add(t.tail)
        return frozenset(nodes)


def neighborhood(graph: KnowledgeGraph, center: str, hops: int) -> Subgraph:
    """Breadth-first expansion over undirected incidence.

    A triple is included when one of its endpoints lies strictly closer than
    ``hops`` to ``center``, i.e. when it sits on a path of length <= hops.
    """
    if hops < 1:
        raise GraphError(f"hops must be >= 1, got {hops}")
    if center not in graph.entities:
        raise NotFoundError(f"unknown entity {center!r}")
    return Subgraph(center, hops, frozenset(_expand(graph._adj, [center], hops)))


def _expand(
    adj: Mapping[str, tuple[Triple, ...]], seeds: Iterable[str], hops: int
) -> set[Triple]:
    dist = {s: 0 for s in seeds}
    queue = deque(dist)
    found: set[Triple] = set()
    while queue:
        u = queue.popleft()
        d = dist[u]
        if d >= hops:
            continue
        for t in adj.get(u, ()):
            found.add(t)
            v = t.other(u)
            if v not in dist:
                dist[v] = d + 1
                queue.append(v)
    return found


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


_NT_TOKEN = re.compile(
    r'\s*(<[^>]*>|_:\S+|"(?:[^"\\]|\\.)*"(?:@[A-Za-z0-9-]+|\^\^<[^>]*>)?)'
)


def _parse_ntriples_line(line: str, lineno: int) -> Triple:
    tokens = []
    pos = 0
    for _ in range(3):
        m = _NT_TOKEN.match(line, pos)
        if not m:
            raise ParseError(lineno, f"expected an N-Triples term at column {pos + 1}")
        tokens.append(m.group(1))
        pos = m.end()
    if line[pos:].strip() != ".":
        raise ParseError(lineno, "statement must end with ' .'")
    try:
        return Triple(*tokens)
    except GraphError as exc:
        raise ParseError(lineno, str(exc)) from None


def parse_triples(source: Source, format: str = "tsv") -> KnowledgeGraph:
    """Parse ``head<TAB>relation<TAB>tail`` lines or a subset of N-Triples.

    Blank lines are ignored, duplicate triples collapse. IRIs and literals
    are kept verbatim as opaque identifiers.
    """
    if format not in ("tsv", "ntriples"):
        raise GraphError(f"unsupported format {format!r}")
    text = _read_text(source)
    triples: set[Triple] = set()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if format == "tsv":
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            try:
                triples.add(Triple(*parts))
            except GraphError as exc:
                raise ParseError(lineno, str(exc)) from None
        else:
            if line.lstrip().startswith("#"):
                continue
            triples.add(_parse_ntriples_line(line, lineno))
    return KnowledgeGraph(triples)


def _collect(adulterants: Any) -> tuple[list[Triple], list[str]]:
    if hasattr(adulterants, "triples"):
        trip = list(adulterants.triples)
        ents = list(getattr(adulterants, "new_entities", ()))
    else:
        trip = list(adulterants)
        ents = []
    return trip, ents


def inject(
    graph: KnowledgeGraph, adulterants: Any, new_entities: Iterable[str] = ()
) -> KnowledgeGraph:
    """Return ``graph`` extended with adulterant triples and fake entities.

    ``adulterants`` is either an iterable of triples or an object exposing
    ``triples`` and ``new_entities`` (an adulterant set or a candidate).
    The input graph is left untouched.
    """
    trip, ents = _collect(adulterants)
    ents = set(ents) | set(new_entities)
    if not trip and not ents:
        return graph
    for e in ents:
        _check_id(e, "entity")
        if e in graph.entities:
            raise AdulterantError(f"fake entity {e!r} already exists in the graph")
    added: set[Triple] = set()
    for t in trip:
        if t in graph.triples:
            raise AdulterantError(f"adulterant {t.as_tuple()} duplicates an existing triple")
        for end in (t.head, t.tail):
            if end not in graph.entities and end not in ents:
                raise AdulterantError(
                    f"adulterant {t.as_tuple()} references unknown entity {end!r}"
                )
        added.add(t)

    adj = dict(graph._adj)
    touched: dict[str, list[Triple]] = {}
    for t in added:
        touched.setdefault(t.head, []).append(t)
        if t.tail != t.head:
            touched.setdefault(t.tail, []).append(t)
    for node, extra in touched.items():
        adj[node] = tuple(sorted(adj.get(node, ()) + tuple(extra)))
    return KnowledgeGraph._from_parts(
        graph.triples | added,
        graph.entities | ents if ents else graph.entities,
        adj,
        graph.adulterant_entities | ents,
        graph.adulterant_triples | added,
        graph.relations | {t.relation for t in added},
    )


def serialize(
    graph: KnowledgeGraph,
    format: str = "tsv",
    *,
    node_properties: Mapping[str, Mapping[str, str]] | None = None,
    triple_properties: Mapping[str, Mapping[str, str]] | None = None,
    header: Mapping[str, Any] | None = None,
) -> bytes:
    """Deterministic byte serialization.

    ``property-json`` carries per-element string maps keyed by entity id and
    by triple id; provenance is never emitted.
    """
    if format == "tsv":
        buf = io.StringIO()
        for t in graph.sorted_triples:
            buf.write(f"{t.head}\t{t.relation}\t{t.tail}\n")
        return buf.getvalue().encode("utf-8")
    if format != "property-json":
        raise GraphError(f"unsupported format {format!r}")
    node_properties = node_properties or {}
    triple_properties = triple_properties or {}
    entities = []
    for e in graph.sorted_entities:
        item: dict[str, Any] = {"id": e}
        if e in node_properties:
            item["properties"] = dict(node_properties[e])
        entities.append(item)
    triples = []
    for t in graph.sorted_triples:
        item = {"head": t.head, "relation": t.relation, "tail": t.tail}
        if t.triple_id in triple_properties:
            item["properties"] = dict(triple_properties[t.triple_id])
        triples.append(item)
    doc: dict[str, Any] = {"entities": entities, "triples": triples}
    if header:
        doc["header"] = dict(header)
    return (json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def parse_property_json(
    source: Source,
) -> tuple[KnowledgeGraph, dict[str, dict[str, str]], dict[str, dict[str, str]], dict[str, Any]]:
    """Inverse of ``serialize(..., "property-json")``.

    Returns the graph, node properties, triple properties (keyed by triple
    id) and the optional header.
    """
    try:
        doc = json.loads(_read_text(source))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.msg) from None
    if not isinstance(doc, dict) or "entities" not in doc or "triples" not in doc:
        raise ParseError(1, "property-json needs 'entities' and 'triples' arrays")
    node_props: dict[str, dict[str, str]] = {}
    triple_props: dict[str, dict[str, str]] = {}
    ents = []
    for item in doc["entities"]:
        ents.append(item["id"])
        if "properties" in item:
            node_props[item["id"]] = dict(item["properties"])
    trips = []
    for item in doc["triples"]:
        t = Triple(item["head"], item["relation"], item["tail"])
        trips.append(t)
        if "properties" in item:
            triple_props[t.triple_id] = dict(item["properties"])
    return KnowledgeGraph(trips, ents), node_props, triple_props, dict(doc.get("header", {}))


def iter_lines(graph: KnowledgeGraph) -> Iterator[str]:
    for t in graph.sorted_triples:
        yield f"{t.head}\t{t.relation}\t{t.tail}"
