"""Hybrid candidate generation: false edges from the link predictor, cloned fake nodes from a name provider."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .graph import KnowledgeGraph, Triple
from .kge import EmbeddingModel

__all__ = [
    "CandidateAdulterant",
    "CandidatePool",
    "HttpNameProvider",
    "MockNameProvider",
    "NameProvider",
    "ProviderError",
    "gen_edge_candidates",
    "gen_node_candidates",
    "load_candidates",
    "neighborhood_summary",
    "pool",
]

log = logging.getLogger(__name__)

EDGE = "edge"
NODE = "node"


@dataclass(frozen=True)
class CandidateAdulterant:
    kind: str
    key_node: str
    triples: tuple[Triple, ...]
    fake_entity: str | None = None
    generator_score: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in (EDGE, NODE):
            raise ValueError(f"unknown candidate kind {self.kind!r}")
        if self.kind == EDGE and (len(self.triples) != 1 or self.fake_entity is not None):
            raise ValueError("an edge candidate carries exactly one triple and no fake entity")
        if self.kind == NODE and not self.fake_entity:
            raise ValueError("a node candidate needs a fake entity")
        object.__setattr__(self, "triples", tuple(sorted(self.triples)))

    @property
    def candidate_id(self) -> str:
        parts = [self.kind, self.key_node, self.fake_entity or ""]
        parts.extend(t.triple_id for t in self.triples)
        return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()[:16]

    @property
    def new_entities(self) -> tuple[str, ...]:
        return (self.fake_entity,) if self.fake_entity else ()

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "kind": self.kind,
            "key_node": self.key_node,
            "fake_entity": self.fake_entity,
            "generator_score": self.generator_score,
            "triples": [list(t.as_tuple()) for t in self.triples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateAdulterant":
        c = cls(
            d["kind"],
            d["key_node"],
            tuple(Triple(*t) for t in d["triples"]),
            d.get("fake_entity"),
            d.get("generator_score"),
        )
        if "candidate_id" in d and d["candidate_id"] != c.candidate_id:
            raise ValueError(f"candidate id mismatch for {d['candidate_id']}")
        return c


class ProviderError(RuntimeError):
    pass


class NameProvider(Protocol):
    def request(self, entity_label: str, neighborhood_summary: list[str]) -> str: ...


_ROMAN = ("II", "III", "IV", "V", "VI")
_SIBLINGS = (
    ("Northern", "Southern", "Eastern", "Western"),
    ("North", "South", "East", "West"),
    ("Crimson", "Azure", "Golden", "Silver"),
    ("Red", "Blue", "Green", "Black", "White"),
    ("Silent", "Hidden"),
    ("Ancient", "Modern"),
    ("Little", "Great"),
    ("Upper", "Lower"),
    ("Harbor", "River", "Valley", "Bridge"),
    ("Tower", "Castle", "Chapel"),
    ("Garden", "Meadow", "Orchard", "Forest"),
    ("Lantern", "Archive", "Market", "Quarry", "Summit"),
    ("King", "Queen", "Prince", "Duke"),
    ("Saint", "San", "Santa"),
)
_SIBLING_OF = {w: grp for grp in _SIBLINGS for w in grp}
_YEAR = re.compile(r"\b([12]\d{3})\b")


class MockNameProvider:
    """Deterministic offline stand-in for a language-model name generator.

    For a given ``(seed, label)`` picks one applicable perturbation: a
    roman-numeral suffix, a swap of one token for a lexicon sibling, or a
    shift of a four-digit year by 1 to 3.
    """

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def request(self, entity_label: str, neighborhood_summary: list[str]) -> str:
        rng = random.Random(f"{self.seed}|{entity_label}")
        tokens = entity_label.split(" ")
        options = ["roman"]
        if any(tok in _SIBLING_OF for tok in tokens):
            options.append("swap")
        if _YEAR.search(entity_label):
            options.append("year")
        choice = rng.choice(options)
        if choice == "swap":
            idx = [i for i, tok in enumerate(tokens) if tok in _SIBLING_OF]
            i = rng.choice(idx)
            sibs = [w for w in _SIBLING_OF[tokens[i]] if w != tokens[i]]
            tokens[i] = rng.choice(sibs)
            return " ".join(tokens)
        if choice == "year":
            m = rng.choice(list(_YEAR.finditer(entity_label)))
            year = int(m.group(1)) + rng.choice((-3, -2, -1, 1, 2, 3))
            return entity_label[: m.start()] + str(year) + entity_label[m.end() :]
        return f"{entity_label} {rng.choice(_ROMAN)}"


class HttpNameProvider:
    """JSON-over-HTTP provider.

    POSTs ``{"entity_label": ..., "neighborhood": [...]}`` and expects
    ``{"fake_label": ...}`` back.
    """

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 2, backoff: float = 0.5) -> None:
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def request(self, entity_label: str, neighborhood_summary: list[str]) -> str:
        body = json.dumps({"entity_label": entity_label, "neighborhood": list(neighborhood_summary)})
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(
                self.url,
                data=body.encode("utf-8"),
                headers={"Content-Type": "application/json"},
                method="POST",
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                label = payload.get("fake_label") if isinstance(payload, dict) else None
                if not isinstance(label, str) or not label.strip():
                    raise ProviderError(f"provider returned no usable fake_label: {payload!r}")
                return label.strip()
            except (urllib.error.URLError, OSError, ValueError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise ProviderError(f"provider request failed after {self.retries + 1} attempts: {last}")


def neighborhood_summary(graph: KnowledgeGraph, entity: str, limit: int = 10) -> list[str]:
    lines = sorted(f"{t.head} —[{t.relation}]→ {t.tail}" for t in graph.incident(entity))
    return lines[:limit]


def gen_edge_candidates(
    model: EmbeddingModel,
    graph: KnowledgeGraph,
    key_nodes: Iterable[str],
    n_per_slot: int = 1,
) -> list[CandidateAdulterant]:
    """Top-ranked false completions for every incident slot of every key node.

    A completion is skipped if it is the slot's ground truth, if it would
    recreate any true triple, or if it is the key node itself.
    """
    if n_per_slot < 1:
        raise ValueError("n_per_slot must be >= 1")
    out: dict[str, CandidateAdulterant] = {}
    for vk in sorted(set(key_nodes)):
        if not model.knows(vk):
            continue
        slots: dict[tuple[str, str], set[str]] = {}
        for t in graph.incident(vk):
            if not model.knows_relation(t.relation):
                continue
            if t.head == vk:
                slots.setdefault((t.relation, "tail_query"), set()).add(t.tail)
            if t.tail == vk:
                slots.setdefault((t.relation, "head_query"), set()).add(t.head)
        for (rel, direction), taken in sorted(slots.items()):
            k = min(len(model.entities), n_per_slot + len(taken) + 1)
            emitted = 0
            for ent, sc in model.rank_completions(vk, rel, direction, k):
                if ent in taken or ent == vk:
                    continue
                fake = Triple(vk, rel, ent) if direction == "tail_query" else Triple(ent, rel, vk)
                cand = CandidateAdulterant(EDGE, vk, (fake,), None, sc)
                out.setdefault(cand.candidate_id, cand)
                emitted += 1
                if emitted == n_per_slot:
                    break
    return [out[k] for k in sorted(out)]


def gen_node_candidates(
    provider: NameProvider,
    graph: KnowledgeGraph,
    key_nodes: Iterable[str],
    *,
    max_in_flight: int = 1,
    warnings: list[str] | None = None,
) -> list[CandidateAdulterant]:
    """One fake clone per key node, replicating its whole incident neighbourhood."""
    warnings = warnings if warnings is not None else []
    nodes = []
    for vk in sorted(set(key_nodes)):
        if not graph.incident(vk):
            warnings.append(f"{vk}: isolated key node, degenerate clone dropped")
            continue
        nodes.append(vk)

    def ask(vk: str):
        try:
            return provider.request(graph.label(vk), neighborhood_summary(graph, vk))
        except Exception as exc:  # provider failures only skip one node
            return exc

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool_:
            answers = list(pool_.map(ask, nodes))
    else:
        answers = [ask(vk) for vk in nodes]

    used: set[str] = set()
    out = []
    for vk, answer in zip(nodes, answers):
        if isinstance(answer, Exception) or not isinstance(answer, str) or not answer.strip():
            warnings.append(f"{vk}: provider failed ({answer!r}), node candidate skipped")
            log.warning("name provider failed for %s: %r", vk, answer)
            continue
        fake = _unique_label(answer.strip(), graph, used)
        used.add(fake)
        triples = []
        for t in graph.incident(vk):
            h = fake if t.head == vk else t.head
            tl = fake if t.tail == vk else t.tail
            triples.append(Triple(h, t.relation, tl))
        out.append(CandidateAdulterant(NODE, vk, tuple(triples), fake))
    return sorted(out, key=lambda c: c.candidate_id)


def _unique_label(label: str, graph: KnowledgeGraph, used: set[str]) -> str:
    label = " ".join(label.replace("\t", " ").split())
    if label not in graph.entities and label not in used:
        return label
    n = 2
    while f"{label} ({n})" in graph.entities or f"{label} ({n})" in used:
        n += 1
    return f"{label} ({n})"


@dataclass
class CandidatePool:
    candidates: dict[str, CandidateAdulterant] = field(default_factory=dict)

    @property
    def by_key(self) -> dict[str, list[CandidateAdulterant]]:
        grouped: dict[str, list[CandidateAdulterant]] = {}
        for cid in sorted(self.candidates):
            c = self.candidates[cid]
            grouped.setdefault(c.key_node, []).append(c)
        return dict(sorted(grouped.items()))

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return (self.candidates[k] for k in sorted(self.candidates))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for c in self)


def pool(
    edge_candidates: Iterable[CandidateAdulterant], node_candidates: Iterable[CandidateAdulterant]
) -> CandidatePool:
    merged: dict[str, CandidateAdulterant] = {}
    for c in list(edge_candidates) + list(node_candidates):
        prev = merged.get(c.candidate_id)
        if prev is not None and prev.kind != c.kind:
            raise RuntimeError(f"candidate id collision across kinds: {c.candidate_id}")
        merged[c.candidate_id] = c
    return CandidatePool(dict(sorted(merged.items())))


def load_candidates(text: str) -> CandidatePool:
    cands = [CandidateAdulterant.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
    return pool([c for c in cands if c.kind == EDGE], [c for c in cands if c.kind == NODE])
