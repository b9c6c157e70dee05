"""Impact-driven adulterant selection by Semantic Deviation Score."""

from __future__ import annotations

import json
import logging
import random
import re
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .embedding import EMBED_DIM, default_embed
from .genpool import CandidateAdulterant, CandidatePool
from .graph import KnowledgeGraph, NotFoundError, inject
from .retrieve import RetrievalContext, retrieve

__all__ = [
    "AdulterantSet",
    "AnswerPipeline",
    "anchored_questions",
    "DefaultPipeline",
    "Question",
    "answer_from_context",
    "default_answer",
    "default_embed",
    "gen_questions",
    "load_questions",
    "parse_question",
    "questions_to_jsonl",
    "scoring_questions",
    "sds_score",
    "select_adulterants",
]

log = logging.getLogger(__name__)

UNKNOWN = "unknown"


@dataclass(frozen=True)
class Question:
    text: str
    anchor_entity: str
    relation_path: tuple[str, ...]
    gold_answers: frozenset[str]

    @property
    def hops(self) -> int:
        return len(self.relation_path)

    @property
    def gold_text(self) -> str:
        return ", ".join(sorted(self.gold_answers))

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "anchor_entity": self.anchor_entity,
            "relation_path": list(self.relation_path),
            "gold_answers": sorted(self.gold_answers),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        return cls(d["text"], d["anchor_entity"], tuple(d["relation_path"]), frozenset(d["gold_answers"]))


def question_text(anchor: str, path: Sequence[str]) -> str:
    text = anchor
    for rel in path:
        text = f"the {rel} of {text}"
    return f"What is {text}?"


_Q1 = re.compile(r"^\s*What is the (\S+) of (.+?)\s*\?\s*$")
_Q2 = re.compile(r"^\s*What is the (\S+) of the (\S+) of (.+?)\s*\?\s*$")


def parse_question(text: str, graph: KnowledgeGraph) -> Question:
    """Rebuild a templated question from its text, with gold answers taken from ``graph``."""
    m = _Q2.match(text)
    if m and m.group(3) in graph.entities:
        anchor, path = m.group(3), (m.group(2), m.group(1))
    else:
        m = _Q1.match(text)
        if not m:
            raise ValueError(f"question does not follow a known template: {text!r}")
        anchor, path = m.group(2), (m.group(1),)
    if anchor not in graph.entities:
        raise NotFoundError(f"unknown anchor entity {anchor!r}")
    return Question(text, anchor, path, frozenset(follow(graph, anchor, path)))


def follow(graph: KnowledgeGraph, anchor: str, path: Sequence[str]) -> set[str]:
    frontier = {anchor}
    for rel in path:
        frontier = {t for h in frontier for t in graph.tails(h, rel)}
    return frontier


def gen_questions(
    graph: KnowledgeGraph,
    count: int,
    hops: int = 1,
    seed: int = 0,
    *,
    anchors: Iterable[str] | None = None,
    warnings: list[str] | None = None,
) -> list[Question]:
    """Sample templated questions over distinct (anchor, relation path) slots.

    ``anchors`` restricts the anchor entities. Gold answers are every entity
    reached by following the path, so multi-tail slots have several answers.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if hops not in (1, 2):
        raise ValueError("hops must be 1 or 2")
    allowed = graph.entities if anchors is None else set(anchors)
    slots: set[tuple[str, ...]] = set()
    for t in graph.triples:
        if t.head not in allowed:
            continue
        if hops == 1:
            slots.add((t.head, t.relation))
        else:
            for t2 in graph.incident(t.tail):
                if t2.head == t.tail:
                    slots.add((t.head, t.relation, t2.relation))
    ordered = sorted(slots)
    if len(ordered) < count:
        msg = f"only {len(ordered)} distinct {hops}-hop slots available, {count} requested"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        picked = ordered
        random.Random(seed).shuffle(picked)
    else:
        picked = random.Random(seed).sample(ordered, count)
    out = []
    for anchor, *path in picked:
        gold = follow(graph, anchor, path)
        out.append(Question(question_text(anchor, path), anchor, tuple(path), frozenset(gold)))
    return out


def anchored_questions(
    graph: KnowledgeGraph, anchors: Iterable[str], seed: int = 0, hops: int = 1
) -> list[Question]:
    """One question per anchor that starts at least one path of length ``hops``."""
    rng = random.Random(seed)
    out = []
    for a in sorted(set(anchors)):
        paths = sorted(
            {(t.relation,) for t in graph.incident(a) if t.head == a}
            if hops == 1
            else {
                (t.relation, t2.relation)
                for t in graph.incident(a)
                if t.head == a
                for t2 in graph.incident(t.tail)
                if t2.head == t.tail
            }
        )
        if paths:
            path = rng.choice(paths)
            out.append(Question(question_text(a, path), a, path, frozenset(follow(graph, a, path))))
    return out


def questions_to_jsonl(questions: Iterable[Question]) -> str:
    return "".join(json.dumps(q.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for q in questions)


def load_questions(text: str) -> list[Question]:
    return [Question.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def answer_from_context(question: Question, context: RetrievalContext) -> str:
    """Follow the relation path from the anchor using only the retrieved triples."""
    if context.is_empty() or question.anchor_entity not in context.nodes:
        return UNKNOWN
    frontier = {question.anchor_entity}
    for rel in question.relation_path:
        frontier = {t.tail for t in context.triples if t.relation == rel and t.head in frontier}
    return ", ".join(sorted(frontier)) if frontier else UNKNOWN


def default_answer(
    question: Question, graph, retriever: str = "symbolic", *, top_k: int = 4, index=None
) -> str:
    ctx = retrieve(question.text, graph, retriever, hops=question.hops, index=index, top_k=top_k)
    return answer_from_context(question, ctx)


class AnswerPipeline(Protocol):
    def answer(self, question: Question, graph: KnowledgeGraph) -> str: ...

    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class DefaultPipeline:
    """Template answerer over a retriever plus the hashed trigram embedder."""

    retriever: str = "symbolic"
    top_k: int = 4
    dim: int = EMBED_DIM

    def answer(self, question: Question, graph: KnowledgeGraph) -> str:
        return default_answer(question, graph, self.retriever, top_k=self.top_k)

    def embed(self, text: str) -> np.ndarray:
        return default_embed(text, self.dim)


def sds_score(
    candidate: CandidateAdulterant,
    questions: Sequence[Question],
    graph: KnowledgeGraph,
    pipeline: AnswerPipeline | None = None,
    *,
    baseline: Sequence[str] | None = None,
) -> float:
    """Mean embedding distance between clean and candidate-injected answers."""
    if not questions:
        raise ValueError("sds_score needs at least one question")
    pipeline = pipeline or DefaultPipeline()
    scratch = inject(graph, candidate)
    total = 0.0
    for i, q in enumerate(questions):
        before = baseline[i] if baseline is not None else pipeline.answer(q, graph)
        after = pipeline.answer(q, scratch)
        if before != after:
            total += float(np.linalg.norm(pipeline.embed(before) - pipeline.embed(after)))
    return total / len(questions)


def _distances(graph: KnowledgeGraph, source: str, limit: int) -> dict[str, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if dist[u] >= limit:
            continue
        for t in graph.incident(u):
            v = t.other(u)
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def scoring_questions(
    key_node: str, questions: Sequence[Question], graph: KnowledgeGraph, limit: int = 20
) -> list[int]:
    """Indices of the questions used to score one key node's candidates.

    Questions anchored at the key node come first; failing that the nearest
    non-empty ring (1 hop, then 2 hops), and finally the whole set.
    """
    dist = _distances(graph, key_node, 2) if key_node in graph.entities else {}
    for ring in (0, 1, 2):
        idx = [i for i, q in enumerate(questions) if dist.get(q.anchor_entity, 99) <= ring]
        if idx:
            return idx[:limit]
    return list(range(min(limit, len(questions))))


@dataclass
class AdulterantSet:
    chosen: dict[str, CandidateAdulterant]
    scores: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def triples(self) -> frozenset:
        return frozenset(t for c in self.chosen.values() for t in c.triples)

    @property
    def new_entities(self) -> tuple[str, ...]:
        return tuple(sorted(e for c in self.chosen.values() for e in c.new_entities))

    def __len__(self) -> int:
        return len(self.chosen)

    def to_dict(self) -> dict:
        return {
            "chosen": {k: c.to_dict() for k, c in sorted(self.chosen.items())},
            "scores": dict(sorted(self.scores.items())),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AdulterantSet":
        d = json.loads(text)
        chosen = {k: CandidateAdulterant.from_dict(v) for k, v in d["chosen"].items()}
        return cls(chosen, {k: float(v) for k, v in d.get("scores", {}).items()}, list(d.get("warnings", [])))


def _argmax(cands: Sequence[CandidateAdulterant], scores: dict[str, float]) -> CandidateAdulterant:
    return min(cands, key=lambda c: (-scores[c.candidate_id], c.candidate_id))


def select_adulterants(
    pool: CandidatePool,
    questions: Sequence[Question],
    graph: KnowledgeGraph,
    pipeline: AnswerPipeline | None = None,
    *,
    key_nodes: Iterable[str] | None = None,
    per_key: int = 20,
    workers: int = 1,
) -> AdulterantSet:
    """Pick the highest-SDS candidate for every key node.

    Ties go to the lexicographically smallest candidate id. Key nodes listed
    in ``key_nodes`` that have no candidates are reported in ``warnings``.
    """
    if not questions:
        raise ValueError("select_adulterants needs at least one question")
    pipeline = pipeline or DefaultPipeline()
    baseline = [pipeline.answer(q, graph) for q in questions]
    groups = pool.by_key
    warnings = []
    for k in sorted(set(key_nodes or ()) - set(groups)):
        warnings.append(f"{k}: no candidates, key node left without an adulterant")

    jobs = []
    for k, cands in groups.items():
        idx = scoring_questions(k, questions, graph, per_key)
        qs = [questions[i] for i in idx]
        base = [baseline[i] for i in idx]
        jobs.extend((c, qs, base) for c in cands)

    def run(job) -> float:
        c, qs, base = job
        return sds_score(c, qs, graph, pipeline, baseline=base)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            values = list(ex.map(run, jobs))
    else:
        values = [run(j) for j in jobs]
    scores = {job[0].candidate_id: v for job, v in zip(jobs, values)}
    chosen = {k: _argmax(cands, scores) for k, cands in groups.items()}
    return AdulterantSet(chosen, dict(sorted(scores.items())), warnings)
