"""Attacker-side sanitization and detection.

Attacks only see the graph topology, labels and an embedding model. Ground
truth (``truth``, a collection of adulterant element ids) is supplied by the
evaluation harness and is used solely to compute the report's rates.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .embedding import default_embed
from .graph import KnowledgeGraph, Triple
from .kge import EmbeddingModel, Hyperparams, train

__all__ = [
    "ATTACKS",
    "SanitizationReport",
    "egonet_residuals",
    "hybrid_detect",
    "kge_purge",
    "semantic_detect",
    "structural_detect",
    "triple_scores",
]

log = logging.getLogger(__name__)

ATTACKS = ("kge_purge", "structural", "semantic", "hybrid")


@dataclass
class SanitizationReport:
    attack: str
    flagged_or_removed: frozenset[str]
    retain_rate: float | None = None
    detection_rate: float | None = None
    threshold_used: float | None = None
    warnings: list[str] = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "flagged_or_removed": sorted(self.flagged_or_removed),
            "n_flagged": len(self.flagged_or_removed),
            "retain_rate": self.retain_rate,
            "detection_rate": self.detection_rate,
            "threshold_used": self.threshold_used,
            "warnings": list(self.warnings),
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _graph(graph: Any) -> KnowledgeGraph:
    return graph if isinstance(graph, KnowledgeGraph) else graph.graph


def _report(attack: str, flagged: Iterable[str], truth: Iterable[str] | None, **kw) -> SanitizationReport:
    flagged = frozenset(flagged)
    rep = SanitizationReport(attack, flagged, **kw)
    if truth is not None:
        truth = frozenset(truth)
        if truth:
            hit = len(truth & flagged) / len(truth)
            rep.detection_rate = hit
            rep.retain_rate = 1.0 - hit
        else:
            rep.detection_rate, rep.retain_rate = 0.0, 1.0
    return rep


class _FallbackScorer:
    """Scores triples, mapping unseen entities to the known entity with the closest label."""

    def __init__(self, model: EmbeddingModel) -> None:
        self.model = model
        self._labels: np.ndarray | None = None
        self._nearest: dict[str, int] = {}

    def _index(self, entity: str) -> int:
        if self.model.knows(entity):
            return self.model.entity_index(entity)
        if entity not in self._nearest:
            if self._labels is None:
                self._labels = np.stack([default_embed(e) for e in self.model.entities])
            self._nearest[entity] = int(np.argmax(self._labels @ default_embed(entity)))
        return self._nearest[entity]

    def scores(self, triples: list[Triple]) -> np.ndarray:
        m = self.model
        out = np.full(len(triples), -np.inf)
        rows = [i for i, t in enumerate(triples) if m.knows_relation(t.relation)]
        if rows:
            h = np.array([self._index(triples[i].head) for i in rows])
            r = np.array([m.relation_index(triples[i].relation) for i in rows])
            t = np.array([self._index(triples[i].tail) for i in rows])
            out[rows] = m.score_many(h, r, t)
        return out


def triple_scores(graph: Any, model: EmbeddingModel) -> tuple[list[Triple], np.ndarray]:
    """All triples in canonical order with their plausibility scores.

    Triples over a relation the model has never seen score ``-inf``.
    """
    trips = list(_graph(graph).sorted_triples)
    return trips, _FallbackScorer(model).scores(trips)


def _attack_model(graph: KnowledgeGraph, model: EmbeddingModel | None, hp: Hyperparams | None) -> EmbeddingModel:
    return model if model is not None else train(graph, hp)


def kge_purge(
    graph: Any,
    model: EmbeddingModel | None = None,
    quantile: float = 0.2,
    *,
    truth: Iterable[str] | None = None,
    hyperparams: Hyperparams | None = None,
) -> tuple[KnowledgeGraph, SanitizationReport]:
    """Drop every triple scoring strictly below the ``quantile``-th score.

    With ``model=None`` the attacker trains its own model on the graph it
    holds; passing a model trained on the original graph gives the
    worst-case setting. ``truth`` holds adulterant triple ids.
    """
    if not 0.0 <= quantile < 1.0:
        raise ValueError(f"quantile must be in [0, 1), got {quantile}")
    g = _graph(graph)
    trips, scores = triple_scores(g, _attack_model(g, model, hyperparams))
    if not trips:
        return g, _report("kge_purge", (), truth, threshold_used=None)
    threshold = float(np.sort(scores)[int(math.floor(quantile * len(trips)))])
    removed = [t for t, s in zip(trips, scores) if s < threshold]
    gone = set(removed)
    cleaned = KnowledgeGraph((t for t in trips if t not in gone), g.entities)
    rep = _report("kge_purge", (t.triple_id for t in removed), truth, threshold_used=threshold)
    return cleaned, rep


def _simple_neighbors(g: KnowledgeGraph) -> dict[str, set[str]]:
    nbrs: dict[str, set[str]] = {e: set() for e in g.entities}
    for t in g.triples:
        if t.head != t.tail:
            nbrs[t.head].add(t.tail)
            nbrs[t.tail].add(t.head)
    return nbrs


def egonet_residuals(graph: Any) -> dict[str, float]:
    """Internally studentized residuals of log(ego edges) on log(ego nodes).

    Isolated nodes are left out of the fit. Returns an empty mapping when
    fewer than three nodes can be fitted or the fit is degenerate.
    """
    g = _graph(graph)
    nbrs = _simple_neighbors(g)
    names, n_i, e_i = [], [], []
    for v in sorted(nbrs):
        nb = nbrs[v]
        if not nb:
            continue
        inner = sum(len(nbrs[a] & nb) for a in nb) // 2
        names.append(v)
        n_i.append(1 + len(nb))
        e_i.append(len(nb) + inner)
    m = len(names)
    if m < 3:
        return {}
    x = np.log(np.array(n_i, dtype=np.float64))
    y = np.log(np.array(e_i, dtype=np.float64))
    X = np.column_stack([np.ones(m), x])
    if np.ptp(x) == 0:
        return {v: 0.0 for v in names}
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    s2 = rss / (m - 2)
    if s2 <= 1e-24:
        return {v: 0.0 for v in names}
    xtx_inv = np.linalg.inv(X.T @ X)
    lev = np.einsum("ij,jk,ik->i", X, xtx_inv, X)
    denom = np.sqrt(s2 * np.clip(1.0 - lev, 1e-12, None))
    return dict(zip(names, (resid / denom).tolist()))


def structural_detect(
    graph: Any,
    *,
    cutoff: float = 3.0,
    truth: Iterable[str] | None = None,
    min_nodes: int = 10,
) -> SanitizationReport:
    """Ego-network outlier flags; ``truth`` holds fake entity ids."""
    g = _graph(graph)
    if len(g.entities) < min_nodes:
        msg = f"graph has {len(g.entities)} nodes (< {min_nodes}), ego-net fit skipped"
        log.warning(msg)
        return _report("structural", (), truth, threshold_used=cutoff, warnings=[msg])
    res = egonet_residuals(g)
    flagged = [v for v, r in res.items() if abs(r) > cutoff]
    return _report("structural", flagged, truth, threshold_used=cutoff)


def _relation_z(trips: list[Triple], scores: np.ndarray, min_per_relation: int) -> tuple[np.ndarray, list[str]]:
    """Per-relation standardized implausibility (mean - score) / std; 0 where undefined."""
    z = np.zeros(len(trips))
    skipped = []
    by_rel: dict[str, list[int]] = {}
    for i, t in enumerate(trips):
        by_rel.setdefault(t.relation, []).append(i)
    for rel in sorted(by_rel):
        idx = np.array(by_rel[rel])
        if len(idx) < min_per_relation:
            skipped.append(rel)
            continue
        s = scores[idx]
        finite = np.isfinite(s)
        if finite.sum() < min_per_relation:
            skipped.append(rel)
            continue
        mu, sd = s[finite].mean(), s[finite].std()
        if sd == 0:
            continue
        zz = np.where(finite, (mu - s) / sd, np.inf)
        z[idx] = zz
    return z, skipped


def semantic_detect(
    graph: Any,
    model: EmbeddingModel | None = None,
    *,
    sigma: float = 2.0,
    min_per_relation: int = 5,
    truth: Iterable[str] | None = None,
    hyperparams: Hyperparams | None = None,
) -> SanitizationReport:
    """Flag triples scoring below mean - ``sigma`` * std of their relation.

    This embedding-consistency check stands in for random-walk embedding
    checks; ``truth`` holds adulterant triple ids.
    """
    g = _graph(graph)
    trips, scores = triple_scores(g, _attack_model(g, model, hyperparams))
    z, skipped = _relation_z(trips, scores, min_per_relation)
    flagged = [t.triple_id for t, zz in zip(trips, z) if zz > sigma]
    warnings = [f"relation {r!r} has < {min_per_relation} triples, skipped" for r in skipped]
    return _report(
        "semantic", flagged, truth, threshold_used=sigma, warnings=warnings,
        note="embedding-consistency stand-in",
    )


def hybrid_detect(
    graph: Any,
    model: EmbeddingModel | None = None,
    *,
    cutoff: float = 3.0,
    sigma: float = 2.0,
    combined: float = 3.5,
    min_per_relation: int = 5,
    truth: Iterable[str] | None = None,
    hyperparams: Hyperparams | None = None,
) -> SanitizationReport:
    """Triple-level union of the structural and semantic detectors.

    A triple is flagged when an endpoint is a structural outlier, when it is
    a semantic outlier, or when its structural and semantic excess scores
    (positive parts, summed) exceed ``combined``.
    """
    g = _graph(graph)
    model = _attack_model(g, model, hyperparams)
    trips, scores = triple_scores(g, model)
    z_sem, _ = _relation_z(trips, scores, min_per_relation)
    res = egonet_residuals(g) if len(g.entities) >= 10 else {}
    outliers = {v for v, r in res.items() if abs(r) > cutoff}
    flagged = []
    for t, zs in zip(trips, z_sem):
        z_struct = max(abs(res.get(t.head, 0.0)), abs(res.get(t.tail, 0.0)))
        if (
            t.head in outliers
            or t.tail in outliers
            or zs > sigma
            or max(zs, 0.0) + z_struct > combined
        ):
            flagged.append(t.triple_id)
    return _report("hybrid", flagged, truth, threshold_used=combined, note="structural + semantic approximation")
