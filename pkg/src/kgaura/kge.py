"""Translational (TransE) embeddings used as link predictor and plausibility oracle."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .graph import KnowledgeGraph, Triple

__all__ = [
    "EmbeddingModel",
    "Hyperparams",
    "Scorer",
    "UnknownIdError",
    "hits_at_k",
    "load_model",
    "rank_completions",
    "save_model",
    "score",
    "train",
]

_MAGIC = b"KGETRNE1"


class UnknownIdError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class Hyperparams:
    dim: int = 64
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 200
    negatives_per_positive: int = 1
    batch_size: int = 128
    seed: int = 0


class Scorer(Protocol):
    """Anything that can score triples and rank completions."""

    def score(self, triple: Triple) -> float: ...

    def rank_completions(
        self, anchor: str, relation: str, direction: str, k: int
    ) -> list[tuple[str, float]]: ...


@dataclass
class EmbeddingModel:
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    entity_vectors: np.ndarray  # float32, (n_entities, dim)
    relation_vectors: np.ndarray  # float32, (n_relations, dim)
    hyperparams: Hyperparams

    def __post_init__(self) -> None:
        self._eidx = {e: i for i, e in enumerate(self.entities)}
        self._ridx = {r: i for i, r in enumerate(self.relations)}
        self._e64 = self.entity_vectors.astype(np.float64)
        self._r64 = self.relation_vectors.astype(np.float64)
        self._e_sq = np.einsum("ij,ij->i", self._e64, self._e64)

    @property
    def dim(self) -> int:
        return self.entity_vectors.shape[1]

    def entity_index(self, entity: str) -> int:
        try:
            return self._eidx[entity]
        except KeyError:
            raise UnknownIdError(f"entity {entity!r} not known to the model") from None

    def relation_index(self, relation: str) -> int:
        try:
            return self._ridx[relation]
        except KeyError:
            raise UnknownIdError(f"relation {relation!r} not known to the model") from None

    def knows(self, entity: str) -> bool:
        return entity in self._eidx

    def knows_relation(self, relation: str) -> bool:
        return relation in self._ridx

    def score(self, triple: Triple) -> float:
        return score(self, triple)

    def rank_completions(self, anchor, relation, direction="tail_query", k=10):
        return rank_completions(self, anchor, relation, direction, k)

    def score_many(self, heads: np.ndarray, rels: np.ndarray, tails: np.ndarray) -> np.ndarray:
        e, r = self._e64, self._r64
        return -np.linalg.norm(e[heads] + r[rels] - e[tails], axis=1)


def score(model: EmbeddingModel, triple: Triple) -> float:
    """Plausibility -||h + r - t||_2 (always <= 0)."""
    h = model.entity_vectors[model.entity_index(triple.head)].astype(np.float64)
    r = model.relation_vectors[model.relation_index(triple.relation)].astype(np.float64)
    t = model.entity_vectors[model.entity_index(triple.tail)].astype(np.float64)
    return -float(np.linalg.norm(h + r - t))


def rank_completions(
    model: EmbeddingModel, anchor: str, relation: str, direction: str = "tail_query", k: int = 10
) -> list[tuple[str, float]]:
    """Score every entity as the missing end of ``(anchor, relation, ?)`` or ``(?, relation, anchor)``.

    Sorted by descending score, ties by entity id; ``k`` is clamped to the
    entity count.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ents = model._e64
    a = ents[model.entity_index(anchor)]
    r = model._r64[model.relation_index(relation)]
    if direction == "tail_query":
        q = a + r
    elif direction == "head_query":
        q = a - r
    else:
        raise ValueError(f"unknown direction {direction!r}")
    n = len(ents)
    k = min(k, n)
    # squared distances via one mat-vec; the exact norm is only evaluated on
    # the short list, with a slack so rounding cannot drop a tied entity
    approx = model._e_sq - 2.0 * (ents @ q) + q @ q
    if k < n:
        kth = np.partition(approx, k - 1)[k - 1]
        cand = np.flatnonzero(approx <= kth + 1e-9 * (1.0 + abs(kth)))
    else:
        cand = np.arange(n)
    scores = -np.linalg.norm(ents[cand] - q, axis=1)
    # candidates are in id order, so a stable sort on -score breaks ties by id
    order = np.argsort(-scores, kind="stable")[:k]
    return [(model.entities[cand[i]], float(scores[i])) for i in order]


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


def _encode(h: np.ndarray, r: np.ndarray, t: np.ndarray, n_ent: int, n_rel: int) -> np.ndarray:
    return (h.astype(np.int64) * n_rel + r) * n_ent + t


def train(
    graph: KnowledgeGraph,
    hyperparams: Hyperparams | None = None,
    *,
    on_epoch: Callable[[int, EmbeddingModel], None] | None = None,
) -> EmbeddingModel:
    """Margin-ranking minibatch SGD with filtered uniform negative sampling.

    Each negative corrupts the head or the tail with probability 1/2 and is
    resampled (up to a few times) if it happens to be a true triple. Entity
    vectors are renormalized to unit length after every epoch.
    """
    hp = hyperparams or Hyperparams()
    if not graph.triples:
        raise ValueError("cannot train an embedding model on a graph with no triples")
    entities = graph.sorted_entities
    relations = tuple(sorted(graph.relations))
    eidx = {e: i for i, e in enumerate(entities)}
    ridx = {r: i for i, r in enumerate(relations)}
    trip = np.array(
        [(eidx[t.head], ridx[t.relation], eidx[t.tail]) for t in graph.sorted_triples],
        dtype=np.int64,
    )
    n_ent, n_rel = len(entities), len(relations)
    known = np.sort(_encode(trip[:, 0], trip[:, 1], trip[:, 2], n_ent, n_rel))

    rng = np.random.default_rng(hp.seed)
    bound = 6.0 / np.sqrt(hp.dim)
    E = _normalize_rows(rng.uniform(-bound, bound, (n_ent, hp.dim)))
    R = _normalize_rows(rng.uniform(-bound, bound, (n_rel, hp.dim)))
    lr, margin = hp.learning_rate, hp.margin

    def is_known(h, r, t):
        codes = _encode(h, r, t, n_ent, n_rel)
        pos = np.searchsorted(known, codes)
        pos[pos >= len(known)] = 0
        return known[pos] == codes

    for epoch in range(hp.epochs):
        perm = rng.permutation(len(trip))
        for start in range(0, len(perm), hp.batch_size):
            batch = trip[perm[start : start + hp.batch_size]]
            pos = np.repeat(batch, hp.negatives_per_positive, axis=0)
            neg = pos.copy()
            corrupt_head = rng.random(len(neg)) < 0.5
            neg[corrupt_head, 0] = rng.integers(0, n_ent, corrupt_head.sum())
            neg[~corrupt_head, 2] = rng.integers(0, n_ent, (~corrupt_head).sum())
            for _ in range(5):
                bad = is_known(neg[:, 0], neg[:, 1], neg[:, 2])
                if not bad.any():
                    break
                hb = bad & corrupt_head
                tb = bad & ~corrupt_head
                neg[hb, 0] = rng.integers(0, n_ent, hb.sum())
                neg[tb, 2] = rng.integers(0, n_ent, tb.sum())

            dp = E[pos[:, 0]] + R[pos[:, 1]] - E[pos[:, 2]]
            dn = E[neg[:, 0]] + R[neg[:, 1]] - E[neg[:, 2]]
            np_ = np.linalg.norm(dp, axis=1)
            nn_ = np.linalg.norm(dn, axis=1)
            active = margin + np_ - nn_ > 0
            if not active.any():
                continue
            gp = dp[active] / np.maximum(np_[active], 1e-12)[:, None]
            gn = dn[active] / np.maximum(nn_[active], 1e-12)[:, None]
            pa, na = pos[active], neg[active]
            gE = np.zeros_like(E)
            gR = np.zeros_like(R)
            np.add.at(gE, pa[:, 0], gp)
            np.add.at(gE, pa[:, 2], -gp)
            np.add.at(gE, na[:, 0], -gn)
            np.add.at(gE, na[:, 2], gn)
            np.add.at(gR, pa[:, 1], gp - gn)
            E -= lr * gE
            R -= lr * gR
        E = _normalize_rows(E)
        if on_epoch is not None:
            on_epoch(epoch, _snapshot(entities, relations, E, R, hp))
    return _snapshot(entities, relations, E, R, hp)


def _snapshot(entities, relations, E, R, hp) -> EmbeddingModel:
    return EmbeddingModel(
        tuple(entities), tuple(relations), E.astype(np.float32), R.astype(np.float32), hp
    )


def hits_at_k(
    model: EmbeddingModel,
    test: list[Triple],
    known: frozenset[Triple] | set[Triple],
    k: int = 10,
) -> tuple[float, float]:
    """Filtered tail-prediction hits@k and the matching random-ranking expectation."""
    ents, rels = model._e64, model._r64
    tails_of: dict[tuple[str, str], set[str]] = {}
    for t in known:
        tails_of.setdefault((t.head, t.relation), set()).add(t.tail)
    hits = 0
    expected = 0.0
    for t in test:
        h = model.entity_index(t.head)
        r = model.relation_index(t.relation)
        target = model.entity_index(t.tail)
        scores = -np.linalg.norm(ents[h] + rels[r] - ents, axis=1)
        mask = np.ones(len(ents), dtype=bool)
        for other in tails_of.get((t.head, t.relation), ()):
            if other != t.tail and model.knows(other):
                mask[model.entity_index(other)] = False
        cands = scores[mask]
        rank = 1 + int((cands > scores[target]).sum())
        hits += rank <= k
        expected += min(1.0, k / mask.sum())
    return hits / len(test), expected / len(test)


def save_model(model: EmbeddingModel, path: str | Path) -> None:
    """Header length (u64 LE) + JSON header + little-endian float32 matrices."""
    header = {
        "dim": model.dim,
        "n_entities": len(model.entities),
        "n_relations": len(model.relations),
        "seed": model.hyperparams.seed,
        "hyperparams": asdict(model.hyperparams),
        "entities": list(model.entities),
        "relations": list(model.relations),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(model.entity_vectors.astype("<f4").tobytes())
        fh.write(model.relation_vectors.astype("<f4").tobytes())


def load_model(path: str | Path) -> EmbeddingModel:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n])
    off = 16 + n
    dim, ne, nr = header["dim"], header["n_entities"], header["n_relations"]
    E = np.frombuffer(data, dtype="<f4", count=ne * dim, offset=off).reshape(ne, dim)
    off += ne * dim * 4
    R = np.frombuffer(data, dtype="<f4", count=nr * dim, offset=off).reshape(nr, dim)
    return EmbeddingModel(
        tuple(header["entities"]),
        tuple(header["relations"]),
        E.astype(np.float32),
        R.astype(np.float32),
        Hyperparams(**header["hyperparams"]),
    )
