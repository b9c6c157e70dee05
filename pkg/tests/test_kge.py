import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgaura.graph import KnowledgeGraph, Triple
from kgaura.kge import (
    EmbeddingModel,
    Hyperparams,
    UnknownIdError,
    hits_at_k,
    load_model,
    rank_completions,
    save_model,
    score,
    train,
)
from oracles import transe_score


def tiny_model(e_vecs, r_vecs, ents=None, rels=None):
    e = np.asarray(e_vecs, dtype=np.float32)
    r = np.asarray(r_vecs, dtype=np.float32)
    ents = ents or tuple(f"e{i}" for i in range(len(e)))
    rels = rels or tuple(f"r{i}" for i in range(len(r)))
    return EmbeddingModel(tuple(ents), tuple(rels), e, r, Hyperparams(dim=e.shape[1]))


class TestScore:
    def test_perfect_translation_scores_zero(self):
        m = tiny_model([[0, 0], [1, 0]], [[1, 0]])
        assert score(m, Triple("e0", "r0", "e1")) == pytest.approx(0.0)

    def test_three_four_five(self):
        m = tiny_model([[0, 0], [0, 0]], [[3, 4]])
        assert score(m, Triple("e0", "r0", "e1")) == pytest.approx(-5.0)

    def test_unknown_ids(self):
        m = tiny_model([[0, 0]], [[1, 0]])
        with pytest.raises(UnknownIdError):
            score(m, Triple("e0", "r0", "nope"))
        with pytest.raises(UnknownIdError):
            score(m, Triple("e0", "missing", "e0"))

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = tiny_model(rng.normal(size=(5, 4)), rng.normal(size=(2, 4)))
        h, r, t = rng.integers(0, 5), rng.integers(0, 2), rng.integers(0, 5)
        ref = transe_score(m.entity_vectors[h], m.relation_vectors[r], m.entity_vectors[t])
        assert score(m, Triple(f"e{h}", f"r{r}", f"e{t}")) == pytest.approx(ref, rel=1e-6, abs=1e-6)
        assert score(m, Triple(f"e{h}", f"r{r}", f"e{t}")) <= 0


class TestRank:
    def test_order_and_ties(self):
        m = tiny_model([[0, 0], [1, 0], [1, 0], [5, 5]], [[1, 0]])
        ranked = rank_completions(m, "e0", "r0", "tail_query", 3)
        assert [e for e, _ in ranked] == ["e1", "e2", "e0"]
        assert ranked[0][1] == pytest.approx(0.0)

    def test_head_query(self):
        m = tiny_model([[0, 0], [1, 0], [2, 0]], [[1, 0]])
        assert rank_completions(m, "e1", "r0", "head_query", 1)[0][0] == "e0"

    def test_k_clamped_and_validated(self):
        m = tiny_model([[0, 0], [1, 0]], [[1, 0]])
        assert len(rank_completions(m, "e0", "r0", "tail_query", 99)) == 2
        with pytest.raises(ValueError):
            rank_completions(m, "e0", "r0", "tail_query", 0)
        with pytest.raises(ValueError):
            rank_completions(m, "e0", "r0", "sideways", 1)

    @given(st.integers(0, 10_000), st.integers(1, 30), st.sampled_from(["tail_query", "head_query"]))
    @settings(max_examples=60, deadline=None)
    def test_matches_exhaustive_sort(self, seed, k, direction):
        rng = np.random.default_rng(seed)
        # quantized vectors create plenty of exact ties
        m = tiny_model(rng.integers(-2, 3, size=(25, 3)), rng.integers(-1, 2, size=(2, 3)))
        anchor = f"e{rng.integers(0, 25)}"
        full = []
        for e in m.entities:
            t = Triple(anchor, "r1", e) if direction == "tail_query" else Triple(e, "r1", anchor)
            full.append((e, score(m, t)))
        full.sort(key=lambda p: (-p[1], m.entity_index(p[0])))
        got = rank_completions(m, anchor, "r1", direction, k)
        assert [e for e, _ in got] == [e for e, _ in full[:k]]
        assert [s for _, s in got] == pytest.approx([s for _, s in full[:k]])


class TestTraining:
    def test_deterministic(self, small_kg):
        hp = Hyperparams(dim=16, epochs=5, seed=4)
        a, b = train(small_kg, hp), train(small_kg, hp)
        assert np.array_equal(a.entity_vectors, b.entity_vectors)
        assert np.array_equal(a.relation_vectors, b.relation_vectors)

    def test_entity_vectors_unit_norm(self, small_model):
        norms = np.linalg.norm(small_model.entity_vectors, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)

    def test_vocabulary_covers_graph(self, small_kg, small_model):
        assert set(small_model.entities) == small_kg.entities
        assert set(small_model.relations) == small_kg.relations

    def test_empty_graph_rejected(self):
        with pytest.raises(ValueError):
            train(KnowledgeGraph([], ["a"]))

    def test_learns_toy_structure(self):
        ts = [Triple(f"p{i}", "likes", f"q{i}") for i in range(6)]
        ts += [Triple(f"q{i}", "near", f"p{(i + 1) % 6}") for i in range(6)]
        m = train(KnowledgeGraph(ts), Hyperparams(dim=16, epochs=300, learning_rate=0.05, seed=0))
        pos = np.mean([score(m, t) for t in ts])
        neg = np.mean([score(m, Triple(f"p{i}", "likes", f"p{(i + 2) % 6}")) for i in range(6)])
        assert pos > neg

    def test_beats_random_hits(self, small_kg, small_model):
        test = sorted(small_kg.triples)[:100]
        hits, expected = hits_at_k(small_model, test, small_kg.triples, 10)
        assert hits > expected

    def test_on_epoch_callback(self, small_kg):
        seen = []
        train(small_kg, Hyperparams(dim=8, epochs=3), on_epoch=lambda ep, m: seen.append(ep))
        assert seen == [0, 1, 2]


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, small_model, small_kg):
        path = tmp_path / "m.kge"
        save_model(small_model, path)
        loaded = load_model(path)
        assert loaded.entities == small_model.entities
        assert loaded.relations == small_model.relations
        assert loaded.hyperparams == small_model.hyperparams
        assert np.array_equal(loaded.entity_vectors, small_model.entity_vectors)
        t = sorted(small_kg.triples)[0]
        assert score(loaded, t) == score(small_model, t)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk"
        p.write_bytes(b"not a model at all")
        with pytest.raises(ValueError):
            load_model(p)


def test_score_is_negative_distance():
    m = tiny_model([[0.5, 0.5], [-1, 2]], [[0.25, -3]])
    want = -math.dist([0.5 + 0.25, 0.5 - 3], [-1, 2])
    assert score(m, Triple("e0", "r0", "e1")) == pytest.approx(want, rel=1e-6)
