import base64
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgaura.graph import ADULTERANT, ORIGINAL, KnowledgeGraph, Triple, inject
from kgaura.retrieve import build_dense_index, retrieve_symbolic
from kgaura.seal import (
    AuthenticationError,
    FlagFormatError,
    OwnerKey,
    SealedGraph,
    SealError,
    authorized_retrieve,
    clean_view,
    decrypt_all,
    decrypt_flag,
    encrypt_flag,
    filter_context,
    load_key,
    node_aad,
    seal,
    triple_aad,
)

KEY = OwnerKey(bytes(range(32)))
OTHER = OwnerKey(bytes(32))


def adulterated(movie_graph):
    clone = [
        Triple("Inception", "directed_by", "Nolan II"),
        Triple("Nolan II", "born_in", "London"),
    ]
    fake_edge = Triple("Heat", "directed_by", "Nolan")
    return inject(movie_graph, clone + [fake_edge], ["Nolan II"]), set(clone), fake_edge


class TestFlagCipher:
    @pytest.mark.parametrize("flag,name", [(0, ORIGINAL), (1, ADULTERANT)])
    def test_roundtrip(self, flag, name):
        assert decrypt_flag(encrypt_flag(flag, KEY, b"x"), KEY, b"x") == name

    def test_wrong_key(self):
        with pytest.raises(AuthenticationError):
            decrypt_flag(encrypt_flag(1, KEY), OTHER)

    def test_wrong_aad(self):
        ct = encrypt_flag(1, KEY, node_aad("a"))
        with pytest.raises(AuthenticationError):
            decrypt_flag(ct, KEY, node_aad("b"))

    @given(st.integers(0, 39), st.integers(1, 255), st.sampled_from([0, 1]))
    @settings(max_examples=80, deadline=None)
    def test_any_bit_flip_detected(self, pos, mask, flag):
        raw = bytearray(base64.b64decode(encrypt_flag(flag, KEY, b"aad")))
        raw[pos % len(raw)] ^= mask
        with pytest.raises(AuthenticationError):
            decrypt_flag(base64.b64encode(bytes(raw)).decode(), KEY, b"aad")

    @pytest.mark.parametrize("bad", ["", "@@@@", "abc", "QUJD" * 10, "A" * 39 + "!"])
    def test_format_errors(self, bad):
        with pytest.raises(FlagFormatError):
            decrypt_flag(bad, KEY)

    def test_uniform_length_and_fresh_nonces(self):
        cts = {encrypt_flag(f, KEY) for f in (0, 1) for _ in range(50)}
        assert len(cts) == 100
        assert {len(c) for c in cts} == {40}

    def test_bad_flag_value(self):
        with pytest.raises(SealError):
            encrypt_flag(2, KEY)


class TestKeys:
    def test_length_enforced(self):
        with pytest.raises(ValueError):
            OwnerKey(b"short")

    def test_hex_and_file(self, tmp_path, monkeypatch):
        k = OwnerKey.generate()
        p = tmp_path / "k.hex"
        p.write_text(k.hex() + "\n")
        assert load_key(p) == k
        monkeypatch.setenv("KG_AURA_KEY", k.hex())
        assert load_key() == k

    def test_missing_key(self):
        with pytest.raises(SealError):
            load_key()

    def test_key_id_not_key(self):
        assert KEY.key_id and KEY.hex() not in KEY.key_id


class TestSeal:
    def test_every_element_flagged(self, movie_graph):
        g, _, _ = adulterated(movie_graph)
        s = seal(g, key=KEY)
        assert set(s.node_flags) == g.entities
        assert set(s.triple_flags) == {t.triple_id for t in g.triples}
        assert not s.graph.adulterant_triples and not s.graph.adulterant_entities

    def test_perfect_reconstruction(self, movie_graph):
        g, clone, fake_edge = adulterated(movie_graph)
        s = SealedGraph.from_bytes(seal(g, key=KEY).to_bytes())
        nodes, trips = decrypt_all(s, KEY)
        assert nodes == {"Nolan II"} and trips == clone | {fake_edge}
        assert clean_view(s, KEY) == movie_graph

    @given(st.integers(0, 2**31), st.integers(0, 5))
    @settings(max_examples=25, deadline=None)
    def test_reconstruction_property(self, seed, k):
        import random

        rng = random.Random(seed)
        base = KnowledgeGraph([Triple(f"n{rng.randrange(12)}", "r", f"n{rng.randrange(12)}") for _ in range(20)])
        fakes = set()
        while len(fakes) < k:
            t = Triple(f"n{rng.randrange(12)}", "f", f"n{rng.randrange(12)}")
            if t not in base.triples and {t.head, t.tail} <= base.entities:
                fakes.add(t)
        g = inject(base, sorted(fakes))
        assert decrypt_all(seal(g, key=KEY), KEY) == (set(), fakes)

    def test_deterministic_nonces(self, movie_graph):
        g, _, _ = adulterated(movie_graph)
        a = seal(g, key=KEY, nonce_seed=1).to_bytes()
        assert a == seal(g, key=KEY, nonce_seed=1).to_bytes()
        assert a != seal(g, key=KEY, nonce_seed=2).to_bytes()
        assert a != seal(g, key=KEY).to_bytes()

    def test_no_plaintext_leak(self, movie_graph):
        g, _, _ = adulterated(movie_graph)
        text = seal(g, key=KEY).to_bytes().decode()
        assert "adulterant" not in text and "original" not in text

    def test_uninjected_adulterants_rejected(self, movie_graph):
        with pytest.raises(SealError):
            seal(movie_graph, [Triple("Heat", "directed_by", "Nolan")], KEY)

    def test_missing_key(self, movie_graph):
        with pytest.raises(SealError):
            seal(movie_graph)

    def test_custom_property_and_file(self, tmp_path, movie_graph):
        s = seal(movie_graph, key=KEY, property_name="note")
        path = tmp_path / "s.json"
        s.save(path)
        back = SealedGraph.load(path)
        assert back.property_name == "note" and back.graph == movie_graph
        assert back.key_id == KEY.key_id

    def test_missing_property_rejected(self, movie_graph):
        from kgaura.graph import serialize

        with pytest.raises(SealError):
            SealedGraph.from_bytes(serialize(movie_graph, "property-json"))

    def test_flags_bound_to_elements(self, movie_graph):
        s = seal(movie_graph, key=KEY)
        a, b = "Nolan", "Mann"
        s.node_flags[a], s.node_flags[b] = s.node_flags[b], s.node_flags[a]
        with pytest.raises(AuthenticationError):
            decrypt_all(s, KEY)


class TestFilter:
    def test_hierarchical_economy(self, movie_graph):
        g, clone, fake_edge = adulterated(movie_graph)
        s = seal(g, key=KEY)
        ctx = retrieve_symbolic("Inception", s)
        assert Triple("Inception", "directed_by", "Nolan II") in ctx.triples
        out = filter_context(ctx, KEY)
        assert "Nolan II" not in out.nodes
        assert all("Nolan II" not in (t.head, t.tail) for t in out.triples)
        touching = sum(1 for t in ctx.triples if "Nolan II" in (t.head, t.tail))
        assert touching >= 1
        assert out.decryptions == len(ctx.nodes) + len(ctx.triples) - touching

    def test_filter_equals_clean_retrieval(self, movie_graph):
        g, _, _ = adulterated(movie_graph)
        s = seal(g, key=KEY)
        for q in ("Heat", "Inception", "Nolan", "London", "Mann"):
            got = filter_context(retrieve_symbolic(q, s), KEY)
            want = retrieve_symbolic(q, movie_graph)
            assert got.same_content(want), q

    def test_noop_when_clean(self, movie_graph):
        s = seal(movie_graph, key=KEY)
        ctx = retrieve_symbolic("Nolan", s)
        out = filter_context(ctx, KEY)
        assert out.same_content(ctx) and out.decryptions == len(ctx.nodes) + len(ctx.triples)

    def test_wrong_key_raises(self, movie_graph):
        s = seal(movie_graph, key=KEY)
        with pytest.raises(AuthenticationError):
            filter_context(retrieve_symbolic("Nolan", s), OTHER)

    def test_unsealed_context_rejected(self, movie_graph):
        with pytest.raises(SealError):
            filter_context(retrieve_symbolic("Nolan", movie_graph), KEY)

    def test_two_hop_reprune(self):
        base = KnowledgeGraph([Triple("a", "r", "b"), Triple("c", "r", "d")])
        g = inject(base, [Triple("a", "r", "c")])
        s = seal(g, key=KEY)
        ctx = retrieve_symbolic("a", s, hops=2)
        assert Triple("c", "r", "d") in ctx.triples
        out = filter_context(ctx, KEY)
        assert out.same_content(retrieve_symbolic("a", base, hops=2))

    @pytest.mark.parametrize("retriever", ["dense", "hybrid"])
    def test_authorized_dense_matches_clean(self, small_kg, retriever):
        from kgaura.genpool import MockNameProvider, gen_node_candidates

        keys = sorted(small_kg.entities)[:10]
        cands = gen_node_candidates(MockNameProvider(), small_kg, keys)
        g = inject(small_kg, [t for c in cands for t in c.triples], [c.fake_entity for c in cands])
        s = seal(g, key=KEY)
        idx_s, idx_c = build_dense_index(s), build_dense_index(small_kg)
        from kgaura.retrieve import retrieve

        for c in cands:
            got = authorized_retrieve(c.key_node, s, KEY, retriever, index=idx_s, top_k=2)
            want = retrieve(c.key_node, small_kg, retriever, index=idx_c, top_k=2)
            assert got.same_content(want)
            assert got.decryptions > 0


def test_key_bytes_not_in_output(movie_graph):
    key = OwnerKey(os.urandom(32))
    data = seal(movie_graph, key=key).to_bytes()
    assert key.hex().encode() not in data and key.key not in data
    assert triple_aad(Triple("a", "r", "b")).startswith(b"edge\x1f")
