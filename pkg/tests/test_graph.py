import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgaura.graph import (
    ADULTERANT,
    ORIGINAL,
    AdulterantError,
    GraphError,
    KnowledgeGraph,
    NotFoundError,
    ParseError,
    Triple,
    inject,
    neighborhood,
    parse_property_json,
    parse_triples,
    serialize,
)
from oracles import brute_neighborhood

names = st.sampled_from([f"e{i}" for i in range(8)])
rels = st.sampled_from(["r", "s", "t"])
triples = st.builds(Triple, names, rels, names)
graphs = st.lists(triples, max_size=25).map(KnowledgeGraph)


def path_graph():
    return KnowledgeGraph([Triple("a", "r", "b"), Triple("b", "r", "c")])


class TestParse:
    def test_single_line(self):
        g = parse_triples(b"Inception\tdirected_by\tNolan\n")
        assert len(g.entities) == 2 and len(g.relations) == 1 and len(g.triples) == 1

    def test_duplicates_collapse(self):
        g = parse_triples("a\tr\tb\na\tr\tb\n")
        assert len(g) == 1

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(ParseError) as err:
            parse_triples("a\tb")
        assert err.value.line == 1
        with pytest.raises(ParseError) as err:
            parse_triples("a\tr\tb\n\nx\ty\n")
        assert err.value.line == 3

    def test_empty_input_is_empty_graph(self):
        g = parse_triples("")
        assert len(g) == 0 and not g.entities

    def test_stream_sources(self):
        assert len(parse_triples(io.BytesIO(b"a\tr\tb\n"))) == 1
        assert len(parse_triples(io.StringIO("a\tr\tb\r\n"))) == 1

    def test_ntriples(self):
        text = (
            "# comment\n"
            '<http://x/a> <http://x/p> <http://x/b> .\n'
            '<http://x/a> <http://x/name> "Alpha \\"A\\""@en .\n'
            "_:n1 <http://x/p> <http://x/a> .\n"
        )
        g = parse_triples(text, "ntriples")
        assert len(g) == 3
        assert '"Alpha \\"A\\""@en' in g.entities

    def test_ntriples_missing_dot(self):
        with pytest.raises(ParseError):
            parse_triples("<a> <b> <c>\n", "ntriples")

    def test_bad_ids_rejected(self):
        with pytest.raises(GraphError):
            Triple("", "r", "b")
        with pytest.raises(GraphError):
            Triple("a\tb", "r", "c")


class TestTriple:
    def test_id_is_pure(self):
        assert Triple("a", "r", "b").triple_id == Triple("a", "r", "b").triple_id
        assert Triple("a", "r", "b").triple_id != Triple("b", "r", "a").triple_id
        assert len(Triple("a", "r", "b").triple_id) == 16


class TestNeighborhood:
    def test_center_b_one_hop(self):
        sub = neighborhood(path_graph(), "b", 1)
        assert sub.triples == {Triple("a", "r", "b"), Triple("b", "r", "c")}

    def test_center_a_one_hop(self):
        assert neighborhood(path_graph(), "a", 1).triples == {Triple("a", "r", "b")}

    def test_center_a_two_hops(self):
        assert len(neighborhood(path_graph(), "a", 2).triples) == 2

    def test_errors(self):
        with pytest.raises(NotFoundError):
            neighborhood(path_graph(), "zzz", 1)
        with pytest.raises(GraphError):
            neighborhood(path_graph(), "a", 0)

    @given(graphs, st.integers(1, 3), st.data())
    @settings(max_examples=60, deadline=None)
    def test_matches_bfs_oracle(self, g, hops, data):
        if not g.entities:
            return
        center = data.draw(st.sampled_from(sorted(g.entities)))
        assert neighborhood(g, center, hops).triples == brute_neighborhood(g, [center], hops)


class TestInject:
    def test_edge_adulterant(self):
        g = KnowledgeGraph([Triple("a", "r", "b")])
        fake = Triple("a", "r", "c")
        g2 = inject(KnowledgeGraph([Triple("a", "r", "b")], ["c"]), [fake])
        assert len(g2) == 2
        assert g2.provenance(Triple("a", "r", "b")) == ORIGINAL
        assert g2.provenance(fake) == ADULTERANT
        assert len(g) == 1

    def test_empty_set_is_identity(self):
        g = path_graph()
        assert inject(g, []) == g

    def test_node_clone_counts(self):
        g = KnowledgeGraph([Triple("v", "r1", "a"), Triple("b", "r2", "v"), Triple("v", "r3", "c")])
        clone = [Triple("v2", "r1", "a"), Triple("b", "r2", "v2"), Triple("v2", "r3", "c")]
        g2 = inject(g, clone, ["v2"])
        assert len(g2.entities) == len(g.entities) + 1
        assert len(g2) == len(g) + 3
        assert g2.provenance("v2") == ADULTERANT and g2.provenance("v") == ORIGINAL

    def test_duplicate_original_rejected(self):
        with pytest.raises(AdulterantError):
            inject(path_graph(), [Triple("a", "r", "b")])

    def test_unknown_endpoint_rejected(self):
        with pytest.raises(AdulterantError):
            inject(path_graph(), [Triple("a", "r", "nowhere")])

    def test_existing_fake_entity_rejected(self):
        with pytest.raises(AdulterantError):
            inject(path_graph(), [], ["a"])

    @given(graphs, st.lists(triples, max_size=10))
    @settings(max_examples=60, deadline=None)
    def test_monotone_and_consistent(self, g, extra):
        fresh = {t for t in extra if t not in g.triples}
        ends = {e for t in fresh for e in (t.head, t.tail)} - g.entities
        g2 = inject(g, sorted(fresh), ends)
        assert len(g2) == len(g) + len(fresh)
        assert g2.adjacency_consistent()
        assert g2.adulterant_triples == fresh


class TestSerialize:
    def test_one_triple_tsv(self):
        out = serialize(KnowledgeGraph([Triple("a", "r", "b")]))
        assert out == b"a\tr\tb\n"

    def test_provenance_never_written(self):
        g = inject(KnowledgeGraph([Triple("a", "r", "b")], ["c"]), [Triple("a", "r", "c")])
        text = serialize(g, "property-json").decode()
        assert "adulterant" not in text and "original" not in text

    @given(st.lists(triples, min_size=1, max_size=100))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip(self, ts):
        g = KnowledgeGraph(ts)
        assert parse_triples(serialize(g, "tsv")) == g
        g2, _, _, _ = parse_property_json(serialize(g, "property-json"))
        assert g2 == g

    def test_property_json_roundtrip_with_properties(self):
        g = KnowledgeGraph([Triple("a", "r", "b")], ["lonely"])
        t = Triple("a", "r", "b")
        data = serialize(
            g, "property-json", node_properties={"a": {"remark": "x"}},
            triple_properties={t.triple_id: {"remark": "y"}}, header={"k": 1},
        )
        g2, nprops, tprops, header = parse_property_json(data)
        assert g2 == g and "lonely" in g2.entities
        assert nprops == {"a": {"remark": "x"}} and tprops == {t.triple_id: {"remark": "y"}}
        assert header == {"k": 1}

    @given(graphs)
    @settings(max_examples=30, deadline=None)
    def test_deterministic_bytes(self, g):
        g_again = KnowledgeGraph(sorted(g.triples, reverse=True), g.entities)
        assert serialize(g, "property-json") == serialize(g_again, "property-json")
        assert serialize(g) == serialize(g_again)

    def test_bad_property_json(self):
        with pytest.raises(ParseError):
            parse_property_json("{not json")
        with pytest.raises(ParseError):
            parse_property_json("[]")


@given(graphs)
@settings(max_examples=50, deadline=None)
def test_adjacency_consistency(g):
    assert g.adjacency_consistent()
    for e in g.entities:
        assert set(g.incident(e)) == {t for t in g.triples if e in (t.head, t.tail)}
