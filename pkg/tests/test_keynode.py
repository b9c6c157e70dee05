import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgaura.graph import KnowledgeGraph, Triple
from kgaura.keynode import (
    BudgetExceeded,
    MvcConfig,
    NodeSet,
    baseline_mvc,
    exact_mvc,
    malatya_centrality,
    malatya_mvc,
    select_key_nodes,
    verify_cover,
)
from oracles import brute_force_mvc, malatya_reference


def from_edges(edges, nodes=()):
    return KnowledgeGraph([Triple(a, "r", b) for a, b in edges], nodes)


def star(n=4):
    return from_edges([("c", f"l{i}") for i in range(n)])


def triangle():
    return from_edges([("a", "b"), ("b", "c"), ("a", "c")])


def random_graph(rng: random.Random, n: int, p: float):
    nodes = [f"n{i:02d}" for i in range(n)]
    edges = [(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1 :] if rng.random() < p]
    return nodes, edges


edge_lists = st.lists(
    st.tuples(st.integers(0, 11), st.integers(0, 11)).map(lambda e: (f"v{e[0]}", f"v{e[1]}")),
    max_size=30,
)


class TestExact:
    def test_path(self):
        ns = exact_mvc(from_edges([("a", "b"), ("b", "c")]))
        assert ns.members == ("b",) and ns.objective == 1 and ns.method == "exact"

    def test_triangle(self):
        assert exact_mvc(triangle()).objective == brute_force_mvc(["a", "b", "c"], [("a", "b"), ("b", "c"), ("a", "c")]) == 2

    def test_star(self):
        assert exact_mvc(star()).members == ("c",)

    def test_self_loop_covers_itself(self):
        g = from_edges([("a", "a"), ("a", "b"), ("c", "d")])
        ns = exact_mvc(g)
        assert "a" in ns.members and ns.objective == 2 and verify_cover(g, ns)

    def test_parallel_edges_collapse(self):
        g = KnowledgeGraph([Triple("a", "r", "b"), Triple("b", "s", "a")])
        assert exact_mvc(g).objective == 1

    def test_empty(self):
        assert exact_mvc(KnowledgeGraph()).objective == 0

    @given(edge_lists)
    @settings(max_examples=150, deadline=None)
    def test_matches_brute_force(self, edges):
        g = from_edges(edges)
        ns = exact_mvc(g)
        assert verify_cover(g, ns)
        assert ns.objective == brute_force_mvc(sorted(g.entities), edges)

    def test_zero_budget_raises_with_incumbent(self):
        rng = random.Random(5)
        nodes, edges = random_graph(rng, 40, 0.2)
        g = from_edges(edges, nodes)
        with pytest.raises(BudgetExceeded) as err:
            exact_mvc(g, 0.0)
        exc = err.value
        assert verify_cover(g, exc.incumbent)
        assert exc.lower_bound <= exc.incumbent.objective and exc.gap >= 0

    def test_node_budget(self):
        rng = random.Random(9)
        nodes, edges = random_graph(rng, 60, 0.15)
        with pytest.raises(BudgetExceeded):
            exact_mvc(from_edges(edges, nodes), node_budget=1)

    def test_deterministic(self):
        rng = random.Random(1)
        nodes, edges = random_graph(rng, 30, 0.2)
        g = from_edges(edges, nodes)
        assert exact_mvc(g) == exact_mvc(g)


class TestMalatya:
    def test_centrality_values_on_star(self):
        # star K1,4 with center index 0
        u = np.array([0, 0, 0, 0])
        v = np.array([1, 2, 3, 4])
        deg = np.array([4.0, 1, 1, 1, 1])
        mc = malatya_centrality(deg, u, v)
        assert mc[0] == pytest.approx(16.0)
        assert mc[1:] == pytest.approx([0.25] * 4)

    def test_star_picks_center(self):
        assert malatya_mvc(star()).members == ("c",)

    def test_triangle_tie_break(self):
        ns = malatya_mvc(triangle())
        assert ns.objective == 2 and ns.members == ("a", "b")

    def test_edgeless(self):
        assert malatya_mvc(KnowledgeGraph([], ["x", "y"])).objective == 0

    @given(edge_lists)
    @settings(max_examples=100, deadline=None)
    def test_matches_reference(self, edges):
        g = from_edges(edges)
        assert list(malatya_mvc(g).members) == malatya_reference(edges)


class TestBaselines:
    def test_edge_greedy_single_edge(self):
        assert baseline_mvc(from_edges([("a", "b")]), "edge_greedy").members == ("a", "b")

    def test_degree_greedy_star(self):
        assert baseline_mvc(star(), "degree_greedy").members == ("c",)

    @given(edge_lists)
    @settings(max_examples=80, deadline=None)
    def test_edge_greedy_two_approximation(self, edges):
        g = from_edges(edges)
        opt = exact_mvc(g).objective
        assert baseline_mvc(g, "edge_greedy").objective <= 2 * opt

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            baseline_mvc(star(), "beam")


class TestSelect:
    def test_dispatch_exact(self):
        rng = random.Random(0)
        nodes, edges = random_graph(rng, 10, 0.3)
        assert select_key_nodes(from_edges(edges, nodes)).method == "exact"

    def test_dispatch_malatya(self):
        g = from_edges([(f"a{i}", f"b{i}") for i in range(2500)])
        assert len(g.entities) == 5000
        assert select_key_nodes(g, MvcConfig(exact_node_threshold=2000)).method == "malatya"

    def test_fallback_recorded(self):
        rng = random.Random(2)
        nodes, edges = random_graph(rng, 80, 0.1)
        ns = select_key_nodes(from_edges(edges, nodes), MvcConfig(time_budget=0.0))
        assert ns.method == "malatya" and ns.fallback_from == "exact"

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            MvcConfig(exact_node_threshold=-1)


class TestVerifyAndExport:
    def test_all_entities_cover(self):
        g = triangle()
        assert verify_cover(g, g.entities)

    def test_empty_candidate_fails(self):
        assert not verify_cover(from_edges([("a", "b")]), [])

    def test_json_shape(self):
        ns = exact_mvc(star())
        d = json.loads(ns.to_json())
        assert d == {"method": "exact", "objective": 1, "members": ["c"]}
        assert NodeSet.from_dict(d) == ns


@pytest.mark.parametrize("seed", range(5))
def test_all_producers_cover(seed):
    rng = random.Random(seed)
    nodes, edges = random_graph(rng, 14, 0.3)
    g = from_edges(edges, nodes)
    for ns in (exact_mvc(g), malatya_mvc(g), baseline_mvc(g, "degree_greedy"), baseline_mvc(g, "edge_greedy", seed)):
        assert verify_cover(g, ns)
