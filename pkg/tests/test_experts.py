import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkgrec import kernels
from gkgrec.embed import HashEncoder, build_kg_indexes
from gkgrec.experts import (Empty, Forest, RetrievalBudget, Subgraph, Triples, edge_cost,
                            expert1_direct, expert2_triples, expert3_subgraph, expert4_connected,
                            induced_triples, personalized_pagerank, run_expert, search_batch,
                            spanning_forest)
from gkgrec.kg import KnowledgeGraph

from conftest import random_kg
from oracles import bfs_union, min_spanning_forest_cost, ppr_dense, topm_full_scan


def setup(seed, n=None, m=None, d=32):
    rng = np.random.default_rng(seed)
    kg = random_kg(rng, n, m)
    enc = HashEncoder(d, sublinear=True)
    return rng, kg, enc, build_kg_indexes(kg, enc)


def test_budget_validation():
    with pytest.raises(ValueError):
        RetrievalBudget(m=0)
    with pytest.raises(ValueError):
        RetrievalBudget(ppr_restart=1.0)
    assert RetrievalBudget().c * RetrievalBudget().m == 15


def test_expert1_is_empty():
    k = expert1_direct()
    assert isinstance(k, Empty) and k.to_json() == {"kind": "empty"}


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_expert2_is_the_full_scan_top_cm(seed):
    rng, kg, enc, idx = setup(seed, m=30)
    q = enc.encode(" ".join(rng.choice(kg.entities, 2)))
    b = RetrievalBudget(m=2, c=3)
    k = expert2_triples(idx.triple, q, b)
    ids, scores = topm_full_scan(idx.triple.matrix, q, 6)
    assert k.ids.tolist() == ids and k.scores.tolist() == scores


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.integers(0, 2))
def test_expert3_is_the_bfs_union_of_top_seeds(backend, seed, hops):
    rng, kg, enc, idx = setup(seed)
    q = enc.encode(str(rng.choice(kg.entities)))
    b = RetrievalBudget(m=3, hops=hops)
    k = expert3_subgraph(kg, idx.entity, q, b)
    seeds, _ = topm_full_scan(idx.entity.matrix, q, 3)
    assert k.seeds.tolist() == seeds
    ents, tris = bfs_union(kg.n_entities, kg.heads.tolist(), kg.tails.tolist(), seeds, hops)
    assert k.entities.tolist() == ents and k.triples.tolist() == tris


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_ppr_matches_dense_solve(backend, seed):
    rng = np.random.default_rng(seed)
    kg = random_kg(rng, int(rng.integers(1, 13)))
    seeds = rng.choice(kg.n_entities, size=int(rng.integers(1, min(3, kg.n_entities) + 1)),
                       replace=False)
    s = personalized_pagerank(kg, seeds)
    want = ppr_dense(kg.n_entities, kg.heads, kg.tails, seeds, 0.15)
    assert np.abs(s - want).max() <= 1e-7
    assert abs(s.sum() - 1) <= 1e-9


def test_ppr_restricted_to_components_equals_full_graph_iteration(backend, rng):
    for _ in range(20):
        kg = random_kg(rng, 60, 40)
        seeds = rng.choice(60, size=3, replace=False)
        s, it = personalized_pagerank(kg, seeds, return_iterations=True)
        full, it_full = kernels.ppr(kg.indptr, kg.nbr, seeds, 0.15, 1e-8, 100)
        assert np.allclose(s, full, atol=1e-12, rtol=0)
        assert it == it_full
        lab = kg.component_labels()
        assert np.all(s[~np.isin(lab, lab[seeds])] == 0)


def test_ppr_errors(rng):
    kg = random_kg(rng, 5, 5)
    with pytest.raises(ValueError):
        personalized_pagerank(kg, [])
    with pytest.raises(IndexError):
        personalized_pagerank(kg, [5])


def test_ppr_isolated_seed_keeps_all_mass():
    kg = KnowledgeGraph(["a", "b", "c"], ["r"], [1], [0], [2])
    s = personalized_pagerank(kg, [0])
    assert s.tolist() == [1.0, 0.0, 0.0]


def test_edge_cost_range():
    assert edge_cost([1, 0], [1, 0]) == 0.0
    assert edge_cost([1, 0], [-1, 0]) == 2.0
    assert edge_cost([1, 0], [0, 1]) == 1.0


def test_induced_triples_excludes_loops_and_outside_edges():
    kg = KnowledgeGraph(list("abcd"), ["r"], [0, 1, 2, 1, 0], [0] * 5, [1, 2, 3, 1, 3])
    assert induced_triples(kg, [0, 1, 2]).tolist() == [0, 1]
    assert induced_triples(kg, [3]).tolist() == []


@settings(max_examples=200)
@given(st.integers(0, 2**31))
def test_kruskal_forest_is_minimal(backend, seed):
    rng = np.random.default_rng(seed)
    kg = random_kg(rng, 12, int(rng.integers(0, 20)))
    nodes = np.sort(rng.choice(12, size=int(rng.integers(1, 9)), replace=False))
    tri = induced_triples(kg, nodes)
    if len(tri) > 14:
        tri = tri[:14]
    # few distinct costs, so ties exercise the triple-index order
    costs = rng.integers(0, 4, size=len(tri)) / 4.0
    picked = spanning_forest(nodes, kg.heads[tri], kg.tails[tri], costs, tri)
    local = {int(x): i for i, x in enumerate(nodes)}
    edges = [(local[int(kg.heads[t])], local[int(kg.tails[t])]) for t in tri]
    want = min_spanning_forest_cost(len(nodes), edges, costs.tolist())
    assert abs(costs[picked].sum() - want) <= 1e-9


def test_kruskal_ties_prefer_lower_triple_index():
    kg = KnowledgeGraph(list("ab"), ["r"], [0, 0, 1], [0, 0, 0], [1, 1, 0])
    picked = spanning_forest([0, 1], kg.heads, kg.tails, np.array([0.5, 0.5, 0.5]),
                             np.array([2, 0, 1]))
    assert picked.tolist() == [1]


def is_forest(n_nodes, edges):
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_expert4_forest(backend, seed, budget_nodes):
    rng, kg, enc, idx = setup(seed)
    q = enc.encode(str(rng.choice(kg.entities)))
    b = RetrievalBudget(ppr_nodes=budget_nodes)
    f = expert4_connected(kg, idx, q, b)
    assert isinstance(f, Forest)
    v = f.entities.tolist()
    assert len(v) == min(budget_nodes, kg.n_entities) == len(set(v))
    # descending PPR order, id ascending on ties
    keys = [(-s, e) for s, e in zip(f.ppr_scores, v)]
    assert keys == sorted(keys)
    local = {e: i for i, e in enumerate(v)}
    edges = [(local[int(kg.heads[t])], local[int(kg.tails[t])]) for t in f.edges]
    assert is_forest(len(v), edges)
    tri = induced_triples(kg, v).tolist()
    all_edges = [(local[int(kg.heads[t])], local[int(kg.tails[t])]) for t in tri]
    costs = [edge_cost(q, idx.relation.matrix[kg.rels[t]]) for t in tri]
    assert np.allclose(f.costs, [costs[tri.index(int(t))] for t in f.edges])
    if len(tri) <= 14:
        assert abs(f.total_cost - min_spanning_forest_cost(len(v), all_edges, costs)) <= 1e-9


def test_run_expert_dispatch_and_timing(rng):
    _, kg, enc, idx = setup(7, 40, 80)
    q = enc.encode(kg.entities[3])
    kinds = {1: Empty, 2: Triples, 3: Subgraph, 4: Forest}
    for e, cls in kinds.items():
        k, t = run_expert(e, q, kg, idx, RetrievalBudget())
        assert isinstance(k, cls) and t >= 0
        assert k.to_json(kg)["kind"] == cls.kind
    with pytest.raises(ValueError):
        run_expert(5, q, kg, idx, RetrievalBudget())


def test_search_batch_gives_identical_expert_output(rng):
    _, kg, enc, idx = setup(11, 50, 150)
    b = RetrievalBudget()
    qs = np.stack([enc.encode(t) for t in kg.entities[:20]])
    hits = search_batch(idx, qs, b, chunk=7)
    assert len(hits) == 20 and search_batch(idx, np.zeros((0, enc.dim)), b) == []
    for q, h in zip(qs, hits):
        for e in (2, 3, 4):
            a, _ = run_expert(e, q, kg, idx, b)
            c, t = run_expert(e, q, kg, idx, b, h)
            assert a.to_json(kg) == c.to_json(kg)
            assert t >= (h.triple_s if e == 2 else h.entity_s)


def test_knowledge_json_shapes(tiny_world, tiny_indexes, tiny_encoder):
    kg = tiny_world.kg
    q = tiny_encoder.encode(tiny_world.item_texts[0])
    t = run_expert(2, q, kg, tiny_indexes, RetrievalBudget())[0].to_json(kg)
    assert len(t["triples"]) == 15 and len(t["text"]) == 15 and len(t["scores"]) == 15
    f = run_expert(4, q, kg, tiny_indexes, RetrievalBudget())[0].to_json(kg)
    assert len(f["entities"]) == 20 and len(f["edges"]) == len(f["costs"]) <= 19
