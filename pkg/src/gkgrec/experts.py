"""The four retrieval experts, from no retrieval up to PPR-pruned spanning forests."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .embed import DimensionError, KGIndexes, VectorIndex, top_m, top_m_batch
from .kg import KnowledgeGraph, adjacency_slots

EXPERT_IDS = (1, 2, 3, 4)
EXPERT_NAMES = {
    1: "DirectGenerator",
    2: "TripleRetriever",
    3: "SubgraphRetriever",
    4: "ConnectedGraphRetriever",
}


@dataclass(frozen=True)
class RetrievalBudget:
    m: int = 3
    c: int = 5
    hops: int = 1
    ppr_nodes: int = 20
    ppr_restart: float = 0.15
    ppr_tol: float = 1e-8
    ppr_max_iter: int = 100

    def __post_init__(self):
        if self.m < 1 or self.c < 1 or self.hops < 0 or self.ppr_nodes < 1:
            raise ValueError(f"invalid retrieval budget {self}")
        if not 0.0 < self.ppr_restart < 1.0:
            raise ValueError("ppr_restart must lie in (0, 1)")


# -- retrieved knowledge variants -----------------------------------------

@dataclass(frozen=True)
class Empty:
    kind = "empty"

    def to_json(self, kg=None) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Triples:
    ids: np.ndarray
    scores: np.ndarray
    kind = "triples"

    def to_json(self, kg=None) -> dict:
        out = {"kind": self.kind, "triples": [int(i) for i in self.ids],
               "scores": [float(s) for s in self.scores]}
        if kg is not None:
            out["text"] = [list(kg.triple_texts(int(i))) for i in self.ids]
        return out


@dataclass(frozen=True)
class Subgraph:
    entities: np.ndarray
    triples: np.ndarray
    seeds: np.ndarray
    kind = "subgraph"

    def to_json(self, kg=None) -> dict:
        return {"kind": self.kind, "seeds": [int(s) for s in self.seeds],
                "entities": [int(e) for e in self.entities],
                "triples": [int(t) for t in self.triples]}


@dataclass(frozen=True)
class Forest:
    entities: np.ndarray  # V_PPR, in descending PPR order
    edges: np.ndarray  # triple indices, in Kruskal acceptance order
    costs: np.ndarray
    seeds: np.ndarray
    ppr_scores: np.ndarray = field(default=None, compare=False)
    kind = "forest"

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())

    def to_json(self, kg=None) -> dict:
        return {"kind": self.kind, "seeds": [int(s) for s in self.seeds],
                "entities": [int(e) for e in self.entities],
                "edges": [int(t) for t in self.edges],
                "costs": [float(c) for c in self.costs]}


RetrievedKnowledge = Empty | Triples | Subgraph | Forest


# -- experts ---------------------------------------------------------------

def expert1_direct() -> Empty:
    return Empty()


def expert2_triples(index: VectorIndex, z_q, budget: RetrievalBudget, hits=None) -> Triples:
    ids, scores = hits if hits is not None else top_m(index, z_q, budget.c * budget.m)
    return Triples(ids, scores)


def seed_entities(index: VectorIndex, z_q, budget: RetrievalBudget) -> np.ndarray:
    ids, _ = top_m(index, z_q, budget.m)
    return ids


def expert3_subgraph(kg: KnowledgeGraph, index_entities: VectorIndex, z_q,
                     budget: RetrievalBudget, seeds=None) -> Subgraph:
    if seeds is None:
        seeds = seed_entities(index_entities, z_q, budget)
    ents, tris = kernels.k_hop(kg.indptr, kg.nbr, kg.nbr_tri, seeds, budget.hops)
    return Subgraph(ents, tris, seeds)


def personalized_pagerank(kg: KnowledgeGraph, seeds, restart: float = 0.15,
                          tol: float = 1e-8, max_iter: int = 100,
                          return_iterations: bool = False):
    """Random walk with restart to ``seeds`` on the undirected triple graph."""
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size == 0:
        raise ValueError("PPR needs at least one seed")
    if seeds.min() < 0 or seeds.max() >= kg.n_entities:
        raise IndexError("seed out of range")
    # mass never leaves the seeds' components, so iterate on those alone
    nodes, indptr, nbr = kg.component_csr(seeds)
    local, it = kernels.ppr(indptr, nbr, np.searchsorted(nodes, seeds), restart, tol, max_iter)
    scores = np.zeros(kg.n_entities)
    scores[nodes] = local
    return (scores, it) if return_iterations else scores


def edge_cost(z_q, z_relation) -> float:
    a = np.asarray(z_q, dtype=np.float64)
    b = np.asarray(z_relation, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(1.0 - a @ b, 0.0, 2.0))


def induced_triples(kg: KnowledgeGraph, nodes) -> np.ndarray:
    """Sorted indices of non-loop triples with both endpoints in ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    inside = np.zeros(kg.n_entities, dtype=bool)
    inside[nodes] = True
    slots = adjacency_slots(kg.indptr, nodes)
    tri = kg.nbr_tri[slots[inside[kg.nbr[slots]]]]
    tri = np.unique(tri)
    return tri[kg.heads[tri] != kg.tails[tri]]


def spanning_forest(nodes, eu, ev, costs, tri_ids):
    """Kruskal over an edge list in global entity ids.

    Edges are taken in order of ascending cost, then ascending triple index.
    Returns the positions (into the input arrays) of the accepted edges.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    local = {int(n): i for i, n in enumerate(nodes)}
    order = np.lexsort((np.asarray(tri_ids), np.asarray(costs)))
    lu = np.array([local[int(eu[i])] for i in order], dtype=np.int64)
    lv = np.array([local[int(ev[i])] for i in order], dtype=np.int64)
    keep = kernels.kruskal(len(nodes), lu, lv)
    return order[keep]


def expert4_connected(kg: KnowledgeGraph, indexes: KGIndexes, z_q,
                      budget: RetrievalBudget, seeds=None) -> Forest:
    if seeds is None:
        seeds = seed_entities(indexes.entity, z_q, budget)
    scores = personalized_pagerank(kg, seeds, budget.ppr_restart, budget.ppr_tol,
                                   budget.ppr_max_iter)
    k = min(budget.ppr_nodes, kg.n_entities)
    ids = np.arange(kg.n_entities)
    if k < kg.n_entities:
        kth = -np.partition(-scores, k - 1)[k - 1]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = ids
    v_ppr = cand[np.lexsort((cand, -scores[cand]))[:k]]
    tri = induced_triples(kg, v_ppr)
    if len(tri) == 0:
        return Forest(v_ppr, np.zeros(0, dtype=np.int64), np.zeros(0), seeds, scores[v_ppr])
    z = np.asarray(z_q, dtype=np.float64)
    costs = np.clip(1.0 - indexes.relation.matrix[kg.rels[tri]] @ z, 0.0, 2.0)
    picked = spanning_forest(v_ppr, kg.heads[tri], kg.tails[tri], costs, tri)
    return Forest(v_ppr, tri[picked], costs[picked], seeds, scores[v_ppr])


@dataclass(frozen=True)
class SearchHits:
    """Precomputed vector-search results for one query, with amortised scan times."""
    triples: tuple[np.ndarray, np.ndarray]
    seeds: np.ndarray
    triple_s: float = 0.0
    entity_s: float = 0.0


def search_batch(indexes: KGIndexes, queries, budget: RetrievalBudget,
                 chunk: int = 256) -> list[SearchHits]:
    """Triple and seed-entity searches for many queries at once."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if len(q) == 0:
        return []
    t0 = time.perf_counter()
    tri = top_m_batch(indexes.triple, q, budget.c * budget.m, chunk)
    t1 = time.perf_counter()
    ent = top_m_batch(indexes.entity, q, budget.m, chunk)
    t2 = time.perf_counter()
    n = len(q)
    return [SearchHits(t, e[0], (t1 - t0) / n, (t2 - t1) / n) for t, e in zip(tri, ent)]


def run_expert(e: int, z_q, kg: KnowledgeGraph, indexes: KGIndexes,
               budget: RetrievalBudget, hits: SearchHits | None = None):
    """Dispatch to expert ``e``; returns ``(knowledge, elapsed_seconds)``.

    With ``hits`` the vector searches are skipped and their amortised batch
    time is added to the measured time instead.
    """
    t0 = time.perf_counter()
    extra = 0.0
    if e == 1:
        k = expert1_direct()
    elif e == 2:
        k = expert2_triples(indexes.triple, z_q, budget, hits and hits.triples)
        extra = hits.triple_s if hits else 0.0
    elif e == 3:
        k = expert3_subgraph(kg, indexes.entity, z_q, budget, hits and hits.seeds)
        extra = hits.entity_s if hits else 0.0
    elif e == 4:
        k = expert4_connected(kg, indexes, z_q, budget, hits and hits.seeds)
        extra = hits.entity_s if hits else 0.0
    else:
        raise ValueError(f"unknown expert {e!r}")
    return k, time.perf_counter() - t0 + extra
