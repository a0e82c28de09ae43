"""Kernel backends side by side, then per-query expert latency.

    python benchmarks/bench_kernels.py [--triples 100000] [--entities 120000] [--queries 200]

Both sections run on one random KG with pseudo-word entity names, so the
expert timings include realistic embedding scans.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from gkgrec import kernels
from gkgrec.embed import HashEncoder, build_kg_indexes
from gkgrec.experts import RetrievalBudget, run_expert
from gkgrec.kg import KnowledgeGraph

SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]
RELATIONS = ["directed by", "genre", "starred", "made by", "related title", "sequel",
             "composed by", "based on"]


def random_kg(rng, n_entities, n_triples) -> KnowledgeGraph:
    names = [f"{''.join(rng.choice(SYLLABLES, 2))} {''.join(rng.choice(SYLLABLES, 2))} {i}"
             for i in range(n_entities)]
    return KnowledgeGraph(names, RELATIONS, rng.integers(0, n_entities, n_triples),
                          rng.integers(0, len(RELATIONS), n_triples),
                          rng.integers(0, n_entities, n_triples))


def best_of(fn, repeat=5):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_backends(kg, rng):
    seeds = rng.choice(kg.n_entities, 3, replace=False)
    nodes, indptr, nbr = kg.component_csr(seeds)
    local_seeds = np.searchsorted(nodes, seeds)
    n = 2000
    eu, ev = rng.integers(0, n, 4 * n), rng.integers(0, n, 4 * n)
    lengths = rng.integers(1, 17, 5000)
    ptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    rewards, values = rng.normal(size=ptr[-1]), rng.normal(size=ptr[-1])

    cases = {
        "k_hop (k=2)": lambda m: m.k_hop(kg.indptr, kg.nbr, kg.nbr_tri, seeds, 2),
        f"ppr ({len(nodes)} nodes)": lambda m: m.ppr(indptr, nbr, local_seeds, 0.15, 1e-8, 100),
        f"kruskal ({len(eu)} edges)": lambda m: m.kruskal(n, eu, ev),
        f"gae ({ptr[-1]} steps)": lambda m: m.gae(rewards, values, ptr, 0.99, 0.95),
    }
    names = sorted(kernels.BACKENDS)
    print(f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in names) + "   (ms, best of 5)")
    for label, fn in cases.items():
        row = [1000 * best_of(lambda: fn(kernels.get(b))) for b in names]
        print(f"{label:28s}" + "".join(f"{t:12.3f}" for t in row))


def bench_experts(kg, rng, n_queries, dim):
    t0 = time.perf_counter()
    enc = HashEncoder(dim, 0, sublinear=True)
    idx = build_kg_indexes(kg, enc)
    print(f"\nindex build: {time.perf_counter() - t0:.1f}s  (backend: {kernels.BACKEND})")
    queries = [enc.encode("; ".join(rng.choice(kg.entities, 10))) for _ in range(n_queries)]
    b = RetrievalBudget()
    for e in (1, 2, 3, 4):
        ms = [1000 * run_expert(e, q, kg, idx, b)[1] for q in queries]
        print(f"expert {e}: mean {np.mean(ms):9.3f} ms   p95 {np.percentile(ms, 95):9.3f} ms")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--triples", type=int, default=100_000)
    ap.add_argument("--entities", type=int, default=120_000)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    kg = random_kg(rng, args.entities, args.triples)
    print(f"KG: {kg.n_entities} entities, {kg.n_triples} triples\n")
    bench_backends(kg, rng)
    bench_experts(kg, rng, args.queries, args.dim)


if __name__ == "__main__":
    main()
