"""Pure-Python/numpy implementations of the graph and advantage kernels.

These are the fallback used when the compiled ``_ckernels`` extension is not
available (or ``GKG_PURE_PYTHON=1`` is set). Signatures and results match the
compiled versions exactly for the integer kernels; PPR agrees to round-off.
"""
from __future__ import annotations

from collections import deque

import numpy as np


def k_hop(indptr, nbr, nbr_tri, seeds, k):
    """Multi-source bounded BFS over the undirected adjacency.

    Returns ``(entities, triples)`` as sorted int64 arrays: every entity within
    ``k`` hops of some seed, and every triple incident to an entity within
    ``k - 1`` hops.
    """
    n = len(indptr) - 1
    dist = np.full(n, -1, dtype=np.int64)
    queue = deque()
    for s in seeds:
        s = int(s)
        if dist[s] < 0:
            dist[s] = 0
            queue.append(s)
    found_tri = set()
    while queue:
        u = queue.popleft()
        du = dist[u]
        if du >= k:
            continue
        for j in range(indptr[u], indptr[u + 1]):
            found_tri.add(int(nbr_tri[j]))
            v = nbr[j]
            if dist[v] < 0:
                dist[v] = du + 1
                queue.append(int(v))
    entities = np.flatnonzero(dist >= 0).astype(np.int64)
    triples = np.array(sorted(found_tri), dtype=np.int64)
    return entities, triples


def ppr(indptr, nbr, seeds, restart, tol, max_iter):
    """Personalized PageRank by power iteration with restart to ``seeds``.

    Dangling entities (no incident triples) send their whole mass back to the
    restart distribution. Returns ``(scores, iterations)``.
    """
    n = len(indptr) - 1
    deg = np.diff(indptr).astype(np.float64)
    src = np.repeat(np.arange(n), np.diff(indptr))
    r = np.zeros(n)
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    r[seeds] = 1.0 / len(seeds)
    dangling = deg == 0
    inv_deg = np.zeros(n)
    inv_deg[~dangling] = 1.0 / deg[~dangling]
    s = r.copy()
    it = 0
    while it < max_iter:
        it += 1
        spread = np.bincount(nbr, weights=(s * inv_deg)[src], minlength=n)
        lost = s[dangling].sum()
        new = restart * r + (1.0 - restart) * (spread + lost * r)
        delta = np.abs(new - s).sum()
        s = new
        if delta < tol:
            break
    return s / s.sum(), it


def kruskal(n_nodes, eu, ev):
    """Union-find pass over edges already sorted by (cost, triple index).

    ``eu``/``ev`` are local node ids in ``[0, n_nodes)``. Returns a boolean
    mask of the accepted (forest) edges.
    """
    parent = list(range(n_nodes))
    rank = [0] * n_nodes

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    keep = np.zeros(len(eu), dtype=bool)
    joined = 0
    for i in range(len(eu)):
        a, b = find(int(eu[i])), find(int(ev[i]))
        if a == b:
            continue
        if rank[a] < rank[b]:
            a, b = b, a
        parent[b] = a
        if rank[a] == rank[b]:
            rank[a] += 1
        keep[i] = True
        joined += 1
        if joined == n_nodes - 1:
            break
    return keep


def gae(rewards, values, ptr, gamma, lam):
    """Backward GAE recursion over a flat buffer of trajectories.

    ``ptr`` holds trajectory offsets (length n_traj + 1). The value after the
    last step of each trajectory is taken as zero. Returns
    ``(advantages, returns)``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    adv = np.zeros_like(rewards)
    ret = np.zeros_like(rewards)
    for t0, t1 in zip(ptr[:-1], ptr[1:]):
        a = 0.0
        g = 0.0
        next_v = 0.0
        for t in range(t1 - 1, t0 - 1, -1):
            delta = rewards[t] + gamma * next_v - values[t]
            a = delta + gamma * lam * a
            g = rewards[t] + gamma * g
            adv[t] = a
            ret[t] = g
            next_v = values[t]
    return adv, ret
