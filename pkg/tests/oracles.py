"""Brute-force reference implementations used as test oracles."""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np

from gkgrec.embed import SCORE_DECIMALS


def topm_full_scan(matrix, query, m):
    """Row-by-row scoring, then a full sort on (-score, id)."""
    q = np.asarray(query, dtype=np.float64)
    scored = []
    for i, row in enumerate(np.asarray(matrix)):
        s = round(float(np.dot(row, q)), SCORE_DECIMALS)
        scored.append((-s, i))
    scored.sort()
    top = scored[:m]
    return [i for _, i in top], [-s for s, _ in top]


def bfs_union(n_entities, heads, tails, seeds, k):
    """Union over seeds of single-source BFS balls of radius ``k``.

    Triples are those with an endpoint at distance <= k - 1 from some seed.
    """
    adj = [[] for _ in range(n_entities)]
    for t, (h, tl) in enumerate(zip(heads, tails)):
        adj[h].append((tl, t))
        if h != tl:
            adj[tl].append((h, t))
    ents, tris = set(), set()
    for s in seeds:
        dist = {int(s): 0}
        q = deque([int(s)])
        while q:
            u = q.popleft()
            if dist[u] >= k:
                continue
            for v, t in adj[u]:
                tris.add(t)
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        ents.update(dist)
    return sorted(ents), sorted(tris)


def _components(n, edges):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(x) for x in range(n)})


def min_spanning_forest_cost(n, edges, costs):
    """Exhaustive minimum over all acyclic edge sets of size n - #components."""
    c = _components(n, edges)
    need = n - c
    if need == 0:
        return 0.0
    best = np.inf
    for combo in itertools.combinations(range(len(edges)), need):
        if _components(n, [edges[i] for i in combo]) == c:
            best = min(best, sum(costs[i] for i in combo))
    return best


def ppr_dense(n, heads, tails, seeds, restart):
    """Stationary restart walk by a dense linear solve.

    Each triple is one undirected edge (a self-loop contributes one slot);
    entities with no triples return their mass to the restart vector.
    """
    A = np.zeros((n, n))
    for h, t in zip(heads, tails):
        A[h, t] += 1.0
        if h != t:
            A[t, h] += 1.0
    deg = A.sum(axis=1)
    r = np.zeros(n)
    seeds = sorted(set(int(s) for s in seeds))
    r[seeds] = 1.0 / len(seeds)
    M = np.zeros((n, n))  # column-stochastic: M[v, u] = P(u -> v)
    for u in range(n):
        if deg[u] > 0:
            M[:, u] = A[u] / deg[u]
        else:
            M[:, u] = r
    s = np.linalg.solve(np.eye(n) - (1.0 - restart) * M, restart * r)
    return s / s.sum()


def gae_nested(rewards, values, gamma, lam):
    """A_t = sum_l (gamma lam)^l delta_{t+l}; G_t = sum_l gamma^l r_{t+l}; V_T = 0."""
    T = len(rewards)
    v = list(values) + [0.0]
    delta = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(T)]
    adv = [sum((gamma * lam) ** (l - t) * delta[l] for l in range(t, T)) for t in range(T)]
    ret = [sum(gamma ** (l - t) * rewards[l] for l in range(t, T)) for t in range(T)]
    return np.array(adv), np.array(ret)


def central_difference(f, x, step=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g
