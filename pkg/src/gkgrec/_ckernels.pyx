# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled graph and advantage kernels; mirrors ``_pykernels`` one to one."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


def k_hop(const i64[::1] indptr, const i64[::1] nbr, const i64[::1] nbr_tri,
          seeds, i64 k):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef i64[::1] dist = np.full(n, -1, dtype=np.int64)
    cdef i64[::1] queue = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t head = 0, tail = 0, j, n_tri = 0
    cdef i64 u, v, du, s
    cdef cnp.ndarray[i64, ndim=1] seed_arr = np.asarray(seeds, dtype=np.int64)
    for j in range(seed_arr.shape[0]):
        s = seed_arr[j]
        if dist[s] < 0:
            dist[s] = 0
            queue[tail] = s
            tail += 1
    # upper bound: every adjacency slot of every reached entity
    cdef list chunks = []
    cdef i64[::1] tri_buf = np.empty(max(nbr.shape[0], 1), dtype=np.int64)
    while head < tail:
        u = queue[head]
        head += 1
        du = dist[u]
        if du >= k:
            continue
        for j in range(indptr[u], indptr[u + 1]):
            tri_buf[n_tri] = nbr_tri[j]
            n_tri += 1
            v = nbr[j]
            if dist[v] < 0:
                dist[v] = du + 1
                queue[tail] = v
                tail += 1
    entities = np.sort(np.asarray(queue[:tail]))
    triples = np.unique(np.asarray(tri_buf[:n_tri]))
    return entities, triples


def ppr(const i64[::1] indptr, const i64[::1] nbr, seeds, double restart,
        double tol, i64 max_iter):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t u, j, it = 0
    cdef cnp.ndarray[i64, ndim=1] seed_arr = np.unique(np.asarray(seeds, dtype=np.int64))
    cdef double[::1] r = np.zeros(n)
    cdef double[::1] s = np.zeros(n)
    cdef double[::1] spread = np.zeros(n)
    cdef double[::1] inv_deg = np.zeros(n)
    cdef double w, lost, delta, x, total
    for j in range(seed_arr.shape[0]):
        r[seed_arr[j]] = 1.0 / seed_arr.shape[0]
    for u in range(n):
        s[u] = r[u]
        if indptr[u + 1] > indptr[u]:
            inv_deg[u] = 1.0 / <double>(indptr[u + 1] - indptr[u])
    while it < max_iter:
        it += 1
        lost = 0.0
        for u in range(n):
            spread[u] = 0.0
        for u in range(n):
            if indptr[u + 1] == indptr[u]:
                lost += s[u]
                continue
            w = s[u] * inv_deg[u]
            for j in range(indptr[u], indptr[u + 1]):
                spread[nbr[j]] += w
        delta = 0.0
        for u in range(n):
            x = restart * r[u] + (1.0 - restart) * (spread[u] + lost * r[u])
            delta += abs(x - s[u])
            s[u] = x
        if delta < tol:
            break
    out = np.asarray(s)
    total = out.sum()
    return out / total, it


def kruskal(Py_ssize_t n_nodes, const i64[::1] eu, const i64[::1] ev):
    cdef i64[::1] parent = np.arange(n_nodes, dtype=np.int64)
    cdef i64[::1] rank = np.zeros(n_nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] keep = np.zeros(eu.shape[0], dtype=np.uint8)
    cdef Py_ssize_t i, joined = 0
    cdef i64 a, b, t
    for i in range(eu.shape[0]):
        a = eu[i]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        b = ev[i]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a == b:
            continue
        if rank[a] < rank[b]:
            t = a
            a = b
            b = t
        parent[b] = a
        if rank[a] == rank[b]:
            rank[a] += 1
        keep[i] = 1
        joined += 1
        if joined == n_nodes - 1:
            break
    return keep.astype(bool)


def gae(rewards, values, ptr, double gamma, double lam):
    cdef const double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const i64[::1] p = np.ascontiguousarray(ptr, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0]
    adv_arr = np.zeros(n)
    ret_arr = np.zeros(n)
    cdef double[::1] adv = adv_arr
    cdef double[::1] ret = ret_arr
    cdef Py_ssize_t k, t
    cdef double a, g, next_v, delta
    for k in range(p.shape[0] - 1):
        a = 0.0
        g = 0.0
        next_v = 0.0
        t = p[k + 1] - 1
        while t >= p[k]:
            delta = r[t] + gamma * next_v - v[t]
            a = delta + gamma * lam * a
            g = r[t] + gamma * g
            adv[t] = a
            ret[t] = g
            next_v = v[t]
            t -= 1
    return adv_arr, ret_arr
