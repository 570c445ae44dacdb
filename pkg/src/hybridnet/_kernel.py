"""Compiled simulation loop.

Mirrors ``traffic.step`` (move, generate, deliver) draw for draw; the
pure-Python path in ``traffic`` is the reference it is tested against.
Queues are singly linked lists over a growable packet pool.
"""

import math

import numba
import numpy as np

STRATEGY_CODES = {"random": 0, "min_load": 1, "max_load": 2}
BOUNDARY_CODES = {"resample": 0, "reflect": 1}

TWO_PI = 2.0 * math.pi


@numba.njit(cache=True, inline="always")
def _nearest(x, y, L):
    return int(math.ceil(x - 0.5)) * L + int(math.ceil(y - 0.5))


@numba.njit(cache=True, inline="always")
def _inside(x, y, hi):
    return 0.0 <= x <= hi and 0.0 <= y <= hi


@numba.njit(cache=True)
def _grow(arr, size):
    out = np.empty(size, dtype=arr.dtype)
    out[: arr.size] = arr
    return out


@numba.njit(cache=True)
def _next_hop(s, target, strategy, indptr, indices, dist, loads, buf):
    row = dist[target]
    d_next = row[s] - 1
    k = 0
    for e in range(indptr[s], indptr[s + 1]):
        q = indices[e]
        if row[q] == d_next:
            buf[k] = q
            k += 1
    if k == 0:
        return -1
    if strategy != 0:
        best = loads[buf[0]]
        m = 1
        for c in range(1, k):
            lq = loads[buf[c]]
            if (strategy == 1 and lq < best) or (strategy == 2 and lq > best):
                best = lq
                buf[0] = buf[c]
                m = 1
            elif lq == best:
                buf[m] = buf[c]
                m += 1
        k = m
    if k == 1:
        return buf[0]
    return buf[int(np.random.random() * k)]


@numba.njit(cache=True)
def simulate(indptr, indices, dist, L, n, v, rho, C, strategy, boundary,
             load_snapshot, delivery_uses_capacity, seed, warmup, measure):
    np.random.seed(seed)
    N = L * L
    hi = float(L - 1)
    total = warmup + measure

    ux = np.empty(n)
    uy = np.empty(n)
    uh = np.empty(n)
    gw = np.empty(n, dtype=np.int64)
    for i in range(n):
        ux[i] = np.random.random() * hi
        uy[i] = np.random.random() * hi
        uh[i] = np.random.random() * TWO_PI
        gw[i] = _nearest(ux[i], uy[i], L)

    cap = 1024
    p_dst = np.empty(cap, dtype=np.int64)
    p_created = np.empty(cap, dtype=np.int64)
    p_next = np.empty(cap, dtype=np.int64)
    free = np.empty(cap, dtype=np.int64)
    for k in range(cap):
        free[k] = cap - 1 - k
    n_free = cap

    head = np.full(N, -1, dtype=np.int64)
    tail = np.full(N, -1, dtype=np.int64)
    qlen = np.zeros(N, dtype=np.int64)
    snap = np.zeros(N, dtype=np.int64)
    buf = np.empty(indptr.size, dtype=np.int64)

    W_series = np.zeros(total, dtype=np.int64)
    created = np.zeros(total, dtype=np.int64)
    delivered = np.zeros(total, dtype=np.int64)
    load_sum = np.zeros(N)
    delay_sum = 0.0
    delay_count = 0
    max_processed = 0
    routing_faults = 0

    base = int(math.floor(rho))
    frac = rho - base
    W = 0

    for t in range(total):
        # 1. move
        if v > 0.0:
            for i in range(n):
                h = uh[i]
                nx = ux[i] + v * math.cos(h)
                ny = uy[i] + v * math.sin(h)
                if not _inside(nx, ny, hi):
                    if boundary == 1:
                        if not (0.0 <= nx <= hi):
                            h = math.pi - h
                        if not (0.0 <= ny <= hi):
                            h = -h
                        h = h % TWO_PI
                        nx = ux[i] + v * math.cos(h)
                        ny = uy[i] + v * math.sin(h)
                    while not _inside(nx, ny, hi):
                        h = np.random.random() * TWO_PI
                        nx = ux[i] + v * math.cos(h)
                        ny = uy[i] + v * math.sin(h)
                ux[i] = nx
                uy[i] = ny
                uh[i] = h
                gw[i] = _nearest(nx, ny, L)

        snap[:] = qlen

        # 2. generate
        made = 0
        for i in range(n):
            cnt = base + (1 if np.random.random() < frac else 0)
            for _ in range(cnt):
                dst = int(np.random.random() * (n - 1))
                if dst >= i:
                    dst += 1
                if n_free == 0:
                    new_cap = cap * 2
                    p_dst = _grow(p_dst, new_cap)
                    p_created = _grow(p_created, new_cap)
                    p_next = _grow(p_next, new_cap)
                    free = _grow(free, new_cap)
                    for k in range(new_cap - cap):
                        free[k] = new_cap - 1 - k
                    n_free = new_cap - cap
                    cap = new_cap
                n_free -= 1
                pk = free[n_free]
                p_dst[pk] = dst
                p_created[pk] = t
                p_next[pk] = -1
                s = gw[i]
                if tail[s] < 0:
                    head[s] = pk
                else:
                    p_next[tail[s]] = pk
                tail[s] = pk
                qlen[s] += 1
                made += 1
        created[t] = made
        W += made

        # 3. deliver
        loads = snap if load_snapshot else qlen
        gone = 0
        measuring = t >= warmup
        for s in range(N):
            remaining = snap[s]
            budget = C
            while remaining > 0 and budget > 0:
                pk = head[s]
                head[s] = p_next[pk]
                qlen[s] -= 1
                if qlen[s] == 0:
                    tail[s] = -1
                remaining -= 1
                target = gw[p_dst[pk]]
                if target == s:
                    if delivery_uses_capacity:
                        budget -= 1
                    if measuring:
                        delay_sum += t - p_created[pk]
                        delay_count += 1
                    free[n_free] = pk
                    n_free += 1
                    gone += 1
                    continue
                budget -= 1
                q = _next_hop(s, target, strategy, indptr, indices, dist, loads, buf)
                if q < 0:
                    routing_faults += 1
                    q = s
                p_next[pk] = -1
                if tail[q] < 0:
                    head[q] = pk
                else:
                    p_next[tail[q]] = pk
                tail[q] = pk
                qlen[q] += 1
            if C - budget > max_processed:
                max_processed = C - budget
        delivered[t] = gone
        W -= gone
        W_series[t] = W
        if measuring:
            for s in range(N):
                load_sum[s] += qlen[s]

    return (W_series, created, delivered, load_sum, delay_sum, delay_count,
            max_processed, routing_faults)
