"""Compiled inner loops shared by the instance, scenario and split modules.

All kernels are ``nogil`` so tiles can run on a thread pool. Every float
expression here is written in the same order as its pure-Python twin in
``split.py``; keep them in sync or scalar/batch equality stops being exact.
"""

import numpy as np
from numba import njit

INFEASIBLE = -1


@njit(cache=True, nogil=True)
def dist_prefix(order, cost):
    n = order.shape[0]
    out = np.zeros(n, dtype=cost.dtype)
    for k in range(1, n):
        out[k] = out[k - 1] + cost[order[k - 1], order[k]]
    return out


@njit(cache=True, nogil=True)
def masks_row(prefix, capacity, out):
    """Two-pointer sweep: out[i-1] = min{p < i : prefix[i] - prefix[p] <= Q}."""
    n = prefix.shape[0] - 1
    p = 0
    for i in range(1, n + 1):
        while p < i and prefix[i] - prefix[p] > capacity:
            p += 1
        out[i - 1] = p if p < i else INFEASIBLE


@njit(cache=True, nogil=True)
def masks_batch(prefix, capacity, out):
    for w in range(prefix.shape[0]):
        masks_row(prefix[w], capacity, out[w])


@njit(cache=True, nogil=True)
def split_one(row, order, head, tail, dprefix, capacity, penalized, lam, sentinel, S, mask, f, pred):
    """Masked split DP for one scenario given in customer order.

    The row is gathered into tour order and prefix-summed, then every
    state i takes a min-plus reduction over its admissible predecessors,
    keeping the largest p among ties. Costs must be nonnegative. ``head[p]`` is
    c(depot, order[p]) and ``tail[k]`` is c(order[k], depot). Returns f(n),
    or ``sentinel`` when strict mode finds a customer above capacity.
    """
    n = order.shape[0]
    for k in range(n):
        S[k + 1] = S[k] + np.int64(row[order[k] - 1])
    f[0] = 0
    pred[0] = -1
    if penalized:
        for i in range(1, n + 1):
            best = sentinel
            arg = -1
            last = tail[i - 1]
            Si = S[i]
            # descending p: overload only grows, and every candidate is at
            # least lam * overload because f >= 0 and t >= 0
            for p in range(i - 1, -1, -1):
                over = Si - S[p] - capacity
                if over < 0:
                    over = 0
                pen = lam * over
                if pen > best:
                    break
                t = head[p] + (dprefix[i - 1] - dprefix[p]) + last
                v = f[p] + (t + pen)
                if v < best:
                    best = v
                    arg = p
            f[i] = best
            pred[i] = arg
        return f[n]
    masks_row(S, capacity, mask)
    for i in range(1, n + 1):
        lo = mask[i - 1]
        if lo == INFEASIBLE:
            return sentinel
        best = sentinel
        arg = -1
        last = tail[i - 1]
        for p in range(lo, i):
            t = head[p] + (dprefix[i - 1] - dprefix[p]) + last
            v = f[p] + t
            if v <= best:
                best = v
                arg = p
        f[i] = best
        pred[i] = arg
    return f[n]


@njit(cache=True, nogil=True)
def split_tile(demands, order, head, tail, dprefix, capacity, penalized, lam, sentinel,
               out_cost, out_pred, record_pred):
    n = order.shape[0]
    S = np.zeros(n + 1, dtype=np.int64)
    mask = np.empty(n, dtype=np.int64)
    f = np.empty(n + 1, dtype=out_cost.dtype)
    pred = np.empty(n + 1, dtype=np.int32)
    for w in range(demands.shape[0]):
        v = split_one(demands[w], order, head, tail, dprefix, capacity, penalized, lam, sentinel,
                      S, mask, f, pred)
        out_cost[w] = v
        if record_pred:
            if v == sentinel:
                out_pred[w, :] = -1
            else:
                out_pred[w, :] = pred


@njit(cache=True, nogil=True)
def penalized_mean(demands, order, cost, capacity, lam):
    """Mean penalized split cost of one tour (float64), for fast screening."""
    n = order.shape[0]
    dprefix = dist_prefix(order, cost)
    head = np.empty(n, dtype=np.float64)
    tail = np.empty(n, dtype=np.float64)
    for k in range(n):
        head[k] = cost[0, order[k]]
        tail[k] = cost[order[k], n + 1]
    S = np.zeros(n + 1, dtype=np.int64)
    mask = np.empty(n, dtype=np.int64)
    f = np.empty(n + 1, dtype=np.float64)
    pred = np.empty(n + 1, dtype=np.int32)
    total = 0.0
    for w in range(demands.shape[0]):
        total += split_one(demands[w], order, head, tail, dprefix, capacity, True, lam, np.inf,
                           S, mask, f, pred)
    return total / demands.shape[0]
