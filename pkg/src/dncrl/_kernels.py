"""Compiled annealing search for critics that are plain ReLU MLPs.

Mirrors ``mapping.sa_search`` step for step (same candidate order, tie-breaks
and uniform draws) so both produce the same action for the same generator
state. The critic is passed pre-split: ``state_part`` is the first layer's
state contribution plus bias, ``w_act_t`` its transposed action columns, and
the remaining layers are packed as transposed weights then bias into ``flat``
with layer sizes ``dims``.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _q_batch(cand, low, step, span, state_part, w_act_t, flat, dims):
    """Q-values of a batch of grid-index rows; ``flat`` holds transposed weights."""
    a = (cand * step) / span
    h = a @ w_act_t
    for r in range(h.shape[0]):
        for c in range(h.shape[1]):
            h[r, c] += state_part[c]
    off = 0
    for layer in range(dims.shape[0] - 1):
        n_in = dims[layer]
        n_out = dims[layer + 1]
        w_t = flat[off:off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        h = np.maximum(h, 0.0) @ w_t
        for r in range(h.shape[0]):
            for c in range(n_out):
                h[r, c] += flat[off + c]
        off += n_out
    return h[:, 0].copy()


@njit(cache=True)
def _neighbors(cur, max_index, eps_steps, depth):
    n = cur.shape[0]
    total = 2 * depth * n
    out = np.empty((total + 1, n), dtype=np.int64)
    out[0, :] = cur
    ent = np.empty(total + 1, dtype=np.int64)
    val = np.empty(total + 1, dtype=np.int64)
    count = 1
    for j in range(total):
        i = j % n
        level = j // n + 1
        mult = level if level <= depth else -(level - depth)
        v = cur[i] + mult * eps_steps[i]
        if v < 0:
            v = 0
        elif v > max_index[i]:
            v = max_index[i]
        if v == cur[i]:
            continue
        dup = False
        for m in range(1, count):
            if ent[m] == i and val[m] == v:
                dup = True
                break
        if dup:
            continue
        out[count, :] = cur
        out[count, i] = v
        ent[count] = i
        val[count] = v
        count += 1
    return out[:count]


@njit(cache=True)
def _better(qa, a, qb, b):
    if qa > qb:
        return True
    if qa < qb:
        return False
    for c in range(a.shape[0]):
        if a[c] != b[c]:
            return a[c] < b[c]
    return False


@njit(cache=True)
def sa_search_mlp(cur, max_index, low, step, span, eps_steps, depth, k, c_k, beta, c_beta,
                  max_iters, complement, draws, state_part, w_act_t, flat, dims):
    n = cur.shape[0]
    best = cur.copy()
    best_q = 0.0
    have_best = False
    mem = np.empty((16, n), dtype=np.int64)
    n_mem = 0
    n_draw = 0
    it = 0
    while k > 0 and it < max_iters:
        it += 1
        cand = _neighbors(cur, max_index, eps_steps, depth)
        c = cand.shape[0]
        q = _q_batch(cand.astype(np.float64), low, step, span, state_part, w_act_t, flat, dims)
        q_cur = q[0]
        if not have_best:
            best_q = q_cur
            have_best = True
        if c == 1:
            break
        take = int(math.ceil(k))
        if take > c - 1:
            take = c - 1
        used = np.zeros(c, dtype=np.bool_)
        used[0] = True
        first = -1
        for t in range(take):
            pick = -1
            for r in range(1, c):
                if used[r]:
                    continue
                if pick < 0 or _better(q[r], cand[r], q[pick], cand[pick]):
                    pick = r
            used[pick] = True
            if t == 0:
                first = pick
            seen = False
            for m in range(n_mem):
                same = True
                for col in range(n):
                    if mem[m, col] != cand[pick, col]:
                        same = False
                        break
                if same:
                    seen = True
                    break
            if not seen:
                if n_mem == mem.shape[0]:
                    grown = np.empty((2 * n_mem, n), dtype=np.int64)
                    grown[:n_mem] = mem
                    mem = grown
                mem[n_mem, :] = cand[pick]
                n_mem += 1
        q1 = q[first]
        if q1 > q_cur:
            cur = cand[first].copy()
            if q1 > best_q:
                best = cand[first].copy()
                best_q = q1
        else:
            p = math.exp(-(q_cur - q1) / beta) if beta > 0 else 0.0
            if complement:
                p = 1.0 - p
            u = draws[n_draw]
            n_draw += 1
            if u < p:
                cur = cand[first].copy()
                beta -= c_beta
            else:
                cur = mem[int(draws[n_draw] * n_mem)].copy()
                n_draw += 1
        k -= c_k
    return best, best_q
