# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation and value-iteration kernels.

Mirrors _numpy.py exactly: same uniform-number consumption, same
binary-search comparisons, same termination rules.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "native"


cdef inline Py_ssize_t _bisect_right(const double[::1] arr, double x,
                                     Py_ssize_t lo, Py_ssize_t hi) nogil:
    # first index i in [lo, hi) with arr[i] > x, or hi if none
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def value_iteration(row_ptr, next_state, prob, rbar_flat, n_states, n_actions,
                    gamma, tol, max_iter):
    """Bellman optimality sweeps until the successive sup-norm change < tol."""
    cdef const long long[::1] rp = np.ascontiguousarray(row_ptr, dtype=np.int64)
    cdef const int[::1] nxt = np.ascontiguousarray(next_state, dtype=np.int32)
    cdef const double[::1] p = np.ascontiguousarray(prob, dtype=np.float64)
    cdef const double[::1] rbar = np.ascontiguousarray(rbar_flat, dtype=np.float64)
    cdef Py_ssize_t S = n_states, A = n_actions
    cdef double g = gamma, eps = tol
    cdef long long iters = max_iter

    v_arr = np.zeros(S, dtype=np.float64)
    vn_arr = np.zeros(S, dtype=np.float64)
    cdef double[::1] v = v_arr
    cdef double[::1] vn = vn_arr
    cdef double delta = np.inf
    cdef double q, best, acc, d
    cdef Py_ssize_t s, a, i
    cdef long long it, row

    if S == 0:
        return v_arr, 0, 0.0
    with nogil:
        for it in range(iters):
            delta = 0.0
            for s in range(S):
                best = -1e308
                for a in range(A):
                    row = s * A + a
                    acc = 0.0
                    for i in range(rp[row], rp[row + 1]):
                        acc += p[i] * v[nxt[i]]
                    q = rbar[row] + g * acc
                    if q > best:
                        best = q
                vn[s] = best
                d = vn[s] - v[s]
                if d < 0:
                    d = -d
                if d > delta:
                    delta = d
            for s in range(S):
                v[s] = vn[s]
            if delta < eps:
                with gil:
                    return v_arr, int(it + 1), float(delta)
    return v_arr, int(max_iter), float(delta)


def simulate_batch(row_ptr, next_state, trans_gc, trans_off, reward, p0_cum,
                   absorbing, gamma, max_steps, u, actions, act_gc, act_off,
                   record_traces):
    """Roll out one episode per row of the uniform matrix ``u``.

    See _numpy.simulate_batch for the full contract.
    """
    cdef const long long[::1] rp = np.ascontiguousarray(row_ptr, dtype=np.int64)
    cdef const int[::1] nxt = np.ascontiguousarray(next_state, dtype=np.int32)
    cdef const double[::1] gc = np.ascontiguousarray(trans_gc, dtype=np.float64)
    cdef const double[::1] goff = np.ascontiguousarray(trans_off, dtype=np.float64)
    cdef const double[::1] rew = np.ascontiguousarray(reward, dtype=np.float64)
    cdef const double[::1] p0c = np.ascontiguousarray(p0_cum, dtype=np.float64)
    cdef const cnp.uint8_t[::1] absorb = np.ascontiguousarray(absorbing, dtype=np.uint8)
    cdef const double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)

    cdef bint det = actions is not None
    cdef const long long[::1] act
    cdef const double[::1] agc
    cdef const double[::1] aoff
    if det:
        act = np.ascontiguousarray(actions, dtype=np.int64)
        agc = np.empty(0, dtype=np.float64)
        aoff = np.empty(0, dtype=np.float64)
    else:
        act = np.empty(0, dtype=np.int64)
        agc = np.ascontiguousarray(act_gc, dtype=np.float64)
        aoff = np.ascontiguousarray(act_off, dtype=np.float64)

    cdef Py_ssize_t n_ep = uu.shape[0]
    cdef Py_ssize_t S = p0c.shape[0]
    cdef Py_ssize_t A = (rp.shape[0] - 1) // S
    cdef Py_ssize_t T = max_steps
    cdef double g = gamma
    cdef bint rec = record_traces

    returns_arr = np.zeros(n_ep, dtype=np.float64)
    tlen_arr = np.zeros(n_ep, dtype=np.int64)
    cdef double[::1] returns = returns_arr
    cdef long long[::1] tlen = tlen_arr
    cdef long long[::1] trace
    if rec:
        trace_arr = np.empty(n_ep * (T + 1), dtype=np.int64)
        trace = trace_arr
    else:
        trace_arr = None
        trace = np.empty(0, dtype=np.int64)

    cdef Py_ssize_t e, t, s, a, lo, hi, pos, tpos
    cdef long long row
    cdef double disc, target

    with nogil:
        tpos = 0
        for e in range(n_ep):
            pos = _bisect_right(p0c, uu[e, 0], 0, S)
            if pos > S - 1:
                pos = S - 1
            s = pos
            if rec:
                trace[tpos] = s
                tpos += 1
                tlen[e] = 1
            disc = 1.0
            for t in range(T):
                if absorb[s]:
                    break
                if det:
                    a = act[s]
                    target = uu[e, 1 + t]
                else:
                    target = uu[e, 1 + 2 * t] + aoff[s]
                    pos = _bisect_right(agc, target, s * A, (s + 1) * A)
                    if pos > (s + 1) * A - 1:
                        pos = (s + 1) * A - 1
                    a = pos - s * A
                    target = uu[e, 2 + 2 * t]
                row = s * A + a
                lo = rp[row]
                hi = rp[row + 1]
                if det:
                    target = uu[e, 1 + t] + goff[row]
                else:
                    target = target + goff[row]
                pos = _bisect_right(gc, target, lo, hi)
                if pos > hi - 1:
                    pos = hi - 1
                returns[e] += disc * rew[pos]
                s = nxt[pos]
                if rec:
                    trace[tpos] = s
                    tpos += 1
                    tlen[e] += 1
                disc *= g

    if rec:
        return returns_arr, trace_arr[:tpos].copy(), tlen_arr
    return returns_arr, None, tlen_arr
