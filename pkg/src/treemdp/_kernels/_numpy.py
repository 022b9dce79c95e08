"""Pure-numpy implementations of the simulation and value-iteration kernels.

Reference semantics for the compiled module in _native.pyx: every behavioural
detail here (uniform-number consumption order, binary-search comparisons,
termination) is mirrored there exactly, so both backends produce identical
trajectories from identical seeds.
"""

import numpy as np
import scipy.sparse as sp

BACKEND = "numpy"


def value_iteration(row_ptr, next_state, prob, rbar_flat, n_states, n_actions,
                    gamma, tol, max_iter):
    """Bellman optimality sweeps until the successive sup-norm change < tol.

    Returns (values, iterations, last_delta).
    """
    T = sp.csr_matrix(
        (prob, next_state.astype(np.int64), row_ptr),
        shape=(n_states * n_actions, n_states),
    )
    v = np.zeros(n_states)
    delta = np.inf
    for it in range(max_iter):
        vn = (rbar_flat + gamma * (T @ v)).reshape(n_states, n_actions).max(axis=1)
        delta = float(np.max(np.abs(vn - v))) if n_states else 0.0
        v = vn
        if delta < tol:
            return v, it + 1, delta
    return v, max_iter, delta


def simulate_batch(row_ptr, next_state, trans_gc, trans_off, reward, p0_cum,
                   absorbing, gamma, max_steps, u, actions, act_gc, act_off,
                   record_traces):
    """Roll out one episode per row of the uniform matrix ``u``.

    ``trans_gc`` is the global cumulative sum of all transition probabilities
    and ``trans_off[row]`` the cumulative mass before CSR row ``row``; the
    successor drawn for uniform x in row [lo, hi) is the first entry i with
    trans_gc[i] > x + trans_off[row] (clipped to the row).  ``act_gc`` /
    ``act_off`` encode a stochastic policy the same way (None for
    deterministic policies, which use the ``actions`` array instead).

    Episode e consumes u[e, 0] for the initial state, then one uniform per
    step (deterministic) or two per step (stochastic: action then
    transition).  Episodes stop after ``max_steps`` steps or on reaching a
    state flagged in ``absorbing``.  Returns (returns, trace_buf,
    trace_lengths); trace_buf concatenates visited-state sequences when
    requested, else is None.
    """
    n_ep = u.shape[0]
    deterministic = actions is not None
    n_states = len(p0_cum)
    A = (len(row_ptr) - 1) // n_states

    state = np.searchsorted(p0_cum, u[:, 0], side="right").astype(np.int64)
    np.clip(state, 0, n_states - 1, out=state)
    returns = np.zeros(n_ep)
    absorbing = absorbing.astype(bool)
    alive = ~absorbing[state]
    disc = 1.0
    if record_traces:
        trace = np.empty((n_ep, max_steps + 1), dtype=np.int64)
        trace[:, 0] = state
        tlen = np.ones(n_ep, dtype=np.int64)
    else:
        trace = None
        tlen = np.zeros(n_ep, dtype=np.int64)

    for t in range(max_steps):
        idx = np.nonzero(alive)[0]
        if len(idx) == 0:
            break
        s = state[idx]
        if deterministic:
            a = actions[s]
            ut = u[idx, 1 + t]
        else:
            ua = u[idx, 1 + 2 * t]
            pos_a = np.searchsorted(act_gc, ua + act_off[s], side="right")
            np.clip(pos_a, s * A, (s + 1) * A - 1, out=pos_a)
            a = pos_a - s * A
            ut = u[idx, 2 + 2 * t]
        rows = s * A + a
        lo = row_ptr[rows]
        hi = row_ptr[rows + 1]
        pos = np.searchsorted(trans_gc, ut + trans_off[rows], side="right")
        np.clip(pos, lo, hi - 1, out=pos)
        returns[idx] += disc * reward[pos]
        ns = next_state[pos].astype(np.int64)
        state[idx] = ns
        if record_traces:
            trace[idx, t + 1] = ns
            tlen[idx] += 1
        alive[idx] = ~absorbing[ns]
        disc *= gamma

    if record_traces:
        buf = np.concatenate([trace[e, :tlen[e]] for e in range(n_ep)])
        return returns, buf, tlen
    return returns, None, tlen
