"""Tabular MDP representation, exact solving, and policy evaluation.

The transition structure is stored in CSR-like flat arrays: row ``s * n_actions
+ a`` of the (state, action) table owns the slice ``row_ptr[row]:row_ptr[row+1]``
of ``next_state`` / ``prob`` / ``reward``.  All arrays are frozen after
construction so instances can be shared freely between threads and processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError
from ._kernels import kernels

PROB_TOL = 1e-9


def _frozen(a, dtype):
    arr = np.ascontiguousarray(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with sparse transitions and a discounted objective."""

    n_states: int
    n_actions: int
    row_ptr: np.ndarray
    next_state: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    p0: np.ndarray
    gamma: float
    state_labels: tuple[str, ...] | None = None
    action_labels: tuple[str, ...] | None = None

    @classmethod
    def from_transitions(
        cls,
        n_states: int,
        n_actions: int,
        transitions: Mapping[tuple[int, int], Iterable[tuple[int, float, float]]],
        p0,
        gamma: float,
        state_labels: Sequence[str] | None = None,
        action_labels: Sequence[str] | None = None,
    ) -> "TabularMdp":
        """Build from a sparse map (s, a) -> [(s', probability, reward), ...]."""
        row_ptr = np.zeros(n_states * n_actions + 1, dtype=np.int64)
        rows = {}
        for (s, a), outs in transitions.items():
            rows[s * n_actions + a] = list(outs)
        counts = np.zeros(n_states * n_actions, dtype=np.int64)
        for r, outs in rows.items():
            counts[r] = len(outs)
        np.cumsum(counts, out=row_ptr[1:])
        nnz = int(row_ptr[-1])
        nxt = np.zeros(nnz, dtype=np.int32)
        prb = np.zeros(nnz, dtype=np.float64)
        rew = np.zeros(nnz, dtype=np.float64)
        for r, outs in rows.items():
            lo = row_ptr[r]
            for i, (s2, p, rw) in enumerate(sorted(outs)):
                nxt[lo + i] = s2
                prb[lo + i] = p
                rew[lo + i] = rw
        return cls(
            n_states=n_states,
            n_actions=n_actions,
            row_ptr=_frozen(row_ptr, np.int64),
            next_state=_frozen(nxt, np.int32),
            prob=_frozen(prb, np.float64),
            reward=_frozen(rew, np.float64),
            p0=_frozen(p0, np.float64),
            gamma=float(gamma),
            state_labels=tuple(state_labels) if state_labels is not None else None,
            action_labels=tuple(action_labels) if action_labels is not None else None,
        )

    def row(self, s: int, a: int):
        """Return (next_states, probs, rewards) for one (state, action) pair."""
        lo, hi = self.row_ptr[s * self.n_actions + a], self.row_ptr[s * self.n_actions + a + 1]
        return self.next_state[lo:hi], self.prob[lo:hi], self.reward[lo:hi]

    def transition_map(self) -> dict[tuple[int, int], list[tuple[int, float, float]]]:
        out = {}
        for s in range(self.n_states):
            for a in range(self.n_actions):
                nxt, p, r = self.row(s, a)
                out[(s, a)] = [(int(n), float(pp), float(rr)) for n, pp, rr in zip(nxt, p, r)]
        return out

    @cached_property
    def expected_rewards(self) -> np.ndarray:
        """r̄(s, a) = Σ_s' P(s'|s,a) R(s,a,s'), shape (S, A)."""
        n_rows = self.n_states * self.n_actions
        lengths = np.diff(self.row_ptr)
        row_of = np.repeat(np.arange(n_rows), lengths)
        out = np.bincount(row_of, weights=self.prob * self.reward, minlength=n_rows)
        out = out.reshape(self.n_states, self.n_actions)
        out.setflags(write=False)
        return out

    @cached_property
    def transition_matrix(self) -> sp.csr_matrix:
        """Sparse (S*A, S) matrix of transition probabilities."""
        indptr = np.asarray(self.row_ptr, dtype=np.int64)
        return sp.csr_matrix(
            (self.prob, self.next_state.astype(np.int64), indptr),
            shape=(self.n_states * self.n_actions, self.n_states),
        )

    @cached_property
    def _sampling_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Global cumulative transition mass and per-row offsets (for sampling)."""
        gc = np.cumsum(self.prob)
        starts = self.row_ptr[:-1]
        if gc.size:
            offsets = np.where(starts > 0, gc[np.maximum(starts - 1, 0)], 0.0)
        else:
            offsets = np.zeros(len(starts))
        gc.setflags(write=False)
        offsets.setflags(write=False)
        return gc, offsets

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return replace(self, gamma=float(gamma))


@dataclass(frozen=True)
class DeterministicPolicy:
    """One action index per state."""

    action_of: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "action_of", _frozen(self.action_of, np.int64))

    def indicator(self, n_actions: int) -> np.ndarray:
        """The 0/1 matrix π[s, a] = 1 iff action_of[s] == a."""
        out = np.zeros((len(self.action_of), n_actions))
        out[np.arange(len(self.action_of)), self.action_of] = 1.0
        return out


@dataclass(frozen=True)
class StochasticPolicy:
    """Row-stochastic state × action probability matrix."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs, np.float64))


def uniform_random_policy(mdp: TabularMdp) -> StochasticPolicy:
    return StochasticPolicy(np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions))


@dataclass(frozen=True)
class ValueFunction:
    """State values together with the Bellman residual they satisfy."""

    v: np.ndarray
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen(self.v, np.float64))


@dataclass(frozen=True)
class EvalReport:
    """Result of a policy evaluation (exact or Monte-Carlo)."""

    expected_return: float
    method: str  # "exact" | "monte-carlo"
    episodes: int | None = None
    std_error: float | None = None
    seed: int | None = None


def validate(mdp: TabularMdp) -> list[str]:
    """Check structural invariants; return human-readable violations (empty if OK)."""
    violations = []
    if not 0.0 < mdp.gamma < 1.0:
        violations.append(f"gamma {mdp.gamma} outside (0, 1)")
    if mdp.prob.size and ((mdp.prob < -PROB_TOL).any() or (mdp.prob > 1 + PROB_TOL).any()):
        violations.append("transition probabilities outside [0, 1]")
    lengths = np.diff(mdp.row_ptr)
    for row in np.nonzero(lengths == 0)[0]:
        s, a = divmod(int(row), mdp.n_actions)
        violations.append(f"(s={s}, a={a}) has no outgoing transitions")
    if mdp.prob.size:
        sums = np.zeros(mdp.n_states * mdp.n_actions)
        np.add.at(sums, np.repeat(np.arange(len(lengths)), lengths), mdp.prob)
        bad = np.nonzero((np.abs(sums - 1.0) > PROB_TOL) & (lengths > 0))[0]
        for row in bad:
            s, a = divmod(int(row), mdp.n_actions)
            violations.append(f"(s={s}, a={a}) transition probabilities sum to {sums[row]!r}")
    for row in range(mdp.n_states * mdp.n_actions):
        nxt = mdp.next_state[mdp.row_ptr[row]:mdp.row_ptr[row + 1]]
        if len(np.unique(nxt)) != len(nxt):
            s, a = divmod(row, mdp.n_actions)
            violations.append(f"(s={s}, a={a}) has duplicate successor records")
        if nxt.size and (nxt.min() < 0 or nxt.max() >= mdp.n_states):
            s, a = divmod(row, mdp.n_actions)
            violations.append(f"(s={s}, a={a}) references an out-of-range successor")
    if abs(mdp.p0.sum() - 1.0) > PROB_TOL:
        violations.append(f"p0 sums to {mdp.p0.sum()!r}")
    if (mdp.p0 < -PROB_TOL).any():
        violations.append("p0 has negative entries")
    return violations


def prune_unreachable(mdp: TabularMdp, features=None):
    """Drop states unreachable from the initial distribution.

    Breadth-first closure over transitions with probability > 0 starting from
    {s : p0(s) > 0}.  Returns (pruned mdp, pruned features, index_map) where
    index_map[old] is the new index or -1 for dropped states.  ``features``
    may be None or a FeatureMatrix-like object with a ``values`` array.
    """
    start = np.nonzero(mdp.p0 > 0)[0]
    if len(start) == 0:
        raise ValueError("no state has positive initial probability")
    reach = np.zeros(mdp.n_states, dtype=bool)
    reach[start] = True
    frontier = list(start)
    A = mdp.n_actions
    while frontier:
        s = frontier.pop()
        lo, hi = mdp.row_ptr[s * A], mdp.row_ptr[(s + 1) * A]
        nxt = mdp.next_state[lo:hi][mdp.prob[lo:hi] > 0]
        for s2 in np.unique(nxt):
            if not reach[s2]:
                reach[s2] = True
                frontier.append(int(s2))
    index_map = np.full(mdp.n_states, -1, dtype=np.int64)
    kept = np.nonzero(reach)[0]
    index_map[kept] = np.arange(len(kept))

    trans = {}
    for new_s, old_s in enumerate(kept):
        for a in range(A):
            nxt, p, r = mdp.row(int(old_s), a)
            trans[(new_s, a)] = [
                (int(index_map[n]), float(pp), float(rr)) for n, pp, rr in zip(nxt, p, r)
            ]
    labels = None
    if mdp.state_labels is not None:
        labels = [mdp.state_labels[i] for i in kept]
    pruned = TabularMdp.from_transitions(
        n_states=len(kept),
        n_actions=A,
        transitions=trans,
        p0=mdp.p0[kept],
        gamma=mdp.gamma,
        state_labels=labels,
        action_labels=mdp.action_labels,
    )
    new_features = None
    if features is not None:
        new_features = features.take_states(kept)
    return pruned, new_features, index_map


def value_iteration(
    mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 10**6
) -> tuple[ValueFunction, DeterministicPolicy]:
    """Solve for optimal values with the Bellman optimality backup.

    Returns values whose sup-norm Bellman residual is below ``tol`` and the
    greedy policy (ties broken by lowest action index).  Raises
    ConvergenceError if ``max_iter`` sweeps are not enough.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v, n_iter, delta = kernels.value_iteration(
        mdp.row_ptr, mdp.next_state, mdp.prob,
        np.ascontiguousarray(mdp.expected_rewards).ravel(),
        mdp.n_states, mdp.n_actions, mdp.gamma, tol, max_iter,
    )
    if delta >= tol:
        raise ConvergenceError(
            f"value iteration residual {delta:.3e} after {n_iter} iterations (tol {tol:.1e})",
            residual=float(delta),
            iterations=int(n_iter),
        )
    q = q_values(mdp, v)
    residual = float(np.max(np.abs(q.max(axis=1) - v))) if mdp.n_states else 0.0
    return ValueFunction(v, residual), DeterministicPolicy(np.argmax(q, axis=1))


def q_values(mdp: TabularMdp, v) -> np.ndarray:
    """Q(s, a) = Σ_s' P(s'|s,a) (R + γ v(s')), shape (S, A)."""
    vec = v.v if isinstance(v, ValueFunction) else np.asarray(v, dtype=np.float64)
    if not np.isfinite(vec).all():
        raise ValueError("value function has non-finite entries")
    q = mdp.expected_rewards + mdp.gamma * (mdp.transition_matrix @ vec).reshape(
        mdp.n_states, mdp.n_actions
    )
    return q


def _policy_rows(mdp: TabularMdp, policy):
    """Dense (P_π, r_π) for the Markov chain induced by a policy."""
    S, A = mdp.n_states, mdp.n_actions
    T = mdp.transition_matrix
    if isinstance(policy, DeterministicPolicy):
        rows = np.arange(S) * A + policy.action_of
        P = T[rows]
        r = mdp.expected_rewards[np.arange(S), policy.action_of]
    elif isinstance(policy, StochasticPolicy):
        # W @ T mixes the A action rows of each state by the policy weights
        W = sp.csr_matrix(
            (policy.probs.ravel(),
             (np.repeat(np.arange(S), A), np.arange(S * A))),
            shape=(S, S * A),
        )
        P = W @ T
        r = (policy.probs * mdp.expected_rewards).sum(axis=1)
    else:
        raise TypeError(f"unsupported policy type {type(policy)!r}")
    return P, r


def evaluate_policy_exact(mdp: TabularMdp, policy) -> EvalReport:
    """Expected discounted return from p0 under a fixed policy (direct solve)."""
    v = policy_values(mdp, policy)
    return EvalReport(expected_return=float(mdp.p0 @ v), method="exact")


def policy_values(mdp: TabularMdp, policy) -> np.ndarray:
    """State values of a fixed policy via (I − γ P_π) V = r_π."""
    P, r = _policy_rows(mdp, policy)
    S = mdp.n_states
    if S <= 600:
        A_ = np.eye(S) - mdp.gamma * P.toarray()
        return np.linalg.solve(A_, r)
    A_ = sp.eye(S, format="csr") - mdp.gamma * P
    return sp.linalg.spsolve(A_.tocsc(), r)


def occupancy_measure(mdp: TabularMdp, policy) -> np.ndarray:
    """Discounted state-action visit frequencies x(s, a) of a policy.

    Solves (I − γ P_πᵀ) y = p0 for state occupancies, then splits y over
    actions by the policy weights.  Σ x = 1 / (1 − γ).
    """
    P, _ = _policy_rows(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    if S <= 600:
        y = np.linalg.solve(np.eye(S) - mdp.gamma * P.toarray().T, mdp.p0)
    else:
        A_ = (sp.eye(S, format="csr") - mdp.gamma * P).T.tocsc()
        y = sp.linalg.spsolve(A_, mdp.p0)
    if isinstance(policy, DeterministicPolicy):
        x = np.zeros((S, A))
        x[np.arange(S), policy.action_of] = y
    else:
        x = policy.probs * y[:, None]
    return x


def _episode_seeds(seed: int, episodes: int) -> np.ndarray:
    """Deterministic per-episode generator states derived from (seed, index)."""
    root = np.random.SeedSequence(seed)
    return root.spawn(episodes)


def simulate(
    mdp: TabularMdp,
    policy,
    seed: int,
    episodes: int,
    max_steps: int = 1000,
    record_traces: bool = False,
):
    """Monte-Carlo rollouts with a seeded, schedule-independent generator.

    Each episode derives its stream from (seed, episode index), so results do
    not depend on evaluation order.  Returns (EvalReport, traces) where traces
    is a list of visited-state index arrays when ``record_traces`` else None.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    S, A = mdp.n_states, mdp.n_actions
    deterministic = isinstance(policy, DeterministicPolicy)
    if deterministic:
        actions = policy.action_of.astype(np.int64)
        act_gc = act_off = None
    else:
        actions = None
        act_gc = np.cumsum(policy.probs.ravel())
        starts = np.arange(S) * A
        act_off = np.where(starts > 0, act_gc[np.maximum(starts - 1, 0)], 0.0)
    trans_gc, trans_off = mdp._sampling_tables
    p0_cum = np.cumsum(mdp.p0)
    absorbing = _absorbing_under(mdp, policy)
    per_ep = max_steps * (1 if deterministic else 2) + 1

    returns = np.empty(episodes)
    traces = [] if record_traces else None
    chunk = max(1, min(episodes, (1 << 23) // per_ep))
    seeds = _episode_seeds(seed, episodes)
    for lo in range(0, episodes, chunk):
        hi = min(lo + chunk, episodes)
        u = np.empty((hi - lo, per_ep))
        for i, ss in enumerate(seeds[lo:hi]):
            u[i] = np.random.Generator(np.random.PCG64(ss)).random(per_ep)
        rets, trace_buf, lengths = kernels.simulate_batch(
            mdp.row_ptr, mdp.next_state, trans_gc, trans_off, mdp.reward,
            p0_cum, absorbing, mdp.gamma, max_steps, u,
            actions, act_gc, act_off, record_traces,
        )
        returns[lo:hi] = rets
        if record_traces:
            pos = 0
            for n in lengths:
                traces.append(trace_buf[pos:pos + n].copy())
                pos += n
    mean = float(returns.mean())
    std_error = float(returns.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    report = EvalReport(
        expected_return=mean,
        method="monte-carlo",
        episodes=episodes,
        std_error=std_error,
        seed=seed,
    )
    return report, traces


def _absorbing_under(mdp: TabularMdp, policy) -> np.ndarray:
    """States whose future return is exactly 0 under the policy (early stop)."""
    S, A = mdp.n_states, mdp.n_actions

    def row_absorbs(s, a):
        nxt, p, r = mdp.row(s, a)
        return len(nxt) == 1 and nxt[0] == s and r[0] == 0.0

    out = np.zeros(S, dtype=np.uint8)
    for s in range(S):
        if isinstance(policy, DeterministicPolicy):
            out[s] = row_absorbs(s, int(policy.action_of[s]))
        else:
            acts = np.nonzero(policy.probs[s] > 0)[0]
            out[s] = all(row_absorbs(s, int(a)) for a in acts)
    return out


def normalized_return(j: float, j_rand: float, j_opt: float) -> float:
    """Affine rescaling: 0 at the random policy, 1 at the unrestricted optimum."""
    if j_opt == j_rand:
        raise ValueError("degenerate normalization: j_opt equals j_rand")
    return (j - j_rand) / (j_opt - j_rand)


def truncation_bound(mdp: TabularMdp, max_steps: int) -> float:
    """Upper bound on return mass ignored by truncating episodes at max_steps."""
    rmax = float(np.max(np.abs(mdp.reward))) if mdp.reward.size else 0.0
    return mdp.gamma**max_steps * rmax / (1.0 - mdp.gamma)
