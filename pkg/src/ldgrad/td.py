"""Temporal-difference estimation of grad log d_gamma.

Tabular TD(0) runs on gated backward samples (see ``mdp.sample_backward_batch``):
the Bernoulli gate realises both the discount and the sub-normalised
backward kernel, so the expected update is exactly ``Y w - w``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numba
import numpy as np

from .errors import AssumptionError, ConfigurationError, ModelError
from .exact import GradTable, OccupancyTable, solve_log_density_gradient, solve_occupancy
from .features import FeatureMap
from .mdp import (SoftmaxPolicy, TabularMdp, TransitionSample, backward_kernel,
                  pair_transition_matrix, policy_probs, sample_backward_batch,
                  sample_occupancy_batch)
from .schedules import StepSchedule

CHUNK = 1 << 16

# The slowest mode of the mean TD update contracts at roughly (1 - gamma) min d, and
# a / (b + t) stalls when a times that rate is well below 1/2.
TD_DEFAULT_SCHEDULE = StepSchedule.robbins_monro(50.0, 1000.0)


def apply_operator_Y(mdp: TabularMdp, policy: SoftmaxPolicy, occupancy: OccupancyTable,
                     w: GradTable | np.ndarray) -> GradTable:
    """gamma D^-1 P_pi^T D W + G."""
    W = w.w if isinstance(w, GradTable) else np.asarray(w, dtype=float)
    d = occupancy.d
    if np.any(d <= 0):
        raise ModelError("operator Y needs strictly positive occupancy")
    P = pair_transition_matrix(mdp, policy_probs(policy, mdp))
    backed = (P.T @ (d[:, None] * W)) / d[:, None]
    return GradTable(occupancy.gamma * backed + policy.score_matrix(), occupancy.gamma)


def weighted_l1(occupancy: OccupancyTable, U: np.ndarray, V: np.ndarray) -> float:
    return float(occupancy.d @ np.abs(np.asarray(U) - np.asarray(V)).sum(axis=1))


@dataclass(frozen=True)
class ContractionCheck:
    lhs: float
    rhs: float
    non_expansive_only: bool  # gamma = 1: only lhs <= rhs is claimed

    def __iter__(self):
        return iter((self.lhs, self.rhs))

    def holds(self, tol: float = 1e-10) -> bool:
        return self.lhs <= self.rhs + tol


def contraction_diagnostic(mdp, policy, occupancy: OccupancyTable, u, v) -> ContractionCheck:
    U = u.w if isinstance(u, GradTable) else np.asarray(u, dtype=float)
    V = v.w if isinstance(v, GradTable) else np.asarray(v, dtype=float)
    lhs = weighted_l1(occupancy, apply_operator_Y(mdp, policy, occupancy, U).w,
                      apply_operator_Y(mdp, policy, occupancy, V).w)
    rhs = occupancy.gamma * weighted_l1(occupancy, U, V)
    return ContractionCheck(lhs, rhs, occupancy.gamma >= 1.0)


def power_iteration(mdp, policy, occupancy: OccupancyTable, iterations: int,
                    w0: np.ndarray | None = None, target: np.ndarray | None = None):
    """Repeated application of Y from ``w0`` (zeros by default).

    Returns the final table and, if ``target`` is given, the weighted-L1
    error after each application (index 0 is the initial error).
    """
    W = np.zeros((occupancy.num_pairs, policy.num_params)) if w0 is None else np.array(w0, float)
    errors = [] if target is None else [weighted_l1(occupancy, W, target)]
    for _ in range(iterations):
        W = apply_operator_Y(mdp, policy, occupancy, W).w
        if target is not None:
            errors.append(weighted_l1(occupancy, W, target))
    return GradTable(W, occupancy.gamma), errors


# --------------------------------------------------------------------------- tabular TD(0)

@dataclass
class TdState:
    w: np.ndarray  # (N, n), updated in place
    step_count: int = 0
    schedule: StepSchedule = TD_DEFAULT_SCHEDULE

    @classmethod
    def zeros(cls, num_pairs: int, num_params: int, schedule: StepSchedule | None = None):
        return cls(np.zeros((num_pairs, num_params)), 0, schedule or TD_DEFAULT_SCHEDULE)


def td0_step(state: TdState, sample: TransitionSample, bootstrap_active: bool,
             scores: np.ndarray, num_actions: int, alpha: float | None = None) -> TdState:
    """w(s',a') += alpha [1{active} w(s,a) + g(s',a') - w(s',a')]."""
    state.step_count += 1
    step = state.schedule(state.step_count) if alpha is None else alpha
    j = sample.s_next * num_actions + sample.a_next
    target = scores[j].copy()
    if bootstrap_active:
        target += state.w[sample.s * num_actions + sample.a]
    state.w[j] += step * (target - state.w[j])
    return state


@numba.njit(cache=True)
def _td0_kernel(W, prev, nxt, active, scores, steps):
    n = W.shape[1]
    for t in range(nxt.size):
        j = nxt[t]
        i = prev[t]
        step = steps[t]
        for k in range(n):
            boot = W[i, k] if active[t] else 0.0
            W[j, k] += step * (boot + scores[j, k] - W[j, k])


def _centred(W, occupancy):
    return W - occupancy.d @ W if occupancy.gamma >= 1.0 else W.copy()


def run_td0(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float, iterations: int,
            schedule: StepSchedule | None = None, rng: np.random.Generator | None = None,
            occupancy: OccupancyTable | None = None, record_every: int | None = None,
            reference: np.ndarray | None = None):
    """Stochastic TD(0) from W = 0 on gated backward samples.

    At gamma = 1 the update is blind to adding a constant to every row, so
    the returned table is centred to satisfy E_d[w] = 0.

    Returns the learned ``GradTable``; if ``record_every`` is set, also a list
    of ``(iteration, weighted_l1_error, wall_clock_ns)`` rows measured against
    ``reference`` (the exact table when not supplied).
    """
    if iterations < 1:
        raise ConfigurationError("iterations must be >= 1")
    schedule = schedule or TD_DEFAULT_SCHEDULE
    rng = rng if rng is not None else np.random.default_rng()
    occupancy = occupancy or solve_occupancy(mdp, policy, gamma)
    kernel = backward_kernel(mdp, policy, occupancy)
    scores = policy.score_matrix()
    A = mdp.num_actions
    W = np.zeros((mdp.num_pairs, policy.num_params))
    curve = []
    if record_every:
        if reference is None:
            reference = solve_log_density_gradient(mdp, policy, occupancy.gamma, occ=occupancy).w
        curve.append((0, weighted_l1(occupancy, W, reference), 0))
    start = time.perf_counter_ns()
    done = 0
    stride = record_every or CHUNK
    # samples are drawn in fixed-size chunks so the output does not depend on the logging stride
    while done < iterations:
        batch, active = sample_backward_batch(mdp, policy, occupancy, min(CHUNK, iterations - done), rng, kernel)
        prev = np.where(active, batch.s * A + batch.a, 0)
        nxt = batch.s_next * A + batch.a_next
        steps = schedule.steps(done + 1, len(batch))
        lo = 0
        while lo < len(batch):
            hi = min(len(batch), lo + stride - (done + lo) % stride)
            _td0_kernel(W, prev[lo:hi], nxt[lo:hi], active[lo:hi], scores, steps[lo:hi])
            if record_every and (done + hi) % record_every == 0:
                current = _centred(W, occupancy)
                curve.append((done + hi, weighted_l1(occupancy, current, reference),
                              time.perf_counter_ns() - start))
            lo = hi
        done += len(batch)
    table = GradTable(_centred(W, occupancy), occupancy.gamma)
    return (table, curve) if record_every else table


# --------------------------------------------------------------------------- linear TD

@dataclass
class LinearTdState:
    zeta: np.ndarray  # (d_f, n), updated in place
    feature_map: FeatureMap
    step_count: int = 0

    @classmethod
    def zeros(cls, feature_map: FeatureMap, num_params: int):
        return cls(np.zeros((feature_map.dim, num_params)), feature_map)

    def table(self) -> np.ndarray:
        """w(s, a) = zeta^T Phi(s, a) for every pair, shape (N, n)."""
        return self.feature_map.table.T @ self.zeta


def linear_td_step(state: LinearTdState, sample: TransitionSample, alpha_k: float,
                   bootstrap: float, scores: np.ndarray, num_actions: int) -> LinearTdState:
    """zeta^T += alpha (c zeta^T Phi(s,a) + g(s',a') - zeta^T Phi(s',a')) Phi(s',a')^T.

    ``bootstrap`` is the weight c on the predecessor term: gamma for forward
    samples, the 0/1 gate for backward samples.
    """
    if scores.shape[1] != state.zeta.shape[1]:
        raise ConfigurationError("score dimension does not match zeta")
    phi = state.feature_map.table
    j = sample.s_next * num_actions + sample.a_next
    err = scores[j] - state.zeta.T @ phi[:, j]
    if bootstrap:
        err = err + bootstrap * (state.zeta.T @ phi[:, sample.s * num_actions + sample.a])
    state.zeta += alpha_k * np.outer(phi[:, j], err)
    state.step_count += 1
    return state


def _transition_weights(mdp, policy, occupancy, sampling):
    """Joint law d_i P_pi[i, j] of (predecessor i, successor j) and the successor marginal.

    forward:  (s, a) ~ d, one step forward, so the successor marginal is d P_pi.
    backward: (s', a') ~ d with the gated predecessor; the gate mass carries
              the discount, so the bootstrapped joint is gamma d_i P_pi[i, j].
    """
    if sampling not in ("forward", "backward", "display"):
        raise ConfigurationError(f"unknown sampling scheme {sampling!r}")
    P = pair_transition_matrix(mdp, policy_probs(policy, mdp))
    joint = occupancy.d[:, None] * P
    return joint, occupancy.d if sampling == "backward" else joint.sum(axis=0)


def assemble_linear_td_system(mdp, policy, occupancy: OccupancyTable, feature_map: FeatureMap,
                              sampling: str = "backward"):
    """Mean dynamics zeta' = A zeta + g of linear TD under the chosen sampling.

    ``display`` gives A = gamma E[Phi' (Phi - Phi')^T], the matrix as printed
    next to the forward update; it is kept for comparison only and is not the
    mean dynamics of either implemented update when gamma < 1.
    """
    if feature_map.num_pairs != mdp.num_pairs:
        raise ConfigurationError("feature map and MDP disagree on the number of pairs")
    joint, marginal = _transition_weights(mdp, policy, occupancy, sampling)
    Psi = feature_map.table
    cross = Psi @ joint.T @ Psi.T
    own = (Psi * marginal) @ Psi.T
    if sampling == "display":
        A = occupancy.gamma * (cross - own)
    else:
        A = occupancy.gamma * cross - own
    g = (Psi * marginal) @ policy.score_matrix()
    return A, g


def solve_linear_td_fixed_point(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """zeta with A zeta + g = 0."""
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise AssumptionError("linear-TD matrix A is singular")
    return np.linalg.solve(A, -g)


@numba.njit(cache=True)
def _linear_td_kernel(zeta, phi, prev, nxt, boot, scores, steps):
    d_f, n = zeta.shape
    err = np.empty(n)
    for t in range(nxt.size):
        j = nxt[t]
        i = prev[t]
        for k in range(n):
            acc = scores[j, k]
            for f in range(d_f):
                acc += zeta[f, k] * (boot[t] * phi[f, i] - phi[f, j])
            err[k] = acc
        for f in range(d_f):
            pf = phi[f, j]
            if pf != 0.0:
                for k in range(n):
                    zeta[f, k] += steps[t] * pf * err[k]


def run_linear_td(mdp, policy, gamma: float, feature_map: FeatureMap, iterations: int,
                  schedule: StepSchedule | None = None, rng=None, sampling: str = "backward",
                  occupancy: OccupancyTable | None = None) -> LinearTdState:
    schedule = schedule or TD_DEFAULT_SCHEDULE
    rng = rng if rng is not None else np.random.default_rng()
    occupancy = occupancy or solve_occupancy(mdp, policy, gamma)
    scores = policy.score_matrix()
    A = mdp.num_actions
    state = LinearTdState.zeros(feature_map, policy.num_params)
    phi = np.ascontiguousarray(feature_map.table)
    kernel = backward_kernel(mdp, policy, occupancy) if sampling == "backward" else None
    done = 0
    while done < iterations:
        count = min(CHUNK, iterations - done)
        if sampling == "backward":
            batch, active = sample_backward_batch(mdp, policy, occupancy, count, rng, kernel)
            boot = active.astype(float)
        elif sampling == "forward":
            batch = sample_occupancy_batch(mdp, policy, count, rng, occupancy)
            boot = np.full(count, occupancy.gamma)
        else:
            raise ConfigurationError(f"unknown sampling scheme {sampling!r}")
        prev = np.maximum(batch.s * A + batch.a, 0)
        nxt = batch.s_next * A + batch.a_next
        _linear_td_kernel(state.zeta, phi, prev, nxt, boot, scores, schedule.steps(done + 1, count))
        done += count
    state.step_count = iterations
    return state
