"""Min-max (Fenchel dual) estimation of grad log d_gamma with linear features.

Parameters are stored in (d_f, n) layout: w(s, a) = alpha^T Phi(s, a),
f(s, a) = beta^T Phi(s, a), tau in R^n.  The stacked iterate is
``[alpha; beta; tau^T]`` with shape (2 d_f + 1, n) and the mean dynamics are
``G @ stacked + h`` with

    G = [[0,     -A,   -lam m],
         [A^T,   -C,    0    ],
         [lam m^T, 0,  -lam  ]]

where A = Psi D (I - gamma P_pi) Psi^T, C = Psi D Psi^T, m = Psi d and
B = Psi D G_score.  The alpha row uses A (not A^T) so that the flow is
gradient descent-ascent on the loss; that orientation is what makes G stable.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numba
import numpy as np

from .errors import AssumptionError, ConfigurationError
from .exact import OccupancyTable, solve_occupancy
from .features import FeatureMap
from .mdp import (SoftmaxPolicy, TabularMdp, TransitionSample, pair_transition_matrix,
                  policy_probs, sample_occupancy_batch)
from .schedules import StepSchedule

CHUNK = 1 << 15


def _tables(w, num_pairs):
    W = np.asarray(w, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if W.shape[0] != num_pairs:
        raise ConfigurationError(f"table has {W.shape[0]} rows, expected {num_pairs}")
    return W


def loss_L(mdp: TabularMdp, policy: SoftmaxPolicy, occupancy: OccupancyTable, w, f, tau,
           lam: float) -> float:
    """Saddle loss evaluated by exact summation over tables w, f of shape (N, n).

    E_d[f.w] - E_d[f.g] - gamma E[f(s',a').w(s,a)] - 1/2 E_d|f|^2
    + lam (tau . E_d[w] - 1/2 |tau|^2)
    """
    N = mdp.num_pairs
    W, F = _tables(w, N), _tables(f, N)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    d = occupancy.d
    P = pair_transition_matrix(mdp, policy_probs(policy, mdp))
    G = policy.score_matrix()
    cross = np.einsum("i,ij,jk,ik->", d, P, F, W)
    value = (np.einsum("i,ik,ik->", d, F, W) - np.einsum("i,ik,ik->", d, F, G)
             - occupancy.gamma * cross - 0.5 * np.einsum("i,ik->", d, F * F))
    return float(value + lam * (tau @ (d @ W) - 0.5 * tau @ tau))


def reweighted_objective(mdp: TabularMdp, policy: SoftmaxPolicy, occupancy: OccupancyTable, w,
                         lam: float) -> float:
    """1/2 E_d |nu / d|^2 + lam/2 |E_d w|^2 with
    nu(s',a') = d(s',a')(w - g)(s',a') - gamma sum_{s,a} d(s,a) P(s'|s,a) pi(a'|s') w(s,a).
    """
    W = _tables(w, mdp.num_pairs)
    d = occupancy.d
    P = pair_transition_matrix(mdp, policy_probs(policy, mdp))
    nu = d[:, None] * (W - policy.score_matrix()) - occupancy.gamma * P.T @ (d[:, None] * W)
    mean_w = d @ W
    return float(0.5 * np.sum((nu * nu).sum(axis=1) / d) + 0.5 * lam * mean_w @ mean_w)


def dual_maximiser(mdp, policy, occupancy: OccupancyTable, w):
    """Unconstrained argmax over (f, tau) of ``loss_L`` for fixed tabular w."""
    W = _tables(w, mdp.num_pairs)
    d = occupancy.d
    P = pair_transition_matrix(mdp, policy_probs(policy, mdp))
    # dL/df_j = d_j (w_j - g_j) - gamma sum_i d_i P_ij w_i - d_j f_j
    lin = d[:, None] * (W - policy.score_matrix()) - occupancy.gamma * P.T @ (d[:, None] * W)
    return lin / d[:, None], d @ W


# --------------------------------------------------------------------------- exact system

@dataclass(frozen=True, eq=False)
class SaddleSystem:
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    m: np.ndarray  # Psi d, the lam-coupling column
    lam: float
    gamma: float

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def num_params(self) -> int:
        return self.B.shape[1]

    @property
    def has_tau(self) -> bool:
        return self.lam != 0.0

    def stack(self, alpha, beta, tau) -> np.ndarray:
        parts = [alpha, beta] + ([np.atleast_2d(tau)] if self.has_tau else [])
        return np.vstack(parts)

    def unstack(self, x):
        k = self.dim
        tau = x[2 * k] if self.has_tau else np.zeros(self.num_params)
        return x[:k], x[k:2 * k], tau


def assemble_saddle_system(mdp: TabularMdp, policy: SoftmaxPolicy, occupancy: OccupancyTable,
                           feature_map: FeatureMap, lam: float) -> SaddleSystem:
    if feature_map.num_pairs != mdp.num_pairs:
        raise ConfigurationError("feature map and MDP disagree on the number of pairs")
    if lam < 0:
        raise ConfigurationError("lambda must be non-negative")
    feature_map.check_independent()
    Psi = feature_map.table
    d = occupancy.d
    P = pair_transition_matrix(mdp, policy_probs(policy, mdp))
    N = mdp.num_pairs
    A = (Psi * d) @ (np.eye(N) - occupancy.gamma * P) @ Psi.T
    C = (Psi * d) @ Psi.T
    B = (Psi * d) @ policy.score_matrix()
    m = Psi @ d
    if lam == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise AssumptionError("A is singular and lambda = 0")
    k = A.shape[0]
    size = 2 * k + (1 if lam else 0)
    G = np.zeros((size, size))
    G[:k, k:2 * k] = -A
    G[k:2 * k, :k] = A.T
    G[k:2 * k, k:2 * k] = -C
    if lam:
        G[:k, 2 * k] = -lam * m
        G[2 * k, :k] = lam * m
        G[2 * k, 2 * k] = -lam
    h = np.zeros((size, B.shape[1]))
    h[k:2 * k] = -B
    return SaddleSystem(G, h, A, B, C, m, float(lam), occupancy.gamma)


def solve_saddle_fixed_point(system: SaddleSystem):
    """(alpha*, beta*, tau*) solving G x + h = 0."""
    G = system.G
    if np.linalg.matrix_rank(G) < G.shape[0]:
        raise AssumptionError("saddle matrix G is singular")
    return system.unstack(np.linalg.solve(G, -system.h))


def sample_update_matrices(sample: TransitionSample, feature_map: FeatureMap, scores: np.ndarray,
                           gamma: float, lam: float, num_actions: int):
    """Single-sample (G_{t+1}, h_{t+1}) whose expectation is the assembled (G, h)."""
    i = sample.s * num_actions + sample.a
    j = sample.s_next * num_actions + sample.a_next
    phi, phi2 = feature_map.table[:, i], feature_map.table[:, j]
    delta = np.outer(phi, phi) - gamma * np.outer(phi, phi2)
    k = feature_map.dim
    size = 2 * k + (1 if lam else 0)
    G = np.zeros((size, size))
    G[:k, k:2 * k] = -delta
    G[k:2 * k, :k] = delta.T
    G[k:2 * k, k:2 * k] = -np.outer(phi, phi)
    if lam:
        G[:k, 2 * k] = -lam * phi
        G[2 * k, :k] = lam * phi
        G[2 * k, 2 * k] = -lam
    h = np.zeros((size, scores.shape[1]))
    h[k:2 * k] = -np.outer(phi, scores[i])
    return G, h


# --------------------------------------------------------------------------- iterates

@dataclass
class SaddleState:
    alpha: np.ndarray  # (d_f, n)
    beta: np.ndarray  # (d_f, n)
    tau: np.ndarray  # (n,)
    lam: float
    step_index: int = 0

    @classmethod
    def zeros(cls, dim: int, num_params: int, lam: float) -> "SaddleState":
        return cls(np.zeros((dim, num_params)), np.zeros((dim, num_params)), np.zeros(num_params), lam)

    def copy(self) -> "SaddleState":
        return SaddleState(self.alpha.copy(), self.beta.copy(), self.tau.copy(), self.lam, self.step_index)


@dataclass(frozen=True)
class ProjectionSets:
    """Frobenius balls centred at the origin."""

    radius_x: float
    radius_y: float
    radius_z: float

    def __post_init__(self):
        for r in (self.radius_x, self.radius_y, self.radius_z):
            if not (r >= 0 and math.isfinite(r)):
                raise ConfigurationError("projection radii must be finite and non-negative")

    @classmethod
    def around(cls, alpha, beta, tau, factor: float = 10.0, floor: float = 1.0) -> "ProjectionSets":
        """Balls of ``factor`` times the norm of a known solution."""
        return cls(*(max(floor, factor * float(np.linalg.norm(x))) for x in (alpha, beta, tau)))


def project_ball(x: np.ndarray, radius: float) -> np.ndarray:
    norm = np.linalg.norm(x)
    return x if norm <= radius else x * (radius / norm)


def saddle_step(state: SaddleState, sample: TransitionSample, eps_t: float, feature_map: FeatureMap,
                scores: np.ndarray, gamma: float, num_actions: int,
                sets: ProjectionSets | None = None) -> SaddleState:
    """One stochastic descent-ascent update, optionally followed by projection.

    alpha <- alpha - eps (Phi (f - gamma f')^T + lam Phi tau^T)
    beta  <- beta  + eps ((Phi - gamma Phi') w^T - Phi g^T - Phi f^T)
    tau   <- tau   + eps lam (w - tau)
    with w = alpha^T Phi, f = beta^T Phi, f' = beta^T Phi'.
    """
    if scores.shape[1] != state.alpha.shape[1] or feature_map.dim != state.alpha.shape[0]:
        raise ConfigurationError("state shape does not match features/scores")
    i = sample.s * num_actions + sample.a
    j = sample.s_next * num_actions + sample.a_next
    phi, phi2 = feature_map.table[:, i], feature_map.table[:, j]
    lam = state.lam
    w = state.alpha.T @ phi
    f, f2 = state.beta.T @ phi, state.beta.T @ phi2
    alpha = state.alpha - eps_t * (np.outer(phi, f - gamma * f2) + lam * np.outer(phi, state.tau))
    beta = state.beta + eps_t * (np.outer(phi - gamma * phi2, w) - np.outer(phi, scores[i] + f))
    tau = state.tau + eps_t * lam * (w - state.tau)
    if sets is not None:
        alpha = project_ball(alpha, sets.radius_x)
        beta = project_ball(beta, sets.radius_y)
        tau = project_ball(tau, sets.radius_z)
    return SaddleState(alpha, beta, tau, lam, state.step_index + 1)


@numba.njit(cache=True)
def _flush_rows(M, acc, mark, rows, nrows, clock):
    for q in range(nrows):
        r = rows[q]
        wgt = clock - mark[r]
        if wgt != 0.0:
            for k in range(M.shape[1]):
                acc[r, k] += wgt * M[r, k]
        mark[r] = clock


@numba.njit(cache=True)
def _flush_all(M, acc, mark, clock):
    for r in range(M.shape[0]):
        wgt = clock - mark[r]
        if wgt != 0.0:
            for k in range(M.shape[1]):
                acc[r, k] += wgt * M[r, k]
        mark[r] = clock


@numba.njit(cache=True)
def _rows_sq(M, rows, nrows):
    total = 0.0
    for q in range(nrows):
        r = rows[q]
        for k in range(M.shape[1]):
            total += M[r, k] * M[r, k]
    return total


@numba.njit(cache=True)
def _saddle_kernel(alpha, beta, tau, fidx, fval, fcnt, scores, prev, nxt, steps, gamma, lam,
                   rx, ry, rz, acc_a, acc_b, acc_t, mark_a, mark_b, mark_t, state):
    """Sparse-row saddle updates with projection and lazy eps-weighted averaging.

    ``state`` holds [clock, |alpha|^2, |beta|^2]; ``clock`` is the running sum of
    step sizes, and ``acc_* + M * (clock - mark)`` is the running weighted sum.
    A row is flushed (at the clock before the current step) whenever it is
    about to change, so each stored value is weighted by the steps it survived.
    """
    n = alpha.shape[1]
    width = fidx.shape[1]
    rows = np.empty(2 * width, dtype=np.int64)
    w = np.empty(n)
    f = np.empty(n)
    f2 = np.empty(n)
    clock = state[0]
    na = state[1]
    nb = state[2]
    for t in range(nxt.size):
        i = prev[t]
        j = nxt[t]
        eps = steps[t]
        for k in range(n):
            w[k] = 0.0
            f[k] = 0.0
            f2[k] = 0.0
        for q in range(fcnt[i]):
            r = fidx[i, q]
            v = fval[i, q]
            for k in range(n):
                w[k] += v * alpha[r, k]
                f[k] += v * beta[r, k]
        for q in range(fcnt[j]):
            r = fidx[j, q]
            v = fval[j, q]
            for k in range(n):
                f2[k] += v * beta[r, k]
        # rows touched this step: support of Phi_i (alpha, beta) and Phi_j (beta)
        nr = 0
        for q in range(fcnt[i]):
            rows[nr] = fidx[i, q]
            nr += 1
        nra = nr
        for q in range(fcnt[j]):
            r = fidx[j, q]
            dup = False
            for p in range(nr):
                if rows[p] == r:
                    dup = True
            if not dup:
                rows[nr] = r
                nr += 1
        _flush_rows(alpha, acc_a, mark_a, rows, nra, clock)
        _flush_rows(beta, acc_b, mark_b, rows, nr, clock)
        wgt = clock - mark_t[0]
        for k in range(n):
            acc_t[k] += wgt * tau[k]
        mark_t[0] = clock

        na -= _rows_sq(alpha, rows, nra)
        nb -= _rows_sq(beta, rows, nr)
        for q in range(fcnt[i]):
            r = fidx[i, q]
            v = fval[i, q]
            for k in range(n):
                alpha[r, k] -= eps * v * (f[k] - gamma * f2[k] + lam * tau[k])
                beta[r, k] += eps * v * (w[k] - scores[i, k] - f[k])
        for q in range(fcnt[j]):
            r = fidx[j, q]
            v = fval[j, q]
            for k in range(n):
                beta[r, k] -= eps * gamma * v * w[k]
        for k in range(n):
            tau[k] += eps * lam * (w[k] - tau[k])
        na += _rows_sq(alpha, rows, nra)
        nb += _rows_sq(beta, rows, nr)

        if na > rx * rx:
            _flush_all(alpha, acc_a, mark_a, clock)
            na = 0.0
            for r in range(alpha.shape[0]):
                for k in range(n):
                    na += alpha[r, k] * alpha[r, k]
            if na > rx * rx:
                scale = rx / math.sqrt(na)
                alpha *= scale
                na = rx * rx
        if nb > ry * ry:
            _flush_all(beta, acc_b, mark_b, clock)
            nb = 0.0
            for r in range(beta.shape[0]):
                for k in range(n):
                    nb += beta[r, k] * beta[r, k]
            if nb > ry * ry:
                scale = ry / math.sqrt(nb)
                beta *= scale
                nb = ry * ry
        nt = 0.0
        for k in range(n):
            nt += tau[k] * tau[k]
        if nt > rz * rz:
            scale = rz / math.sqrt(nt)
            for k in range(n):
                tau[k] *= scale
        clock += eps
    state[0] = clock
    state[1] = na
    state[2] = nb


@dataclass
class SaddleAverage:
    """eps-weighted averaged iterates plus the final raw iterate."""

    alpha: np.ndarray
    beta: np.ndarray
    tau: np.ndarray
    final: SaddleState
    log: list

    def __iter__(self):
        return iter((self.alpha, self.beta, self.tau))

    def table(self, feature_map: FeatureMap) -> np.ndarray:
        return feature_map.table.T @ self.alpha


class _Averager:
    """Holds the kernel's mutable buffers for one run."""

    def __init__(self, state: SaddleState):
        self.state = state
        k, n = state.alpha.shape
        self.acc = [np.zeros((k, n)), np.zeros((k, n)), np.zeros(n)]
        self.mark = [np.zeros(k), np.zeros(k), np.zeros(1)]
        self.scalars = np.array([0.0, float(np.sum(state.alpha ** 2)), float(np.sum(state.beta ** 2))])

    def averages(self):
        clock = self.scalars[0]
        s = self.state
        if clock <= 0:
            return s.alpha.copy(), s.beta.copy(), s.tau.copy()
        a = (self.acc[0] + s.alpha * (clock - self.mark[0])[:, None]) / clock
        b = (self.acc[1] + s.beta * (clock - self.mark[1])[:, None]) / clock
        t = (self.acc[2] + s.tau * (clock - self.mark[2][0])) / clock
        return a, b, t


def run_projected_ldg(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float, feature_map: FeatureMap,
                      lam: float, sets: ProjectionSets, m: int, schedule: StepSchedule,
                      rng: np.random.Generator, occupancy: OccupancyTable | None = None,
                      init: SaddleState | None = None, samples=None, log_every: int | None = None,
                      log_fn=None) -> SaddleAverage:
    """Projected stochastic descent-ascent with eps-weighted iterate averaging.

    ``samples`` may supply a pre-drawn ``TransitionBatch`` of length ``m``;
    otherwise (s, a) are drawn from the solved occupancy.  ``log_fn`` maps
    the current averages to a dict that is stored every ``log_every`` steps.
    """
    if m < 1:
        raise ConfigurationError("m must be >= 1")
    if feature_map.num_pairs != mdp.num_pairs:
        raise ConfigurationError("feature map and MDP disagree on the number of pairs")
    if samples is not None and len(samples) < m:
        raise ConfigurationError(f"{len(samples)} pre-drawn samples for m = {m} steps")
    occupancy = occupancy or solve_occupancy(mdp, policy, gamma)
    scores = np.ascontiguousarray(policy.score_matrix())
    state = init.copy() if init is not None else SaddleState.zeros(feature_map.dim, policy.num_params, lam)
    state.lam = lam
    avg = _Averager(state)
    fidx, fval, fcnt = feature_map.sparse_columns()
    A = mdp.num_actions
    log = []
    start = time.perf_counter_ns()
    done = 0
    stride = log_every or CHUNK
    # samples are drawn in fixed-size chunks so the output does not depend on the logging stride
    while done < m:
        count = min(CHUNK, m - done)
        if samples is None:
            batch = sample_occupancy_batch(mdp, policy, count, rng, occupancy)
        else:
            batch = type(samples)(*(getattr(samples, f)[done:done + count]
                                    for f in ("s", "a", "s_next", "a_next", "restart")))
        prev, nxt = batch.pairs(A)
        steps = schedule.steps(state.step_index + 1, count)
        lo = 0
        while lo < count:
            hi = min(count, lo + stride - (done + lo) % stride)
            _saddle_kernel(state.alpha, state.beta, state.tau, fidx, fval, fcnt, scores,
                           prev[lo:hi], nxt[lo:hi], steps[lo:hi], float(occupancy.gamma),
                           float(lam), float(sets.radius_x), float(sets.radius_y), float(sets.radius_z),
                           avg.acc[0], avg.acc[1], avg.acc[2], avg.mark[0], avg.mark[1], avg.mark[2],
                           avg.scalars)
            if log_every and log_fn is not None and (done + hi) % log_every == 0:
                row = {"iteration": done + hi}
                row.update(log_fn(*avg.averages()))
                row["wall_clock_ns"] = time.perf_counter_ns() - start
                log.append(row)
            lo = hi
        state.step_index += count
        done += count
    a, b, t = avg.averages()
    return SaddleAverage(a, b, t, state, log)


# --------------------------------------------------------------------------- gap and step scale

def saddle_loss(system: SaddleSystem, alpha, beta, tau) -> float:
    """Loss in parameter form; equals ``loss_L`` at w = Psi^T alpha, f = Psi^T beta."""
    tau = np.asarray(tau, dtype=float)
    value = np.sum(beta * (system.A.T @ alpha - system.B)) - 0.5 * np.sum(beta * (system.C @ beta))
    return float(value + system.lam * (tau @ (system.m @ alpha) - 0.5 * tau @ tau))


def _max_concave_in_ball(C: np.ndarray, K: np.ndarray, radius: float) -> np.ndarray:
    """argmax <X, K> - 1/2 <X, C X> over |X|_F <= radius (C symmetric PSD)."""
    evals, Q = np.linalg.eigh(C)
    evals = np.clip(evals, 0.0, None)
    Kt = Q.T @ K
    wt = (Kt * Kt).sum(axis=1)

    def norm_at(mu):
        return math.sqrt(np.sum(wt / (evals + mu) ** 2))

    tiny = 1e-14 * max(1.0, evals.max())
    if evals.min() > tiny and norm_at(0.0) <= radius:
        return Q @ (Kt / evals[:, None])
    if radius == 0:
        return np.zeros_like(K)
    lo, hi = 0.0, max(1.0, math.sqrt(wt.sum()) / radius)
    while norm_at(hi) > radius:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if norm_at(mid) > radius:
            lo = mid
        else:
            hi = mid
    return Q @ (Kt / (evals + hi)[:, None])


def optimality_gap(system: SaddleSystem, sets: ProjectionSets, alpha_bar, beta_bar, tau_bar) -> float:
    """max_{(beta,tau) in YxZ} L(alpha_bar, .) - min_{alpha in X} L(., beta_bar, tau_bar)."""
    tau_bar = np.asarray(tau_bar, dtype=float)
    beta_hat = _max_concave_in_ball(system.C, system.A.T @ alpha_bar - system.B, sets.radius_y)
    tau_hat = project_ball(system.m @ alpha_bar, sets.radius_z) if system.has_tau else np.zeros_like(tau_bar)
    upper = saddle_loss(system, alpha_bar, beta_hat, tau_hat)
    slope = system.A @ beta_bar + system.lam * np.outer(system.m, tau_bar)
    const = saddle_loss(system, np.zeros_like(alpha_bar), beta_bar, tau_bar)
    lower = const - sets.radius_x * float(np.linalg.norm(slope))
    return max(0.0, upper - lower)


@dataclass(frozen=True)
class MomentBounds:
    sigma_sq: tuple  # E|G_i,t - G_i|^2 for the four blocks
    mean_sq: tuple  # |G_i|^2


def saddle_moment_bounds(mdp, policy, occupancy: OccupancyTable, feature_map: FeatureMap,
                         lam: float) -> MomentBounds:
    """Exact second moments of the stochastic blocks G_1..G_4 by enumeration.

    G_1 = [delta, lam Phi]       (gradient in alpha is G_1 [beta; tau^T])
    G_2 = [delta^T; lam Phi^T]   G_3 = diag(-Phi Phi^T, -lam)   G_4 = [-Phi g^T; 0]
    """
    P = pair_transition_matrix(mdp, policy_probs(policy, mdp))
    joint = occupancy.d[:, None] * P
    scores = policy.score_matrix()
    Psi = feature_map.table
    k = feature_map.dim
    first = [0.0, 0.0, 0.0, 0.0]
    means = [np.zeros((k, k + 1)), np.zeros((k + 1, k)), np.zeros((k + 1, k + 1)),
             np.zeros((k + 1, scores.shape[1]))]
    for i, j in zip(*np.nonzero(joint)):
        p = joint[i, j]
        phi, phi2 = Psi[:, i], Psi[:, j]
        delta = np.outer(phi, phi) - occupancy.gamma * np.outer(phi, phi2)
        blocks = (
            np.hstack([delta, lam * phi[:, None]]),
            np.vstack([delta.T, lam * phi[None, :]]),
            np.block([[-np.outer(phi, phi), np.zeros((k, 1))], [np.zeros((1, k)), -lam * np.ones((1, 1))]]),
            np.vstack([-np.outer(phi, scores[i]), np.zeros((1, scores.shape[1]))]),
        )
        for q, blk in enumerate(blocks):
            first[q] += p * float(np.sum(blk * blk))
            means[q] += p * blk
    mean_sq = tuple(float(np.sum(M * M)) for M in means)
    sigma_sq = tuple(max(0.0, e - ms) for e, ms in zip(first, mean_sq))
    return MomentBounds(sigma_sq, mean_sq)


def step_scale(bounds: MomentBounds, sets: ProjectionSets) -> float:
    """M* with M*^2 = 2 C_a^2 D_a^2 + 2 C_Y^2 D_Y^2.

    D_a = R_X^2, D_Y = R_Y^2 + R_Z^2 (balls centred at 0); each C bounds a
    stochastic gradient's second moment using E|x|^2 <= Var x + |E x|^2.
    """
    s1, s2, s3, s4 = bounds.sigma_sq
    m1, m2, m3, m4 = bounds.mean_sq
    d_alpha = sets.radius_x ** 2
    d_y = sets.radius_y ** 2 + sets.radius_z ** 2
    c_alpha = (s1 + m1) * d_y ** 2
    c_y = (s2 + m2) * d_y ** 2 + (s3 + m3) * d_y ** 2 + (s4 + m4)
    value = math.sqrt(2 * c_alpha ** 2 * d_alpha ** 2 + 2 * c_y ** 2 * d_y ** 2)
    if not value > 0:
        raise ConfigurationError("M* is zero (degenerate projection sets); the step schedule is undefined")
    return value


def default_schedule(bounds: MomentBounds, sets: ProjectionSets, c: float = 1.0) -> StepSchedule:
    """eps_t = c / (M* sqrt(t))."""
    return StepSchedule.inverse_sqrt(c, step_scale(bounds, sets))


def estimate_gradient_from_w(states, actions, rewards, w_table: np.ndarray, num_actions: int) -> np.ndarray:
    """(1/m) sum_i w(s_i, a_i) r_i."""
    states = np.asarray(states, dtype=np.int64)
    if states.size == 0:
        raise ConfigurationError("need at least one sample")
    pairs = states * num_actions + np.asarray(actions, dtype=np.int64)
    return np.asarray(rewards, dtype=float) @ w_table[pairs] / states.size
