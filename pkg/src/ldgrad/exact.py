"""Closed-form solvers: occupancies, values, log density gradients and policy gradients.

All systems are dense and small (|S||A| in the hundreds), so everything is
direct LU / least squares.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, ModelError, NumericalError
from .mdp import (SoftmaxPolicy, TabularMdp, initial_pair_dist, pair_transition_matrix,
                  policy_probs)

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class OccupancyTable:
    gamma: float
    d: np.ndarray  # (N,)
    d_state: np.ndarray  # (S,)

    @property
    def num_pairs(self) -> int:
        return self.d.size


@dataclass(frozen=True, eq=False)
class ValueTables:
    gamma: float
    q: np.ndarray  # (N,)
    v: np.ndarray  # (S,)


@dataclass(frozen=True, eq=False)
class GradTable:
    """Row (s, a) approximates grad_theta log d_gamma(s, a)."""

    w: np.ndarray  # (N, n)
    gamma: float

    @property
    def num_params(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True, eq=False)
class GradientReport:
    grad: np.ndarray
    method: str  # classical | practical | ldg | residual-corrected
    gamma_eval: float | None = None
    residual_term: np.ndarray | None = None


def _check_gamma(gamma: float, allow_one: bool = True) -> float:
    gamma = float(gamma)
    upper_ok = gamma <= 1.0 if allow_one else gamma < 1.0
    if not (gamma >= 0.0 and upper_ok):
        bound = "[0, 1]" if allow_one else "[0, 1)"
        raise ConfigurationError(f"gamma must lie in {bound}, got {gamma}")
    return gamma


def _lu_solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    rcond = scipy.linalg.lapack.dgecon(lu, np.linalg.norm(M, 1), norm="1")[0]
    if not rcond > 1.0 / COND_LIMIT:
        raise ModelError(f"linear system is numerically singular (condition estimate {1 / max(rcond, 1e-300):.3g})")
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)


def _constrained_lstsq(M: np.ndarray, rhs: np.ndarray, row: np.ndarray, row_rhs) -> np.ndarray:
    """Solve M x = rhs together with row @ x = row_rhs (stacked least squares)."""
    stacked = np.vstack([M, row[None, :]])
    b = np.vstack([rhs.reshape(M.shape[0], -1), np.atleast_2d(row_rhs)])
    x, _, rank, sv = np.linalg.lstsq(stacked, b, rcond=None)
    if rank < M.shape[1] or sv[0] > COND_LIMIT * sv[-1]:
        raise ModelError("stationary system is singular; the induced chain is not ergodic")
    return x if rhs.ndim > 1 else x[:, 0]


def solve_occupancy(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float) -> OccupancyTable:
    """Discounted (gamma < 1) or stationary (gamma = 1) state-action occupancy."""
    gamma = _check_gamma(gamma)
    pi = policy_probs(policy, mdp)
    P = pair_transition_matrix(mdp, pi)
    N = mdp.num_pairs
    flow = np.eye(N) - gamma * P.T
    if gamma < 1.0:
        d = _lu_solve(flow, (1.0 - gamma) * initial_pair_dist(mdp, pi))
    else:
        d = _constrained_lstsq(flow, np.zeros(N), np.ones(N), 1.0)
    d = np.where(np.abs(d) < 1e-15, 0.0, d)
    if np.any(d < -1e-10):
        raise ModelError("solved occupancy has negative mass")
    d = np.clip(d, 0.0, None)
    d_state = d.reshape(mdp.num_states, mdp.num_actions).sum(axis=1)
    return OccupancyTable(gamma, d, d_state)


def flow_residual(mdp: TabularMdp, policy: SoftmaxPolicy, occ: OccupancyTable) -> float:
    """max |d(s') - (1-g) d0(s') - g sum_{s,a} d(s,a) P(s'|s,a)| over states."""
    flow_in = np.einsum("sa,sat->t", occ.d.reshape(mdp.num_states, mdp.num_actions), mdp.transition)
    res = occ.d_state - (1 - occ.gamma) * mdp.initial_dist - occ.gamma * flow_in
    return float(np.abs(res).max())


def solve_values(mdp: TabularMdp, policy: SoftmaxPolicy, gamma_eval: float) -> ValueTables:
    gamma_eval = _check_gamma(gamma_eval, allow_one=False)
    pi = policy_probs(policy, mdp)
    P = pair_transition_matrix(mdp, pi)
    q = _lu_solve(np.eye(mdp.num_pairs) - gamma_eval * P, mdp.reward.reshape(-1))
    v = (pi * q.reshape(pi.shape)).sum(axis=1)
    return ValueTables(gamma_eval, q, v)


def occupancy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float,
                       occ: OccupancyTable | None = None) -> np.ndarray:
    """Jacobian grad_theta d_gamma(s, a) = D W, shape (N, n).

    Solves (I - g P^T) D W = D G; at gamma = 1 the zero-sum row e^T D W = 0
    is appended.  Defined even where d vanishes, unlike W itself.
    """
    gamma = _check_gamma(gamma)
    occ = occ or solve_occupancy(mdp, policy, gamma)
    pi = policy_probs(policy, mdp)
    P = pair_transition_matrix(mdp, pi)
    N = mdp.num_pairs
    rhs = occ.d[:, None] * policy.score_matrix()
    flow = np.eye(N) - gamma * P.T
    if gamma < 1.0:
        return _lu_solve(flow, rhs)
    return _constrained_lstsq(flow, rhs, np.ones(N), np.zeros((1, rhs.shape[1])))


def solve_log_density_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float,
                               lam: float = 1.0, occ: OccupancyTable | None = None) -> GradTable:
    """Exact grad log d_gamma table.

    ``lam`` is accepted for parity with the penalised formulation; the
    zero-mean condition is imposed as a hard constraint instead.
    """
    gamma = _check_gamma(gamma)
    if gamma == 1.0 and not lam > 0:
        raise ConfigurationError("gamma = 1 needs a positive regulariser lambda")
    occ = occ or solve_occupancy(mdp, policy, gamma)
    if np.any(occ.d <= 0):
        raise ModelError("some state-action pair has zero occupancy; grad log d is undefined")
    Y = occupancy_gradient(mdp, policy, gamma, occ)
    return GradTable(Y / occ.d[:, None], gamma)


def ldg_residual(mdp: TabularMdp, policy: SoftmaxPolicy, occ: OccupancyTable, W: np.ndarray) -> float:
    """max-abs residual of (I - g P^T) D W - D G."""
    P = pair_transition_matrix(mdp, policy_probs(policy, mdp))
    DW = occ.d[:, None] * W
    res = DW - occ.gamma * P.T @ DW - occ.d[:, None] * policy.score_matrix()
    return float(np.abs(res).max())


def state_log_density_gradient(grad_table: GradTable, policy: SoftmaxPolicy,
                               tol: float = 1e-6) -> np.ndarray:
    """grad log d(s) = w(s, a) - grad log pi(a|s), checked to be the same for every a."""
    S, A = policy.num_states, policy.num_actions
    diff = (grad_table.w - policy.score_matrix()).reshape(S, A, -1)
    spread = np.abs(diff - diff[:, :1, :]).max() if A > 1 else 0.0
    if spread > tol:
        raise NumericalError(f"w - score differs across actions by {spread:.3g}")
    return np.einsum("sa,sak->sk", policy.probs(), diff)


def policy_performance(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float,
                       occ: OccupancyTable | None = None) -> float:
    occ = occ or solve_occupancy(mdp, policy, gamma)
    return float(occ.d @ mdp.reward.reshape(-1))


def exact_policy_gradient_classical(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float) -> GradientReport:
    """sum d_g(s,a) Q_g(s,a) grad log pi(a|s)."""
    gamma = _check_gamma(gamma, allow_one=False)
    occ = solve_occupancy(mdp, policy, gamma)
    q = solve_values(mdp, policy, gamma).q
    grad = (occ.d * q) @ policy.score_matrix()
    return GradientReport(grad, "classical", gamma)


def exact_policy_gradient_ldg(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float,
                              lam: float = 1.0) -> GradientReport:
    """sum d_g(s,a) grad log d_g(s,a) r(s,a); valid for gamma = 1 as well."""
    gamma = _check_gamma(gamma)
    if gamma == 1.0 and not lam > 0:
        raise ConfigurationError("gamma = 1 needs a positive regulariser lambda")
    Y = occupancy_gradient(mdp, policy, gamma)
    return GradientReport(mdp.reward.reshape(-1) @ Y, "ldg", gamma)


def practical_policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, gamma_eval: float) -> GradientReport:
    """Average-reward gradient with a discounted critic: sum d_1 Q_g grad log pi."""
    gamma_eval = _check_gamma(gamma_eval, allow_one=False)
    occ1 = solve_occupancy(mdp, policy, 1.0)
    q = solve_values(mdp, policy, gamma_eval).q
    return GradientReport((occ1.d * q) @ policy.score_matrix(), "practical", gamma_eval)


def residual_decomposition(mdp: TabularMdp, policy: SoftmaxPolicy, gamma_eval: float,
                           lam: float = 1.0) -> GradientReport:
    """Practical gradient plus (1 - g) sum_s d_1(s) grad log d_1(s) V_g(s)."""
    practical = practical_policy_gradient(mdp, policy, gamma_eval)
    occ1 = solve_occupancy(mdp, policy, 1.0)
    table = solve_log_density_gradient(mdp, policy, 1.0, lam, occ1)
    state_grad = state_log_density_gradient(table, policy)
    v = solve_values(mdp, policy, gamma_eval).v
    residual = (1.0 - gamma_eval) * ((occ1.d_state * v) @ state_grad)
    return GradientReport(practical.grad + residual, "residual-corrected", gamma_eval, residual)


# --------------------------------------------------------------------------- CSV export

def _pair_rows(num_actions: int, values: np.ndarray):
    for i, row in enumerate(values):
        s, a = divmod(i, num_actions)
        yield [s, a] + [format(float(x), ".17g") for x in np.atleast_1d(row)]


def write_occupancy_csv(occ: OccupancyTable, num_actions: int, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["s", "a", "value"])
        out.writerows(_pair_rows(num_actions, occ.d))


def write_grad_table_csv(table: GradTable, num_actions: int, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["s", "a"] + [f"value_{k}" for k in range(table.num_params)])
        out.writerows(_pair_rows(num_actions, table.w))


def read_pair_csv(path: str | Path) -> np.ndarray:
    """Inverse of the writers above: returns the value columns as an (N, k) array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["s", "a"]:
        raise ConfigurationError(f"{path}: expected a header starting with s,a")
    return np.array([[float(x) for x in r[2:]] for r in rows[1:]])
