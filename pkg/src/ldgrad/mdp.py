"""Tabular MDPs, the softmax policy class, gridworlds and samplers.

State-action pairs are flattened row-major: pair index ``s * num_actions + a``.
Every stochastic function takes an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, ModelError, StateError

ATOL_PROB = 1e-12

# up, down, left, right as (row, col) deltas
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


def make_rng(seed=None) -> np.random.Generator:
    return np.random.default_rng(seed)


def spawn_rngs(seed, count: int) -> list[np.random.Generator]:
    """Independent child generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    initial_dist: np.ndarray  # (S,)
    discount: float = 1.0
    name: str = ""

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        d0 = np.array(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if r.shape != (S, A):
            raise ConfigurationError(f"reward must have shape ({S}, {A}), got {r.shape}")
        if d0.shape != (S,):
            raise ConfigurationError(f"initial_dist must have shape ({S},), got {d0.shape}")
        if np.any(P < 0) or np.abs(P.sum(axis=2) - 1.0).max() > ATOL_PROB:
            raise ConfigurationError("every transition row must be a probability vector")
        if np.any(d0 < 0) or abs(d0.sum() - 1.0) > ATOL_PROB:
            raise ConfigurationError("initial_dist must be a probability vector")
        if not np.all(np.isfinite(r)):
            raise ConfigurationError("rewards must be finite")
        if not 0.0 <= float(self.discount) <= 1.0:
            raise ConfigurationError(f"discount must lie in [0, 1], got {self.discount}")
        for arr in (P, r, d0):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", d0)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.num_actions

    def pair(self, s: int, a: int) -> int:
        return s * self.num_actions + a

    def unpair(self, i: int) -> tuple[int, int]:
        return divmod(int(i), self.num_actions)

    def with_reward(self, reward) -> "TabularMdp":
        return TabularMdp(self.transition, reward, self.initial_dist, self.discount, self.name)

    def with_discount(self, discount: float) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward, self.initial_dist, discount, self.name)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, doc: dict, name: str = "") -> "TabularMdp":
        try:
            mdp = cls(doc["transition"], doc["reward"], doc["initial_dist"], doc.get("discount", 1.0), name)
        except KeyError as exc:
            raise ConfigurationError(f"MDP document is missing field {exc.args[0]!r}") from None
        for key, value in (("num_states", mdp.num_states), ("num_actions", mdp.num_actions)):
            if key in doc and int(doc[key]) != value:
                raise ConfigurationError(f"{key}={doc[key]} disagrees with array shapes ({value})")
        return mdp


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Tabular softmax policy: one logit per (s, a), so n = |S||A|."""

    theta: np.ndarray
    num_states: int
    num_actions: int
    parameterization: str = field(default="tabular-softmax")

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.size != self.num_states * self.num_actions:
            raise ConfigurationError(
                f"theta has {theta.size} entries, expected {self.num_states * self.num_actions}"
            )
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("theta must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def uniform(cls, mdp: TabularMdp) -> "SoftmaxPolicy":
        return cls(np.zeros(mdp.num_pairs), mdp.num_states, mdp.num_actions)

    @classmethod
    def for_mdp(cls, mdp: TabularMdp, theta) -> "SoftmaxPolicy":
        return cls(theta, mdp.num_states, mdp.num_actions)

    @property
    def num_params(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.num_states, self.num_actions, self.parameterization)

    def probs(self) -> np.ndarray:
        logits = self.theta.reshape(self.num_states, self.num_actions)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def score_matrix(self) -> np.ndarray:
        """Rows are grad log pi(a|s) for every flattened pair; shape (|S||A|, n)."""
        S, A = self.num_states, self.num_actions
        pi = self.probs()
        G = np.zeros((S * A, S * A))
        for s in range(S):
            block = np.eye(A) - pi[s][None, :]
            G[s * A:(s + 1) * A, s * A:(s + 1) * A] = block
        return G


def _check_shapes(policy: SoftmaxPolicy, mdp: TabularMdp):
    if (policy.num_states, policy.num_actions) != (mdp.num_states, mdp.num_actions):
        raise ConfigurationError(
            f"policy is for {policy.num_states}x{policy.num_actions}, "
            f"MDP is {mdp.num_states}x{mdp.num_actions}"
        )


def policy_probs(policy: SoftmaxPolicy, mdp: TabularMdp) -> np.ndarray:
    _check_shapes(policy, mdp)
    return policy.probs()


def score(policy: SoftmaxPolicy, s: int, a: int) -> np.ndarray:
    """grad_theta log pi(a|s) as a length-n vector."""
    if not (0 <= s < policy.num_states and 0 <= a < policy.num_actions):
        raise ConfigurationError(f"pair ({s}, {a}) out of range")
    A = policy.num_actions
    out = np.zeros(policy.num_params)
    out[s * A:(s + 1) * A] = -policy.probs()[s]
    out[s * A + a] += 1.0
    return out


def pair_transition_matrix(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """P_pi[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')."""
    N = mdp.num_pairs
    return (mdp.transition[:, :, :, None] * pi[None, None, :, :]).reshape(N, N)


def initial_pair_dist(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    return (mdp.initial_dist[:, None] * pi).reshape(-1)


# --------------------------------------------------------------------------- gridworld

def make_gridworld(side: int, discount: float = 1.0) -> TabularMdp:
    """side x side grid, start top-left, goal bottom-right.

    Reward 1 for any action taken in the goal cell; the goal sends every
    action back to the start so the chain stays recurrent.
    """
    if int(side) != side or side < 2:
        raise ConfigurationError(f"gridworld side must be an integer >= 2, got {side}")
    side = int(side)
    S, A = side * side, len(GRID_MOVES)
    goal = S - 1
    P = np.zeros((S, A, S))
    for s in range(S):
        if s == goal:
            P[s, :, 0] = 1.0
            continue
        row, col = divmod(s, side)
        for a, (dr, dc) in enumerate(GRID_MOVES):
            r2 = min(max(row + dr, 0), side - 1)
            c2 = min(max(col + dc, 0), side - 1)
            P[s, a, r2 * side + c2] = 1.0
    reward = np.zeros((S, A))
    reward[goal, :] = 1.0
    d0 = np.zeros(S)
    d0[0] = 1.0
    return TabularMdp(P, reward, d0, discount, name=f"grid-{side}")


def make_bandit(rewards=(1.0, 0.0), discount: float = 1.0) -> TabularMdp:
    """One state that every action returns to; d_gamma(s0, a) = pi(a) for every gamma."""
    rewards = np.asarray(rewards, dtype=float)
    A = rewards.size
    return TabularMdp(np.ones((1, A, 1)), rewards[None, :], np.ones(1), discount, name="bandit")


def random_mdp(num_states: int, num_actions: int, rng: np.random.Generator,
               concentration: float = 1.0) -> TabularMdp:
    """Dense Dirichlet transitions (hence ergodic under any softmax policy) and U(0,1) rewards."""
    P = rng.dirichlet(np.full(num_states, concentration), size=(num_states, num_actions))
    P = np.maximum(P, 1e-3)
    P /= P.sum(axis=2, keepdims=True)
    d0 = rng.dirichlet(np.ones(num_states))
    return TabularMdp(P, rng.random((num_states, num_actions)), d0, name="random")


def load_mdp(source: str | Path) -> TabularMdp:
    """Resolve ``grid-<side>`` and ``bandit`` names or read a JSON MDP document."""
    text = str(source)
    if text == "bandit":
        return make_bandit()
    if text.startswith("grid-"):
        try:
            side = int(text.split("-", 1)[1])
        except ValueError:
            raise ConfigurationError(f"bad gridworld name {text!r}") from None
        return make_gridworld(side)
    path = Path(text)
    if path.suffix != ".json" and not path.exists():
        raise ConfigurationError(f"unknown environment {text!r} (expected grid-<side>, bandit or a JSON file)")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return TabularMdp.from_dict(doc, name=path.stem)


def save_mdp(mdp: TabularMdp, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp.to_dict(), fh)


def is_irreducible(mdp: TabularMdp, policy: SoftmaxPolicy) -> bool:
    """Strong connectivity of the state graph induced by the policy."""
    pi = policy_probs(policy, mdp)
    adj = np.einsum("sat,sa->st", mdp.transition, pi) > 0
    S = mdp.num_states

    def reach(graph):
        seen = np.zeros(S, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(graph[u] & ~seen):
                seen[v] = True
                stack.append(v)
        return seen.all()

    return reach(adj) and reach(adj.T)


# --------------------------------------------------------------------------- sampling

class TransitionSample(NamedTuple):
    s: int
    a: int
    s_next: int
    a_next: int
    restart: bool = False


@dataclass
class TransitionBatch:
    """Column-oriented batch of (s, a, s', a') samples."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    a_next: np.ndarray
    restart: np.ndarray

    def __len__(self):
        return self.s.size

    def __getitem__(self, k) -> TransitionSample:
        return TransitionSample(int(self.s[k]), int(self.a[k]), int(self.s_next[k]),
                                int(self.a_next[k]), bool(self.restart[k]))

    def pairs(self, num_actions: int) -> tuple[np.ndarray, np.ndarray]:
        return self.s * num_actions + self.a, self.s_next * num_actions + self.a_next


def _row_cdf(rows: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(rows, axis=1)
    cdf /= cdf[:, -1:]
    cdf[:, -1] = 1.0
    return cdf


def sample_rows(cdf: np.ndarray, which: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one column index per entry of ``which`` from the categorical rows of ``cdf``."""
    K = cdf.shape[1]
    u = rng.random(which.size)
    out = np.empty(which.size, dtype=np.int64)
    for row in np.unique(which):
        mask = which == row
        out[mask] = np.searchsorted(cdf[row], u[mask], side="right")
    return np.minimum(out, K - 1)


def sample_categorical(p: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), p.size - 1)


def sample_trajectory(mdp: TabularMdp, policy: SoftmaxPolicy, horizon: int,
                      rng: np.random.Generator) -> list[tuple[int, int, float]]:
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    pi = policy_probs(policy, mdp)
    s = int(sample_categorical(mdp.initial_dist, 1, rng)[0])
    out = []
    for _ in range(horizon):
        a = int(sample_categorical(pi[s], 1, rng)[0])
        out.append((s, a, float(mdp.reward[s, a])))
        s = int(sample_categorical(mdp.transition[s, a], 1, rng)[0])
    return out


def rollout_batch(mdp: TabularMdp, policy: SoftmaxPolicy, episodes: int, horizon: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised on-policy rollouts; returns (states, actions), each (episodes, horizon)."""
    pi = policy_probs(policy, mdp)
    pi_cdf = _row_cdf(pi)
    p_cdf = _row_cdf(mdp.transition.reshape(mdp.num_pairs, mdp.num_states))
    states = np.empty((episodes, horizon), dtype=np.int64)
    actions = np.empty((episodes, horizon), dtype=np.int64)
    s = sample_categorical(mdp.initial_dist, episodes, rng)
    for t in range(horizon):
        a = sample_rows(pi_cdf, s, rng)
        states[:, t], actions[:, t] = s, a
        s = sample_rows(p_cdf, s * mdp.num_actions + a, rng)
    return states, actions


def _successors(mdp, pi_cdf, p_cdf, s, a, rng):
    s2 = sample_rows(p_cdf, s * mdp.num_actions + a, rng)
    a2 = sample_rows(pi_cdf, s2, rng)
    return s2, a2


def sample_occupancy_batch(mdp: TabularMdp, policy: SoftmaxPolicy, size: int,
                           rng: np.random.Generator, occupancy=None, mode: str = "exact",
                           gamma: float | None = None, burn_in: int = 1000) -> TransitionBatch:
    """Draw ``size`` transitions with (s, a) ~ d_gamma, s' ~ P(.|s, a), a' ~ pi(.|s').

    ``mode="exact"`` draws (s, a) i.i.d. from a solved occupancy table.
    ``mode="trajectory"`` runs a single chain that restarts from d_0 with
    probability 1 - gamma after each transition (plain chain after
    ``burn_in`` steps when gamma = 1).  ``restart`` marks transitions after
    which the chain was reset, i.e. the next sample's (s, a) came from d_0.
    """
    pi = policy_probs(policy, mdp)
    pi_cdf = _row_cdf(pi)
    p_cdf = _row_cdf(mdp.transition.reshape(mdp.num_pairs, mdp.num_states))
    A = mdp.num_actions
    if mode == "exact":
        if occupancy is None:
            raise StateError("exact-mode sampling needs a solved occupancy table")
        idx = sample_categorical(occupancy.d, size, rng)
        s, a = idx // A, idx % A
        s2, a2 = _successors(mdp, pi_cdf, p_cdf, s, a, rng)
        return TransitionBatch(s, a, s2, a2, np.zeros(size, dtype=bool))
    if mode != "trajectory":
        raise ConfigurationError(f"unknown sampling mode {mode!r}")
    g = mdp.discount if gamma is None else float(gamma)
    if not 0.0 <= g <= 1.0:
        raise ConfigurationError("gamma must lie in [0, 1]")
    out = np.empty((4, size), dtype=np.int64)
    restart = np.zeros(size, dtype=bool)
    s = int(sample_categorical(mdp.initial_dist, 1, rng)[0])
    a = int(sample_categorical(pi[s], 1, rng)[0])
    warm = burn_in if g == 1.0 else 0
    u = rng.random(size + warm)
    d0_draws = sample_categorical(mdp.initial_dist, size + warm, rng)
    for k in range(size + warm):
        s2 = int(np.searchsorted(p_cdf[s * A + a], rng.random(), side="right"))
        a2 = int(np.searchsorted(pi_cdf[s2], rng.random(), side="right"))
        reset = u[k] >= g
        if k >= warm:
            out[:, k - warm] = (s, a, s2, a2)
            restart[k - warm] = reset
        if reset:
            s = int(d0_draws[k])
            a = int(np.searchsorted(pi_cdf[s], rng.random(), side="right"))
        else:
            s, a = s2, a2
    return TransitionBatch(out[0], out[1], out[2], out[3], restart)


def sample_occupancy_pair(mdp: TabularMdp, policy: SoftmaxPolicy, rng: np.random.Generator,
                          occupancy=None, mode: str = "exact", gamma: float | None = None,
                          burn_in: int = 1000) -> TransitionSample:
    return sample_occupancy_batch(mdp, policy, 1, rng, occupancy, mode, gamma, burn_in)[0]


@dataclass
class BackwardKernel:
    """Precomputed tables for gated backward sampling under one occupancy."""

    bootstrap_prob: np.ndarray  # (N,)  M(s', a')
    pred_cdf: np.ndarray  # (S, N)  normalised predecessor law given s'
    pred_mass: np.ndarray  # (S,)   sum_{s,a} d(s,a) P(s'|s,a)


def backward_kernel(mdp: TabularMdp, policy: SoftmaxPolicy, occupancy) -> BackwardKernel:
    pi = policy_probs(policy, mdp)
    d = occupancy.d
    gamma = occupancy.gamma
    mu0 = initial_pair_dist(mdp, pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        M = 1.0 - (1.0 - gamma) * mu0 / d
    M = np.where(d > 0, np.clip(M, 0.0, 1.0), np.nan)
    flow = d[:, None] * mdp.transition.reshape(mdp.num_pairs, mdp.num_states)  # (N, S)
    mass = flow.sum(axis=0)
    safe = np.where(mass > 0, mass, 1.0)
    cdf = np.cumsum(flow.T / safe[:, None], axis=1)
    cdf[:, -1] = 1.0
    return BackwardKernel(M, cdf, mass)


def sample_backward_batch(mdp: TabularMdp, policy: SoftmaxPolicy, occupancy, size: int,
                          rng: np.random.Generator, kernel: BackwardKernel | None = None):
    """(s', a') ~ d_gamma, then a Bernoulli(M) gate and a predecessor (s, a).

    Returns ``(batch, active)``.  Where ``active`` is False the predecessor
    columns hold -1.
    """
    if occupancy is None:
        raise StateError("backward sampling needs a solved occupancy table")
    kernel = kernel or backward_kernel(mdp, policy, occupancy)
    A = mdp.num_actions
    j = sample_categorical(occupancy.d, size, rng)
    if np.any(occupancy.d[j] <= 0):
        raise ModelError("drawn pair has zero occupancy; the ergodicity assumption is violated")
    active = rng.random(size) < kernel.bootstrap_prob[j]
    s2, a2 = j // A, j % A
    if active.any() and np.any(kernel.pred_mass[s2[active]] <= 0):
        raise ModelError("no predecessor flow into a bootstrapped state")
    i = np.full(size, -1, dtype=np.int64)
    i[active] = sample_rows(kernel.pred_cdf, s2[active], rng)
    s = np.where(active, i // A, -1)
    a = np.where(active, i % A, -1)
    return TransitionBatch(s, a, s2, a2, ~active), active


def sample_backward_pair(mdp: TabularMdp, policy: SoftmaxPolicy, occupancy,
                         rng: np.random.Generator) -> tuple[TransitionSample, bool]:
    batch, active = sample_backward_batch(mdp, policy, occupancy, 1, rng)
    return batch[0], bool(active[0])
