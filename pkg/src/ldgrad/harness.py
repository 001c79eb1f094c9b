"""Policy-optimisation experiments comparing gradient estimators.

Four estimators share one loop (theta <- theta + lr * g_hat) and every
iteration is scored by the exact average reward J_1 of the current policy:

    reinforce        Monte-Carlo returns with a gamma_eval discount
    theoretical-pg   exact sum d_1 Q_{gamma_eval} grad log pi (optionally + residual)
    theoretical-ldg  exact grad J_1 through the log density gradient
    minmax-ldg       projected min-max estimate of grad log d_1 from m samples
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, LdgError
from .exact import (exact_policy_gradient_ldg, policy_performance, practical_policy_gradient,
                    residual_decomposition, solve_occupancy)
from .features import FeatureMap
from .mdp import SoftmaxPolicy, TabularMdp, load_mdp, rollout_batch, sample_occupancy_batch
from .minmax import ProjectionSets, SaddleState, estimate_gradient_from_w, run_projected_ldg
from .schedules import StepSchedule

ESTIMATORS = ("reinforce", "theoretical-pg", "theoretical-ldg", "minmax-ldg")
CSV_HEADER = ["estimator", "seed", "iteration", "J1", "gradient_error", "samples_consumed",
              "wall_clock_ns"]


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "grid-3"
    estimator: str = "minmax-ldg"
    gamma_eval: float = 0.9
    lr: float = 0.1
    iterations: int = 200
    budget: int = 10_000
    seeds: tuple = (0, 1, 2, 3, 4)
    # reinforce
    horizon: int = 50
    # theoretical-pg
    residual_correction: bool = False
    # minmax-ldg
    lam: float = 1.0
    radius: float = 100.0
    saddle_schedule: str = "inverse-sqrt"  # eps_t = eps0 / sqrt(t), i.e. c = eps0 * M*; or constant
    eps0: float = 1.0
    sampling: str = "exact"  # exact | trajectory
    warm_start: bool = True
    track_gradient_error: bool = True

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        if not 0.0 <= self.gamma_eval < 1.0:
            raise ConfigurationError("gamma_eval must lie in [0, 1)")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ConfigurationError("lr must be finite and non-negative")
        for name in ("iterations", "budget", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.estimator == "reinforce" and self.budget < self.horizon:
            raise ConfigurationError("budget must cover at least one episode of length horizon")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if not self.lam > 0:
            raise ConfigurationError("minmax-ldg targets gamma = 1 and needs lam > 0")
        if not (self.radius > 0 and self.eps0 > 0):
            raise ConfigurationError("radius and eps0 must be positive")
        if self.saddle_schedule not in ("inverse-sqrt", "constant"):
            raise ConfigurationError(f"unknown saddle schedule {self.saddle_schedule!r}")
        if self.sampling not in ("exact", "trajectory"):
            raise ConfigurationError(f"unknown sampling mode {self.sampling!r}")

    @property
    def episodes(self) -> int:
        return self.budget // self.horizon

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["seeds"] = list(self.seeds)
        return doc


def load_config(path: str | Path) -> tuple[ExperimentConfig, list[str]]:
    """Read a JSON config; an optional ``estimators`` list is returned separately."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError:
        raise
    except ValueError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    estimators = doc.pop("estimators", None)
    if estimators is not None and (not isinstance(estimators, list) or not estimators):
        raise ConfigurationError("estimators must be a non-empty list")
    config = ExperimentConfig.from_dict(doc)
    return config, list(estimators or [config.estimator])


@dataclass(frozen=True)
class TrainingRecord:
    estimator: str
    seed: int
    iteration: int
    J1: float
    gradient_error: float | None
    samples_consumed: int
    wall_clock_ns: int

    def row(self) -> list:
        err = "" if self.gradient_error is None else repr(self.gradient_error)
        return [self.estimator, self.seed, self.iteration, repr(self.J1), err,
                self.samples_consumed, self.wall_clock_ns]

    @classmethod
    def from_row(cls, row: dict) -> "TrainingRecord":
        err = row["gradient_error"]
        return cls(row["estimator"], int(row["seed"]), int(row["iteration"]), float(row["J1"]),
                   None if err == "" else float(err), int(row["samples_consumed"]),
                   int(row["wall_clock_ns"]))


# --------------------------------------------------------------------------- estimators

def gradient_reinforce(mdp: TabularMdp, policy: SoftmaxPolicy, gamma_eval: float, episodes: int,
                       horizon: int, rng: np.random.Generator) -> np.ndarray:
    """sum_t grad log pi(a_t|s_t) G_t averaged over episodes, no baseline.

    G_t = sum_{k >= t} gamma_eval^(k - t) r_k, truncated at the horizon.
    """
    if episodes < 1 or horizon < 1:
        raise ConfigurationError("episodes and horizon must be >= 1")
    states, actions = rollout_batch(mdp, policy, episodes, horizon, rng)
    rewards = mdp.reward[states, actions]
    returns = np.empty_like(rewards)
    acc = np.zeros(episodes)
    for t in range(horizon - 1, -1, -1):
        acc = rewards[:, t] + gamma_eval * acc
        returns[:, t] = acc
    pairs = (states * mdp.num_actions + actions).ravel()
    weight = np.bincount(pairs, weights=returns.ravel(), minlength=mdp.num_pairs)
    return weight @ policy.score_matrix() / episodes


class _MinmaxEstimator:
    """Carries the saddle iterate between policy updates when warm-starting."""

    def __init__(self, mdp: TabularMdp, config: ExperimentConfig):
        self.mdp = mdp
        self.config = config
        self.features = FeatureMap.one_hot(mdp.num_pairs)
        r = config.radius
        self.sets = ProjectionSets(r, r, r)
        if config.saddle_schedule == "constant":
            self.schedule = StepSchedule.constant(config.eps0)
        else:
            self.schedule = StepSchedule.inverse_sqrt(config.eps0, 1.0)
        self.init = None

    def __call__(self, policy: SoftmaxPolicy, rng) -> np.ndarray:
        cfg, mdp = self.config, self.mdp
        occ = solve_occupancy(mdp, policy, 1.0)
        batch = sample_occupancy_batch(mdp, policy, cfg.budget, rng, occ, mode=cfg.sampling, gamma=1.0)
        out = run_projected_ldg(mdp, policy, 1.0, self.features, cfg.lam, self.sets, cfg.budget,
                                self.schedule, rng, occupancy=occ, init=self.init, samples=batch)
        if cfg.warm_start:
            self.init = SaddleState(out.alpha, out.beta, out.tau, cfg.lam)
        rewards = mdp.reward[batch.s, batch.a]
        return estimate_gradient_from_w(batch.s, batch.a, rewards, out.table(self.features),
                                        mdp.num_actions)


def _estimator(mdp: TabularMdp, config: ExperimentConfig):
    """Returns (estimate(policy, rng) -> grad, samples per call)."""
    if config.estimator == "reinforce":
        def reinforce(policy, rng):
            g = gradient_reinforce(mdp, policy, config.gamma_eval, config.episodes, config.horizon, rng)
            return g / config.horizon
        return reinforce, config.episodes * config.horizon
    if config.estimator == "theoretical-pg":
        if config.residual_correction:
            return lambda policy, rng: residual_decomposition(mdp, policy, config.gamma_eval, config.lam).grad, 0
        return lambda policy, rng: practical_policy_gradient(mdp, policy, config.gamma_eval).grad, 0
    if config.estimator == "theoretical-ldg":
        return lambda policy, rng: exact_policy_gradient_ldg(mdp, policy, 1.0, config.lam).grad, 0
    return _MinmaxEstimator(mdp, config), config.budget


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float | None:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return None
    return float(1.0 - (u @ v) / (nu * nv))


def train(config: ExperimentConfig, seed: int | None = None, mdp: TabularMdp | None = None) -> list[TrainingRecord]:
    """One run of ``config.iterations`` policy updates for a single seed.

    Record 0 is the initial policy; record k follows the k-th update.
    """
    seed = config.seeds[0] if seed is None else int(seed)
    mdp = mdp or load_mdp(config.env)
    rng = np.random.default_rng(seed)
    policy = SoftmaxPolicy.uniform(mdp)
    estimate, per_call = _estimator(mdp, config)
    records = [TrainingRecord(config.estimator, seed, 0, policy_performance(mdp, policy, 1.0), None, 0, 0)]
    consumed = 0
    start = time.perf_counter_ns()
    for k in range(1, config.iterations + 1):
        try:
            grad = estimate(policy, rng)
        except LdgError as exc:
            raise type(exc)(f"{config.estimator}, seed {seed}, iteration {k}: {exc}") from exc
        err = None
        if config.track_gradient_error:
            err = cosine_distance(grad, exact_policy_gradient_ldg(mdp, policy, 1.0, config.lam).grad)
        consumed += per_call
        policy = policy.with_theta(policy.theta + config.lr * grad)
        records.append(TrainingRecord(config.estimator, seed, k, policy_performance(mdp, policy, 1.0),
                                      err, consumed, time.perf_counter_ns() - start))
    return records


def compare(config: ExperimentConfig, estimators=None) -> list[TrainingRecord]:
    """Run every (estimator, seed) pair; records sorted by (estimator, seed, iteration)."""
    mdp = load_mdp(config.env)
    records = []
    for name in estimators or [config.estimator]:
        cfg = replace(config, estimator=name)
        for seed in cfg.seeds:
            records.extend(train(cfg, seed, mdp))
    order = {name: i for i, name in enumerate(estimators or [config.estimator])}
    records.sort(key=lambda r: (order[r.estimator], r.seed, r.iteration))
    return records


def final_performance(records: list[TrainingRecord]) -> dict:
    """estimator -> (mean, variance) over seeds of the last recorded J1."""
    last = {}
    for r in records:
        key = (r.estimator, r.seed)
        if key not in last or r.iteration > last[key].iteration:
            last[key] = r
    out = {}
    for name in dict.fromkeys(r.estimator for r in records):
        vals = np.array([r.J1 for (e, _), r in last.items() if e == name])
        out[name] = (float(vals.mean()), float(vals.var()))
    return out


# --------------------------------------------------------------------------- report

def write_curves_csv(records: list[TrainingRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CSV_HEADER)
        out.writerows(r.row() for r in records)


def read_curves_csv(path: str | Path) -> list[TrainingRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigurationError(f"{path}: unexpected header {reader.fieldnames}")
        return [TrainingRecord.from_row(row) for row in reader]


PALETTE = ("#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b")


def _band_stats(records):
    curves = {}
    for r in records:
        curves.setdefault(r.estimator, {}).setdefault(r.iteration, []).append(r.J1)
    out = {}
    for name, by_iter in curves.items():
        its = np.array(sorted(by_iter))
        vals = [np.array(by_iter[i]) for i in its]
        out[name] = (its, np.array([v.mean() for v in vals]), np.array([v.std() for v in vals]))
    return out


def render_svg(records: list[TrainingRecord], title: str = "average reward J1") -> str:
    """Mean J1 per estimator with a shaded +/- one standard deviation band."""
    stats = _band_stats(records)
    width, height, pad = 640, 400, 50
    x_max = max(its.max() for its, _, _ in stats.values()) or 1
    lo = min((m - s).min() for _, m, s in stats.values())
    hi = max((m + s).max() for _, m, s in stats.values())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5

    def px(x, y):
        return (pad + (width - 2 * pad) * x / x_max,
                height - pad - (height - 2 * pad) * (y - lo) / (hi - lo))

    def path(xs, ys):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in (px(x, y) for x, y in zip(xs, ys)))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">iteration (0 to {x_max})</text>',
             f'<text x="{pad - 5}" y="{pad}" text-anchor="end" font-size="10">{hi:.3g}</text>',
             f'<text x="{pad - 5}" y="{height - pad}" text-anchor="end" font-size="10">{lo:.3g}</text>']
    for k, (name, (its, mean, std)) in enumerate(stats.items()):
        colour = PALETTE[k % len(PALETTE)]
        band = path(its, mean + std) + " " + path(its[::-1], (mean - std)[::-1])
        parts.append(f'<polygon class="band" points="{band}" fill="{colour}" fill-opacity="0.2" stroke="none"/>')
        parts.append(f'<polyline class="mean" points="{path(its, mean)}" fill="none" stroke="{colour}" '
                     f'stroke-width="1.5"><title>{name}</title></polyline>')
        parts.append(f'<text x="{width - pad + 5 - 130}" y="{pad + 15 * k}" font-size="11" '
                     f'fill="{colour}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(records: list[TrainingRecord], out_dir: str | Path) -> tuple[Path, Path]:
    if not records:
        raise ConfigurationError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out / "curves.csv", out / "curves.svg"
    write_curves_csv(records, csv_path)
    svg_path.write_text(render_svg(records))
    return csv_path, svg_path
