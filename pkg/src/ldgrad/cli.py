"""Command-line entry point: ``ldgrad {solve,td,minmax,train,compare}``.

Exit codes: 0 success, 2 configuration error, 3 model/assumption error,
4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import exact, harness, minmax, td
from .errors import ConfigurationError, LdgError, ModelError
from .features import FeatureMap
from .mdp import SoftmaxPolicy, load_mdp
from .schedules import StepSchedule

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_IO = 0, 2, 3, 4


def _policy(mdp, args):
    if args.random_policy:
        theta = np.random.default_rng(args.seed).normal(scale=args.random_policy, size=mdp.num_pairs)
        return SoftmaxPolicy.for_mdp(mdp, theta)
    return SoftmaxPolicy.uniform(mdp)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _write_matrix(path: Path, M: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows([format(float(x), ".17g") for x in row] for row in np.atleast_2d(M))


def cmd_solve(args) -> int:
    mdp = load_mdp(args.env)
    policy = _policy(mdp, args)
    occ = exact.solve_occupancy(mdp, policy, args.gamma)
    out = _out_dir(args)
    exact.write_occupancy_csv(occ, mdp.num_actions, out / "occupancy.csv")
    summary = {"env": args.env, "gamma": args.gamma, "J": exact.policy_performance(mdp, policy, args.gamma, occ),
               "ldg_gradient": exact.exact_policy_gradient_ldg(mdp, policy, args.gamma, args.lam).grad.tolist()}
    if np.all(occ.d > 0):
        table = exact.solve_log_density_gradient(mdp, policy, args.gamma, args.lam, occ)
        exact.write_grad_table_csv(table, mdp.num_actions, out / "grad_log_density.csv")
    if args.gamma < 1.0:
        summary["classical_gradient"] = exact.exact_policy_gradient_classical(mdp, policy, args.gamma).grad.tolist()
    _write_json(out / "summary.json", summary)
    print(f"J = {summary['J']:.10g}; tables written to {out}")
    return EXIT_OK


def cmd_td(args) -> int:
    mdp = load_mdp(args.env)
    policy = _policy(mdp, args)
    occ = exact.solve_occupancy(mdp, policy, args.gamma)
    schedule = StepSchedule.robbins_monro(args.step_a, args.step_b)
    table, curve = td.run_td0(mdp, policy, args.gamma, args.iterations, schedule,
                              np.random.default_rng(args.seed), occ,
                              record_every=max(1, args.iterations // args.log_points))
    out = _out_dir(args)
    exact.write_grad_table_csv(table, mdp.num_actions, out / "td_table.csv")
    with open(out / "td_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "weighted_l1_error", "wall_clock_ns"])
        writer.writerows(curve)
    print(f"final d-weighted L1 error {curve[-1][1]:.4g} after {args.iterations} steps")
    return EXIT_OK


def cmd_minmax(args) -> int:
    mdp = load_mdp(args.env)
    policy = _policy(mdp, args)
    occ = exact.solve_occupancy(mdp, policy, args.gamma)
    fm = FeatureMap.one_hot(mdp.num_pairs)
    system = minmax.assemble_saddle_system(mdp, policy, occ, fm, args.lam)
    star = minmax.solve_saddle_fixed_point(system)
    x_star = system.stack(*star)
    if args.radius:
        sets = minmax.ProjectionSets(args.radius, args.radius, args.radius)
    else:
        sets = minmax.ProjectionSets.around(*star)
    bounds = minmax.saddle_moment_bounds(mdp, policy, occ, fm, args.lam)
    m_star = minmax.step_scale(bounds, sets)
    # c defaults to M* * eps0, i.e. eps_t = eps0 / sqrt(t)
    c = args.c if args.c is not None else args.eps0 * m_star
    schedule = minmax.default_schedule(bounds, sets, c)

    def log_fn(alpha, beta, tau):
        return {"distance_to_fixed_point": float(np.linalg.norm(system.stack(alpha, beta, tau) - x_star)),
                "optimality_gap": minmax.optimality_gap(system, sets, alpha, beta, tau)}

    result = minmax.run_projected_ldg(mdp, policy, args.gamma, fm, args.lam, sets, args.m, schedule,
                                      np.random.default_rng(args.seed), occupancy=occ,
                                      log_every=max(1, args.m // args.log_points), log_fn=log_fn)
    out = _out_dir(args)
    with open(out / "run_log.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["iteration", "distance_to_fixed_point", "optimality_gap", "wall_clock_ns"])
        writer.writeheader()
        writer.writerows(result.log)
    for name in ("G", "h", "A", "B", "C"):
        _write_matrix(out / f"saddle_{name}.csv", getattr(system, name))
    exact.write_grad_table_csv(exact.GradTable(result.table(fm), args.gamma), mdp.num_actions,
                               out / "minmax_table.csv")
    _write_json(out / "summary.json", {"M_star": m_star, "c": c, "radii": [sets.radius_x, sets.radius_y, sets.radius_z],
                                       "final": result.log[-1] if result.log else {}})
    print(f"M* = {m_star:.4g}; final gap {result.log[-1]['optimality_gap']:.4g}" if result.log else "done")
    return EXIT_OK


def _experiment_config(args):
    if args.config:
        config, estimators = harness.load_config(args.config)
    else:
        config, estimators = harness.ExperimentConfig(), None
    overrides = {}
    if args.env is not None:
        overrides["env"] = args.env
    if args.gamma is not None:
        overrides["gamma_eval"] = args.gamma
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if getattr(args, "estimator", None):
        overrides["estimator"] = args.estimator
    try:
        config = replace(config, **overrides)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    return config, estimators


def cmd_train(args) -> int:
    config, _ = _experiment_config(args)
    records = harness.compare(config, [config.estimator])
    csv_path, _ = harness.emit_report(records, args.out)
    print(f"{len(records)} records written to {csv_path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    config, estimators = _experiment_config(args)
    if args.estimators:
        estimators = args.estimators.split(",")
    estimators = estimators or list(harness.ESTIMATORS)
    for name in estimators:
        if name not in harness.ESTIMATORS:
            raise ConfigurationError(f"unknown estimator {name!r}")
    records = harness.compare(config, estimators)
    harness.emit_report(records, args.out)
    final = harness.final_performance(records)
    _write_json(Path(args.out) / "final.json", {k: {"mean_J1": m, "var_J1": v} for k, (m, v) in final.items()})
    for name, (mean, var) in final.items():
        print(f"{name:16s} final J1 {mean:.5f} (var {var:.3g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldgrad", description="Log density gradient toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    def common(p, gamma_default):
        p.add_argument("--env", default=None if gamma_default is None else "grid-3",
                       help="grid-<side>, bandit, or a JSON MDP file")
        p.add_argument("--gamma", type=float, default=gamma_default)
        p.add_argument("--seed", type=int, default=None if gamma_default is None else 0)
        p.add_argument("--config", default=None, help="JSON experiment config")
        p.add_argument("--out", default="out")

    def policy_opts(p):
        p.add_argument("--random-policy", type=float, default=0.0, metavar="SCALE",
                       help="draw theta ~ N(0, SCALE^2) from --seed instead of the uniform policy")
        p.add_argument("--lam", type=float, default=1.0)

    p = sub.add_parser("solve", help="exact occupancy, grad log d and policy gradients")
    common(p, 0.9)
    policy_opts(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("td", help="tabular TD(0) estimate of grad log d")
    common(p, 0.9)
    policy_opts(p)
    p.add_argument("--iterations", type=int, default=100_000)
    p.add_argument("--step-a", type=float, default=td.TD_DEFAULT_SCHEDULE.a)
    p.add_argument("--step-b", type=float, default=td.TD_DEFAULT_SCHEDULE.b)
    p.add_argument("--log-points", type=int, default=20)
    p.set_defaults(func=cmd_td)

    p = sub.add_parser("minmax", help="projected min-max estimate with one-hot features")
    common(p, 0.9)
    policy_opts(p)
    p.add_argument("--m", type=int, default=100_000)
    p.add_argument("--radius", type=float, default=0.0, help="common ball radius (default: 10x fixed point)")
    p.add_argument("--c", type=float, default=None, help="schedule constant in c / (M* sqrt t)")
    p.add_argument("--eps0", type=float, default=1.0, help="used when --c is absent: c = eps0 * M*")
    p.add_argument("--log-points", type=int, default=20)
    p.set_defaults(func=cmd_minmax)

    p = sub.add_parser("train", help="policy optimisation with one estimator")
    common(p, None)
    p.add_argument("--estimator", choices=harness.ESTIMATORS, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="all estimators across seeds, with curves.csv/svg")
    common(p, None)
    p.add_argument("--estimators", default=None, help="comma-separated subset")
    p.set_defaults(func=cmd_compare)
    return parser


def _flag_defaults(parser, args, argv):
    """Re-parse with a flat JSON object of flag values as defaults; explicit flags still win."""
    try:
        doc = json.loads(Path(args.config).read_text())
    except ValueError as exc:
        raise ConfigurationError(f"{args.config}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{args.config}: top level must be an object")
    sub = parser.subcommands[args.command]
    unknown = [k for k in doc if not hasattr(args, k) or k in ("command", "func", "config")]
    if unknown:
        raise ConfigurationError(f"unknown config keys: {unknown}")
    sub.set_defaults(**doc)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("solve", "td", "minmax") and args.config:
            args = _flag_defaults(parser, args, argv)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except LdgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
