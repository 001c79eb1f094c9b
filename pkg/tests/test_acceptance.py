"""The nine acceptance criteria at their stated tolerances and runtime limits.

Each test prints one ``PASS``/``FAIL`` line (visible with or without ``-s``)
and then asserts, so the pytest verdict and the printed line always agree.
"""
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import random_policy, two_state_mdp
from ldgrad import harness
from ldgrad.exact import (exact_policy_gradient_classical, exact_policy_gradient_ldg, policy_performance,
                          residual_decomposition, solve_log_density_gradient,
                          solve_occupancy)
from ldgrad.features import FeatureMap
from ldgrad.mdp import SoftmaxPolicy, make_bandit, make_gridworld, random_mdp
from ldgrad.minmax import (ProjectionSets, assemble_saddle_system, default_schedule, dual_maximiser,
                           loss_L, optimality_gap, reweighted_objective, run_projected_ldg,
                           saddle_moment_bounds, solve_saddle_fixed_point, step_scale)
from ldgrad.td import contraction_diagnostic, power_iteration, run_td0, weighted_l1

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return emit


def central_difference(fn, theta, h=1e-5):
    out = np.empty(theta.size)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        out[k] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return out


def test_criterion_1_policy_gradient_equivalence(report):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        mdp = random_mdp(int(rng.integers(1, 7)), int(rng.integers(1, 4)), rng)
        pol = random_policy(mdp, rng)
        for gamma in (0.0, 0.5, 0.9):
            diff = exact_policy_gradient_classical(mdp, pol, gamma).grad - exact_policy_gradient_ldg(mdp, pol, gamma).grad
            worst = max(worst, np.abs(diff).max())
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-8 and elapsed < 10, f"max |classical - LDG| = {worst:.2e}, {elapsed:.1f} s")


def test_criterion_2_finite_differences(report):
    start = time.perf_counter()
    grid = make_gridworld(3)
    pol = random_policy(grid, np.random.default_rng(2), scale=0.5)
    errors = {}
    for gamma in (0.0, 0.5, 0.9, 1.0):
        exact = exact_policy_gradient_ldg(grid, pol, gamma).grad
        fd = central_difference(lambda t: policy_performance(grid, pol.with_theta(t), gamma), pol.theta)
        num, den = np.linalg.norm(exact - fd), np.linalg.norm(fd)
        # J_0 only sees the start state, where every action has the same reward: both sides vanish
        errors[gamma] = 0.0 if den < 1e-12 and num < 1e-12 else num / den
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"gamma={g}: {e:.1e}" for g, e in errors.items())
    report(2, max(errors.values()) < 1e-5 and elapsed < 30, f"relative error {detail}; {elapsed:.1f} s")


def test_criterion_3_residual_identity(report):
    rng = np.random.default_rng(3)
    cases = [(make_gridworld(3), SoftmaxPolicy.uniform(make_gridworld(3)))]
    cases.append((make_gridworld(3), random_policy(cases[0][0], rng, scale=1.0)))
    mdp = random_mdp(5, 3, rng)
    cases.append((mdp, random_policy(mdp, rng)))
    worst, ratios = 0.0, []
    for mdp, pol in cases:
        target = exact_policy_gradient_ldg(mdp, pol, 1.0).grad
        for gamma_eval in (0.5, 0.9, 0.99):
            corrected = residual_decomposition(mdp, pol, gamma_eval)
            worst = max(worst, np.abs(corrected.grad - target).max())
            ratios.append(np.linalg.norm(corrected.residual_term) / np.linalg.norm(target))
    significant = max(ratios) > 0.01
    report(3, worst < 1e-8, f"max |PG + residual - grad J1| = {worst:.2e}; "
           f"max |residual| / |grad J1| = {max(ratios):.3f} ({'> 0.01' if significant else 'not > 0.01'})")


def test_criterion_4_contraction(report):
    rng = np.random.default_rng(4)
    gamma = 0.9
    budget = math.ceil(math.log(1e-8) / math.log(gamma)) + 5
    worst_ratio, worst_final = 0.0, 0.0
    for _ in range(100):
        mdp = random_mdp(int(rng.integers(1, 7)), int(rng.integers(1, 4)), rng)
        pol = random_policy(mdp, rng)
        occ = solve_occupancy(mdp, pol, gamma)
        u, v = rng.normal(scale=rng.uniform(0.1, 10), size=(2, mdp.num_pairs, pol.num_params))
        check = contraction_diagnostic(mdp, pol, occ, u, v)
        worst_ratio = max(worst_ratio, check.lhs - check.rhs)
        target = solve_log_density_gradient(mdp, pol, gamma, occ=occ).w
        _, errors = power_iteration(mdp, pol, occ, budget, target=target)
        if errors[0] > 0:
            worst_final = max(worst_final, errors[-1] / errors[0])
    report(4, worst_ratio <= 1e-10 and worst_final <= 1e-8,
           f"max (lhs - gamma rhs) = {worst_ratio:.1e}; relative error after {budget} "
           f"applications <= {worst_final:.1e}")


def test_criterion_5_td_convergence(report):
    start = time.perf_counter()
    mdp2 = two_state_mdp()
    cases = {"bandit": (make_bandit(), SoftmaxPolicy.uniform(make_bandit())),
             "2-state uniform": (mdp2, SoftmaxPolicy.uniform(mdp2)),
             "2-state random": (mdp2, random_policy(mdp2, np.random.default_rng(12345)))}
    errors = {}
    for name, (mdp, pol) in cases.items():
        for gamma in (0.9, 1.0):
            occ = solve_occupancy(mdp, pol, gamma)
            exact = solve_log_density_gradient(mdp, pol, gamma, occ=occ).w
            errs = [weighted_l1(occ, run_td0(mdp, pol, gamma, 1_000_000, rng=np.random.default_rng(s),
                                             occupancy=occ).w, exact) for s in range(5)]
            errors[f"{name}, gamma={gamma}"] = float(np.mean(errs))
    elapsed = time.perf_counter() - start
    detail = "; ".join(f"{k}: {v:.4f}" for k, v in errors.items())
    report(5, max(errors.values()) < 5e-2 and elapsed < 120, f"{detail}; {elapsed:.1f} s")


def test_criterion_6_fixed_point(report):
    grid = make_gridworld(3)
    pol = random_policy(grid, np.random.default_rng(6), scale=0.5)
    fm = FeatureMap.one_hot(grid.num_pairs)
    worst_err, worst_eig = 0.0, -np.inf
    for gamma in (0.5, 0.9, 1.0):
        occ = solve_occupancy(grid, pol, gamma)
        system = assemble_saddle_system(grid, pol, occ, fm, 1.0)
        alpha, _, _ = solve_saddle_fixed_point(system)
        exact = solve_log_density_gradient(grid, pol, gamma, occ=occ).w
        worst_err = max(worst_err, np.abs(fm.table.T @ alpha - exact).max())
        worst_eig = max(worst_eig, np.linalg.eigvals(system.G).real.max())
    report(6, worst_err < 1e-8 and worst_eig < 0,
           f"max |w - exact| = {worst_err:.1e}; max Re eig(G) = {worst_eig:.3e}")


def test_criterion_7_gap_rate(report):
    start = time.perf_counter()
    mdp = two_state_mdp()
    pol = SoftmaxPolicy.uniform(mdp)
    occ = solve_occupancy(mdp, pol, 0.9)
    fm = FeatureMap.one_hot(mdp.num_pairs)
    system = assemble_saddle_system(mdp, pol, occ, fm, 1.0)
    sets = ProjectionSets.around(*solve_saddle_fixed_point(system))
    bounds = saddle_moment_bounds(mdp, pol, occ, fm, 1.0)
    # c = M*, i.e. eps_t = 1 / sqrt(t)
    schedule = default_schedule(bounds, sets, step_scale(bounds, sets))
    sizes = [100, 1000, 10_000, 100_000]
    gaps = np.array([[optimality_gap(system, sets, *run_projected_ldg(
        mdp, pol, 0.9, fm, 1.0, sets, m, schedule, np.random.default_rng(seed), occupancy=occ))
        for m in sizes] for seed in range(10)])
    mean_gap = gaps.mean(axis=0)
    slope = np.polyfit(np.log(sizes), np.log(mean_gap), 1)[0]
    elapsed = time.perf_counter() - start
    report(7, -0.8 <= slope <= -0.3 and elapsed < 300,
           f"mean gaps {np.array2string(mean_gap, precision=3)}; slope {slope:.3f}; {elapsed:.1f} s")


def test_criterion_8_estimator_ordering(report):
    start = time.perf_counter()
    lines, ok = [], True
    for name in ("compare_grid3.json", "compare_grid5.json"):
        config, estimators = harness.load_config(CONFIGS / name)
        final = harness.final_performance(harness.compare(config, estimators))
        (mm, mm_var), (rf, rf_var) = final["minmax-ldg"], final["reinforce"]
        ldg, pg = final["theoretical-ldg"][0], final["theoretical-pg"][0]
        checks = (mm >= rf - 0.01, ldg >= pg - 0.01, mm_var <= rf_var)
        ok &= all(checks)
        lines.append(f"{config.env}: minmax {mm:.4f} (var {mm_var:.1e}) vs reinforce {rf:.4f} (var {rf_var:.1e}), "
                     f"LDG {ldg:.4f} vs PG {pg:.4f} [{'ok' if all(checks) else checks}]")
    elapsed = time.perf_counter() - start
    report(8, ok and elapsed < 900, "; ".join(lines) + f"; {elapsed:.0f} s")


def test_criterion_9_duality(report):
    rng = np.random.default_rng(9)
    mdp = random_mdp(4, 2, rng)
    pol = random_policy(mdp, rng)
    occ = solve_occupancy(mdp, pol, 0.9)
    worst = 0.0
    for _ in range(20):
        w = rng.normal(size=(mdp.num_pairs, pol.num_params))
        f, tau = dual_maximiser(mdp, pol, occ, w)
        worst = max(worst, abs(loss_L(mdp, pol, occ, w, f, tau, 1.0) - reweighted_objective(mdp, pol, occ, w, 1.0)))
    report(9, worst < 1e-8, f"max |max L - objective| = {worst:.1e} over 20 random w")
