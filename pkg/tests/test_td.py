import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_policy, single_state_mdp, two_state_cycle, two_state_mdp
from ldgrad.errors import AssumptionError, ConfigurationError, ModelError
from ldgrad.exact import GradTable, solve_log_density_gradient, solve_occupancy
from ldgrad.features import FeatureMap
from ldgrad.mdp import (SoftmaxPolicy, TransitionSample, make_bandit, random_mdp,
                        sample_backward_batch, sample_occupancy_batch)
from ldgrad.schedules import StepSchedule
from ldgrad.td import (LinearTdState, TdState, apply_operator_Y, assemble_linear_td_system,
                       contraction_diagnostic, linear_td_step, power_iteration, run_linear_td, run_td0,
                       solve_linear_td_fixed_point, td0_step, weighted_l1)


# --------------------------------------------------------------------------- operator Y

@pytest.mark.parametrize("gamma", [0.0, 0.5, 0.9, 1.0])
def test_exact_table_is_fixed_point(gamma, rng):
    mdp = random_mdp(4, 3, rng)
    pol = random_policy(mdp, rng)
    occ = solve_occupancy(mdp, pol, gamma)
    W = solve_log_density_gradient(mdp, pol, gamma, occ=occ).w
    assert np.abs(apply_operator_Y(mdp, pol, occ, W).w - W).max() < 1e-10


def test_operator_examples(rng):
    one = single_state_mdp()
    pol = SoftmaxPolicy.uniform(one)
    occ = solve_occupancy(one, pol, 0.7)
    W = rng.normal(size=(1, 1))
    np.testing.assert_allclose(apply_operator_Y(one, pol, occ, W).w, 0.7 * W)
    # two-state cycle: P_pi swaps the pairs, d = (2/3, 1/3), G = 0
    cyc = two_state_cycle()
    pc = SoftmaxPolicy.uniform(cyc)
    oc = solve_occupancy(cyc, pc, 0.5)
    W = rng.normal(size=(2, 2))
    d = np.array([2 / 3, 1 / 3])
    expected = 0.5 * np.array([d[1] * W[1] / d[0], d[0] * W[0] / d[1]])
    np.testing.assert_allclose(apply_operator_Y(cyc, pc, oc, W).w, expected, atol=1e-12)


def test_operator_needs_positive_occupancy(grid3):
    pol = SoftmaxPolicy.uniform(grid3)
    occ = solve_occupancy(grid3, pol, 0.0)
    with pytest.raises(ModelError):
        apply_operator_Y(grid3, pol, occ, np.zeros((36, 36)))


# --------------------------------------------------------------------------- contraction

def test_contraction_examples(rng, small_random):
    mdp, pol = small_random
    occ = solve_occupancy(mdp, pol, 0.9)
    u = rng.normal(size=(mdp.num_pairs, pol.num_params))
    assert tuple(contraction_diagnostic(mdp, pol, occ, u, u)) == (0.0, 0.0)
    occ0 = solve_occupancy(mdp, pol, 0.0)
    lhs, _ = contraction_diagnostic(mdp, pol, occ0, u, rng.normal(size=u.shape))
    assert lhs == 0.0
    check = contraction_diagnostic(mdp, pol, solve_occupancy(mdp, pol, 1.0), u, 2 * u)
    assert check.non_expansive_only and check.holds()


@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100))
def test_contraction_property(seed, scale):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(4, 2, rng)
    pol = random_policy(mdp, rng)
    occ = solve_occupancy(mdp, pol, 0.9)
    u, v = rng.normal(scale=scale, size=(2, mdp.num_pairs, pol.num_params))
    check = contraction_diagnostic(mdp, pol, occ, GradTable(u, 0.9), GradTable(v, 0.9))
    assert not check.non_expansive_only
    assert check.lhs <= check.rhs + 1e-10


def test_power_iteration_geometric(rng, small_random):
    mdp, pol = small_random
    occ = solve_occupancy(mdp, pol, 0.9)
    target = solve_log_density_gradient(mdp, pol, 0.9, occ=occ).w
    table, errors = power_iteration(mdp, pol, occ, 60, target=target)
    for k, e in enumerate(errors):
        assert e <= 0.9 ** k * errors[0] + 1e-12
    assert errors[-1] < 1e-2
    assert weighted_l1(occ, table.w, target) == errors[-1]


# --------------------------------------------------------------------------- tabular TD(0)

def test_td0_step_examples():
    state = TdState(np.array([[1.0], [0.0]]))
    scores = np.array([[0.0], [0.5]])
    td0_step(state, TransitionSample(0, 0, 1, 0), True, scores, 1, alpha=0.1)
    assert state.w[1, 0] == pytest.approx(0.15)
    assert state.w[0, 0] == 1.0 and state.step_count == 1
    before = state.w.copy()
    td0_step(state, TransitionSample(0, 0, 1, 0), True, scores, 1, alpha=0.0)
    np.testing.assert_array_equal(state.w, before)
    td0_step(state, TransitionSample(-1, -1, 1, 0), False, scores, 1, alpha=1.0)
    assert state.w[1, 0] == 0.5


def test_td0_expected_update_matches_operator(rng):
    mdp = two_state_mdp()
    pol = random_policy(mdp, rng)
    occ = solve_occupancy(mdp, pol, 0.9)
    W = rng.normal(size=(4, 4))
    batch, active = sample_backward_batch(mdp, pol, occ, 100_000, rng)
    i, j = batch.pairs(2)
    scores = pol.score_matrix()
    inc = scores[j] - W[j] + np.where(active[:, None], W[np.maximum(i, 0)], 0.0)
    emp = np.zeros_like(W)
    np.add.at(emp, j, inc)
    emp /= j.size
    mean = occ.d[:, None] * (apply_operator_Y(mdp, pol, occ, W).w - W)
    assert np.abs(emp - mean).max() < 2e-2


def test_run_td0_single_state(rng):
    one = single_state_mdp()
    table = run_td0(one, SoftmaxPolicy.uniform(one), 0.5, 1000, rng=rng)
    np.testing.assert_array_equal(table.w, 0.0)


def test_run_td0_bandit_gamma1(rng):
    b = make_bandit()
    pol = SoftmaxPolicy.for_mdp(b, [0.4, -0.2])
    occ = solve_occupancy(b, pol, 1.0)
    table = run_td0(b, pol, 1.0, 100_000, rng=rng, occupancy=occ)
    assert weighted_l1(occ, table.w, solve_log_density_gradient(b, pol, 1.0).w) < 5e-2


def test_run_td0_deterministic_and_curve(small_random):
    mdp, pol = small_random
    a = run_td0(mdp, pol, 0.9, 5000, rng=np.random.default_rng(3))
    b, curve = run_td0(mdp, pol, 0.9, 5000, rng=np.random.default_rng(3), record_every=1000)
    np.testing.assert_array_equal(a.w, b.w)
    assert [row[0] for row in curve] == [0, 1000, 2000, 3000, 4000, 5000]
    assert all(len(row) == 3 for row in curve)
    with pytest.raises(ConfigurationError):
        run_td0(mdp, pol, 0.9, 0)


def test_run_td0_matches_python_reference(small_random):
    """The compiled loop equals repeated td0_step on the same samples."""
    mdp, pol = small_random
    occ = solve_occupancy(mdp, pol, 0.8)
    sched = StepSchedule.robbins_monro(2.0, 10.0)
    fast = run_td0(mdp, pol, 0.8, 300, sched, np.random.default_rng(5), occ)
    batch, active = sample_backward_batch(mdp, pol, occ, 300, np.random.default_rng(5))
    state = TdState.zeros(mdp.num_pairs, pol.num_params, sched)
    for k in range(300):
        td0_step(state, batch[k], bool(active[k]), pol.score_matrix(), mdp.num_actions)
    np.testing.assert_allclose(fast.w, state.w, atol=1e-14)


# --------------------------------------------------------------------------- linear TD

def test_linear_td_step_examples(rng):
    fm = FeatureMap.one_hot(4)
    state = LinearTdState.zeros(fm, 1)
    state.zeta[:] = rng.normal(size=(4, 1))
    before = state.zeta.copy()
    scores = rng.normal(size=(4, 1))
    linear_td_step(state, TransitionSample(0, 1, 1, 0), 0.0, 0.9, scores, 2)
    np.testing.assert_array_equal(state.zeta, before)
    linear_td_step(state, TransitionSample(0, 1, 1, 0), 0.5, 0.9, scores, 2)
    changed = np.flatnonzero(np.any(state.zeta != before, axis=1))
    assert list(changed) == [2]
    with pytest.raises(ConfigurationError):
        linear_td_step(state, TransitionSample(0, 1, 1, 0), 0.5, 0.9, np.zeros((4, 3)), 2)


def test_linear_td_expected_update(rng):
    mdp = two_state_mdp()
    pol = random_policy(mdp, rng)
    occ = solve_occupancy(mdp, pol, 0.9)
    fm = FeatureMap(rng.normal(size=(3, 4)))
    A, g = assemble_linear_td_system(mdp, pol, occ, fm, sampling="forward")
    zeta = rng.normal(size=(3, 4))
    batch = sample_occupancy_batch(mdp, pol, 100_000, rng, occ)
    i, j = batch.pairs(2)
    Phi = fm.table
    scores = pol.score_matrix()
    err = scores[j] + 0.9 * (Phi[:, i].T @ zeta) - Phi[:, j].T @ zeta
    emp = Phi[:, j] @ err / j.size
    assert np.abs(emp - (A @ zeta + g)).max() < 2e-2
    A_hat = (0.9 * Phi[:, j] @ Phi[:, i].T - Phi[:, j] @ Phi[:, j].T) / j.size
    assert np.abs(A_hat - A).max() < 2e-2


def test_linear_td_display_matrix_degenerate():
    one = single_state_mdp()
    pol = SoftmaxPolicy.uniform(one)
    occ = solve_occupancy(one, pol, 0.5)
    A, g = assemble_linear_td_system(one, pol, occ, FeatureMap.one_hot(1), sampling="display")
    assert A[0, 0] == 0.0
    with pytest.raises(AssumptionError):
        solve_linear_td_fixed_point(A, g)
    A_upd, _ = assemble_linear_td_system(one, pol, occ, FeatureMap.one_hot(1), sampling="forward")
    assert A_upd[0, 0] == pytest.approx(-0.5)


def test_linear_td_one_hot_fixed_point_is_exact(rng):
    mdp = two_state_mdp()
    pol = random_policy(mdp, rng)
    occ = solve_occupancy(mdp, pol, 0.9)
    A, g = assemble_linear_td_system(mdp, pol, occ, FeatureMap.one_hot(4))
    zeta = solve_linear_td_fixed_point(A, g)
    assert np.abs(zeta - solve_log_density_gradient(mdp, pol, 0.9, occ=occ).w).max() < 1e-8


def test_linear_td_one_hot_gamma1_is_singular(rng):
    mdp = two_state_mdp()
    pol = random_policy(mdp, rng)
    occ = solve_occupancy(mdp, pol, 1.0)
    for sampling in ("forward", "backward"):
        A, g = assemble_linear_td_system(mdp, pol, occ, FeatureMap.one_hot(4), sampling)
        with pytest.raises(AssumptionError):
            solve_linear_td_fixed_point(A, g)


def test_run_linear_td_converges(rng):
    mdp = two_state_mdp()
    pol = random_policy(mdp, rng)
    occ = solve_occupancy(mdp, pol, 0.9)
    fm = FeatureMap.one_hot(4)
    state = run_linear_td(mdp, pol, 0.9, fm, 300_000, rng=rng, occupancy=occ)
    exact = solve_log_density_gradient(mdp, pol, 0.9, occ=occ).w
    assert weighted_l1(occ, state.table(), exact) < 5e-2
    with pytest.raises(ConfigurationError):
        run_linear_td(mdp, pol, 0.9, fm, 10, sampling="display")


def test_schedule_validation():
    assert StepSchedule.robbins_monro(1.0, 100.0)(1) == pytest.approx(1 / 101)
    assert StepSchedule.inverse_sqrt(2.0, 4.0)(4) == pytest.approx(0.25)
    np.testing.assert_allclose(StepSchedule.constant(0.3).steps(5, 3), 0.3)
    sched = StepSchedule.robbins_monro(1.0, 100.0)
    np.testing.assert_allclose(sched.steps(1, 4), [sched(t) for t in range(1, 5)])
    with pytest.raises(ConfigurationError):
        StepSchedule("cosine")
    with pytest.raises(ConfigurationError):
        StepSchedule.inverse_sqrt(1.0, 0.0)
