import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import cumulative_trapezoid as scipy_cumtrapz

from online_gne.dynamics import SolverConfig, Trajectory
from online_gne.game import BoxSet, LipschitzEstimates
from online_gne.graph import build_laplacian, ring
from online_gne.metrics import (
    NoConvergence,
    ReferencePoint,
    bound_check,
    cumulative_trapezoid,
    event_regret_offset,
    fit,
    fit_bound_continuous,
    fit_bound_event,
    gne_oracle,
    metric_series,
    regret,
    regret_bound_continuous,
    regret_bound_event,
    vi_residual,
)
from online_gne.scenario import game_from_expressions
from online_gne.trigger import TriggerConfig


def make_traj(times, x, q=0):
    """Trajectory whose estimates all equal the actions."""
    m, n, d = x.shape
    ups = np.broadcast_to(x[:, None, :, :], (m, n, n, d)).copy()
    return Trajectory(times=times, upsilon=ups, mu=np.zeros((m, n, q)), config=SolverConfig())


def shared_budget_game():
    # J_i = (x_i - 2)^2, sum_i (x_i - 1) <= 0: variational GNE x = (1, 1), lambda = 2
    box = BoxSet(np.array([-5.0]), np.array([5.0]))
    return game_from_expressions(
        ["(x1_1 - 2)^2", "(x2_1 - 2)^2"], [["x1_1 - 1"], ["x2_1 - 1"]], [box, box], 1, 1
    )


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=50), st.floats(0.01, 1.0))
@settings(max_examples=100, deadline=None)
def test_trapezoid_matches_scipy(values, h):
    v = np.array(values)
    t = np.arange(len(v)) * h
    np.testing.assert_allclose(cumulative_trapezoid(v, t), scipy_cumtrapz(v, t, initial=0), atol=1e-9)


def test_constant_negative_constraint_has_zero_fit():
    box = BoxSet(np.array([-1.0]), np.array([1.0]))
    game = game_from_expressions(["x1_1^2"], [["-1"]], [box], 1, 1)
    times = np.linspace(0, 1, 101)
    traj = make_traj(times, np.zeros((101, 1, 1)), q=1)
    comps, total, over = fit(traj, game)
    assert comps[-1, 0] == pytest.approx(-1.0)
    assert total[-1] == 0.0 and over[0] == 0.0


def test_fit_positive_part():
    box = BoxSet(np.array([-1.0]), np.array([1.0]))
    game = game_from_expressions(["x1_1^2"], [["2", "-1"]], [box], 1, 2)
    times = np.linspace(0, 4, 41)
    traj = make_traj(times, np.zeros((41, 1, 1)), q=2)
    comps, total, over = fit(traj, game)
    assert total[-1] == pytest.approx(8.0)
    assert over[-1] == pytest.approx(4.0)


def test_regret_zero_at_reference(duopoly):
    ref = ReferencePoint(np.array([[0.0], [2.0]]), "analytic")
    times = np.linspace(0, 1, 11)
    traj = make_traj(times, np.broadcast_to(ref.x_star, (11, 2, 1)).copy())
    np.testing.assert_allclose(regret(traj, duopoly, ref), 0.0)


def test_regret_by_hand(duopoly):
    # player 1 at 1 while player 2 sits at 2: J_1(1, 2) - J_1(0, 2) = 2 - 1 = 1
    ref = ReferencePoint(np.array([[0.0], [2.0]]), "analytic")
    times = np.linspace(0, 3, 31)
    x = np.broadcast_to(np.array([[1.0], [2.0]]), (31, 2, 1)).copy()
    assert regret(make_traj(times, x), duopoly, ref)[-1] == pytest.approx(3.0)


def test_metrics_are_additive_over_splits(paper5_game):
    rng = np.random.default_rng(3)
    times = np.linspace(0, 1, 201)
    x = paper5_game.sample_profiles(rng, 201)
    ref = ReferencePoint(np.zeros((5, 2)), "analytic")
    full = metric_series(make_traj(times, x, q=1), paper5_game, ref)
    a = metric_series(make_traj(times[:101], x[:101], q=1), paper5_game, ref)
    b = metric_series(make_traj(times[100:], x[100:], q=1), paper5_game, ref)
    assert full.regret[-1] == pytest.approx(a.regret[-1] + b.regret[-1], abs=1e-10)
    np.testing.assert_allclose(
        full.fit_components[-1], a.fit_components[-1] + b.fit_components[-1], atol=1e-10
    )


def test_short_trajectory_gives_empty_series(duopoly):
    traj = make_traj(np.zeros(1), np.zeros((1, 2, 1)))
    assert len(metric_series(traj, duopoly, ReferencePoint(np.zeros((2, 1)), "analytic"))) == 0


def test_oracle_on_duopoly(duopoly):
    ref = gne_oracle(duopoly, np.array([0.0]))
    np.testing.assert_allclose(ref.x_star.ravel(), [0.0, 2.0], atol=1e-6)
    assert ref.residual < 1e-6 and ref.converged


def test_oracle_with_shared_constraint():
    game = shared_budget_game()
    ref = gne_oracle(game, np.array([0.0]))
    np.testing.assert_allclose(ref.x_star.ravel(), [1.0, 1.0], atol=1e-6)
    assert ref.multiplier[0] == pytest.approx(2.0, abs=1e-5)
    assert ref.max_violation[0] <= 1e-6
    assert vi_residual(game, np.array([0.0]), ref.x_star, ref.multiplier) < 1e-6
    # a wrong multiplier shows up in the residual
    assert vi_residual(game, np.array([0.0]), ref.x_star, np.array([0.0])) > 0.5


def test_oracle_raises_when_starved(paper5_game):
    with pytest.raises(NoConvergence) as err:
        gne_oracle(paper5_game, np.linspace(0, 1, 11), attempts=1, max_iter=3)
    assert err.value.reference.residual > 1e-4
    ref = gne_oracle(paper5_game, np.linspace(0, 1, 11), attempts=1, max_iter=3, strict=False)
    assert not ref.converged


def test_oracle_on_paper5(paper5_game):
    grid = np.linspace(0, 1, 101)
    ref = gne_oracle(paper5_game, grid)
    assert ref.converged and ref.residual < 1e-6
    assert np.all(ref.x_star >= -1) and np.all(ref.x_star <= 6)
    assert np.all(ref.multiplier >= 0)


def test_bound_formulas():
    assert regret_bound_continuous(2.0, 1.0, 1.0, 1.0) == pytest.approx(2.0 + 0.25)
    assert fit_bound_continuous(4, 1.0, 4.0, 1.0, 2.0, 1.0, 4.0) == pytest.approx(16 + 2 + 1)
    assert event_regret_offset(10.0, 4.0, 8.0) == pytest.approx(10 + 1)
    assert regret_bound_event(0.0, 1.0, 1.0, 2.0, 10.0, 4.0, 8.0) == pytest.approx(11 + 0.25)
    assert fit_bound_event(1, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 4.0) == pytest.approx(
        math.sqrt(2.0) + 2 + 1
    )


def test_bound_check_modes(duopoly):
    times = np.linspace(0, 1, 11)
    x = np.broadcast_to(np.array([[1.0], [2.0]]), (11, 2, 1)).copy()
    traj = make_traj(times, x)
    ref = ReferencePoint(np.array([[0.0], [2.0]]), "analytic")
    est = LipschitzEstimates(l_hat=2.0, kf_hat=5.0, kg_hat=0.0)
    lap = build_laplacian(ring(2))
    cont = bound_check(traj, duopoly, lap, ref, est)
    assert cont.mode == "continuous" and cont.label == "estimate"
    assert cont.delta_hat == pytest.approx(1.0)
    assert cont.regret_measured == pytest.approx(1.0)
    ev = bound_check(traj, duopoly, lap, ref, est, TriggerConfig(1.0, 1.0))
    assert ev.regret_bound > cont.regret_bound
    assert cont.regret_ratio == pytest.approx(cont.regret_measured / cont.regret_bound)
