import math
import warnings

import numpy as np
import pytest

from online_gne.dynamics import SolverConfig, SwarmState, simulate
from online_gne.graph import Topology, build_laplacian
from online_gne.trigger import (
    FloorViolated,
    TriggerConfig,
    TriggerState,
    fire,
    internal_derivatives,
    internal_rates,
    measurement_errors,
    should_trigger,
    trigger_mask,
    zeno_report,
)

PATH = build_laplacian(Topology.from_edges(2, [(0, 1)]))


def two_player_state():
    ups = np.array([[[1.0], [0.0]], [[2.0], [3.0]]])  # (2, 2, 1)
    mu = np.array([[0.5], [0.0]])
    return SwarmState(ups, mu)


def test_config_validation():
    with pytest.raises(ValueError):
        TriggerConfig(beta0=0.0)
    with pytest.raises(ValueError):
        TriggerConfig(gamma0=-1.0)


def test_initial_broadcast_is_logged():
    trig = TriggerState.initial(two_player_state(), TriggerConfig(1.0, 2.0))
    assert trig.event_log == [(0, 0.0), (1, 0.0)]
    np.testing.assert_array_equal(trig.beta, [1.0, 1.0])
    np.testing.assert_array_equal(trig.gamma, [2.0, 2.0])
    e_ups, e_mu = measurement_errors(0, two_player_state(), trig)
    assert not e_ups.any() and not e_mu.any()


def test_no_trigger_right_after_broadcast():
    s = two_player_state()
    trig = TriggerState.initial(s, TriggerConfig(1e-9, 1e-9))
    assert not trigger_mask(s, trig, PATH).any()


def test_estimate_error_triggers_and_fire_resets():
    s = two_player_state()
    trig = TriggerState.initial(s, TriggerConfig(1.0, 1.0))
    s.upsilon[0, 1, 0] += 3.0
    # lhs 4 * d_1 * |e|^2 = 36 vs disagreement sum 1^2 + 3^2 = 10 plus beta 1
    assert should_trigger(0, s, trig, PATH)
    assert not should_trigger(1, s, trig, PATH)
    fire(0, s, trig, 0.25)
    assert trig.event_log[-1] == (0, 0.25)
    assert trig.last_event_time[0] == 0.25
    assert not should_trigger(0, s, trig, PATH)
    assert not measurement_errors(0, s, trig)[0].any()


def test_multiplier_error_triggers():
    s = two_player_state()
    trig = TriggerState.initial(s, TriggerConfig(1e6, 1.0))
    s.mu[1, 0] = 2.0
    # 6 sqrt(q) N |e_mu| = 24 vs sum |mu_hat diff| = 0.5 plus gamma 1
    assert should_trigger(1, s, trig, PATH)


def test_internal_rates_by_hand():
    s = two_player_state()
    trig = TriggerState.initial(s, TriggerConfig(2.0, 3.0))
    s.upsilon[0, 1, 0] += 0.5
    s.mu[0, 0] = 0.75
    beta_dot, gamma_dot = internal_rates(s, trig, PATH)
    dis_ups = (1 - 2) ** 2 + (0 - 3) ** 2
    dis_mu = 0.5
    assert beta_dot[0] == pytest.approx(-2 * 2.0 + dis_ups - 4 * 1 * 0.25)
    assert gamma_dot[0] == pytest.approx(-3.0 + dis_mu - 6 * 1 * 2 * 0.25)
    assert beta_dot[1] == pytest.approx(-4.0 + dis_ups)
    assert internal_derivatives(0, s, trig, PATH) == (beta_dot[0], gamma_dot[0])


def test_rates_respect_envelope_while_silent():
    # when no condition holds, beta' >= -3 beta and gamma' >= -2 gamma
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = SwarmState(rng.normal(size=(2, 2, 1)), rng.uniform(0, 1, (2, 1)))
        trig = TriggerState.initial(s, TriggerConfig(rng.uniform(0.1, 5), rng.uniform(0.1, 5)))
        s.upsilon += 0.3 * rng.normal(size=s.upsilon.shape)
        s.mu = np.maximum(0, s.mu + 0.1 * rng.normal(size=s.mu.shape))
        silent = ~trigger_mask(s, trig, PATH)
        b, g = internal_rates(s, trig, PATH)
        assert np.all(b[silent] >= -3 * trig.beta[silent] - 1e-12)


def test_zeno_report_counts_and_gaps():
    log = [(0, 0.0), (1, 0.0), (0, 0.5), (0, 0.502)]
    rep = zeno_report(log, dt=1e-3, config=TriggerConfig(), horizon=1.0, n_players=2)
    assert rep.event_counts == [3, 1]
    assert rep.min_gaps[0] == pytest.approx(0.002)
    assert math.isinf(rep.min_gaps[1])
    assert rep.passed
    bad = zeno_report([(0, 0.1), (0, 0.1005)], 1e-3, TriggerConfig(), 1.0, n_players=1)
    assert not bad.min_gap_ok


def test_zeno_report_floor():
    cfg = TriggerConfig(1.0, 1.0)
    times = np.array([0.0, 1.0])
    ok = np.array([[1.0], [np.exp(-2.0)]])
    rep = zeno_report([], 1e-3, cfg, 1.0, n_players=1, times=times, beta=ok, gamma=ok)
    assert rep.floor_ok and rep.worst_beta_ratio >= 1.0
    low = np.array([[1.0], [0.9 * np.exp(-2.0)]])
    with pytest.raises(FloorViolated):
        zeno_report([], 1e-3, cfg, 1.0, n_players=1, times=times, beta=ok, gamma=low)
    rep = zeno_report([], 1e-3, cfg, 1.0, n_players=1, times=times, beta=ok, gamma=low, raise_on_floor=False)
    assert not rep.passed


def _counts(scenario, beta0, horizon=1.0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = simulate(
            scenario.game(),
            scenario.topology(),
            SolverConfig(mode="event", horizon=horizon, k_mu=10.0),
            scenario.initial_state(7),
            TriggerConfig(beta0, beta0),
            check_constants=False,
        )
    return traj, np.bincount([i for i, _ in traj.event_log], minlength=scenario.n_players)


def test_unreachable_thresholds_silence_everyone(paper5):
    _, counts = _counts(paper5, 1e12)
    np.testing.assert_array_equal(counts, 1)  # only the initial broadcast


def test_vanishing_thresholds_approach_step_count(paper5):
    _, tiny = _counts(paper5, 1e-6)
    _, default = _counts(paper5, 300.0)
    assert np.all(tiny > 10 * default)
    assert tiny.max() > 0.9 * 1000


def test_paper5_internal_variables_stay_above_envelope(paper5):
    traj, counts = _counts(paper5, 300.0)
    assert np.all(counts < 1000)
    rep = zeno_report(
        traj.event_log,
        1e-3,
        TriggerConfig(300.0, 300.0),
        1.0,
        n_players=5,
        times=traj.times,
        beta=traj.beta,
        gamma=traj.gamma,
    )
    assert rep.passed
