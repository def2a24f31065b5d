"""Dynamic event-triggered broadcasting with internal threshold variables.

Player ``i`` broadcasts its estimate and multiplier only when the
measurement error since its last broadcast outgrows a threshold made of
the current broadcast disagreement plus an internal variable (``beta_i``
for the estimate, ``gamma_i`` for the multiplier).  The internal variables
follow their own ODEs and stay positive, which rules out accumulation of
events in finite time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .graph import LaplacianData, Topology, build_laplacian

if TYPE_CHECKING:
    from .dynamics import SwarmState

__all__ = [
    "FloorViolated",
    "TriggerConfig",
    "TriggerState",
    "ZenoReport",
    "measurement_errors",
    "should_trigger",
    "trigger_mask",
    "internal_derivatives",
    "internal_rates",
    "fire",
    "zeno_report",
]

FLOOR_RTOL = 1e-6


class FloorViolated(AssertionError):
    """An internal variable dropped below its exponential lower envelope."""


@dataclass(frozen=True)
class TriggerConfig:
    beta0: float = 300.0
    gamma0: float = 300.0
    # testing hook: broadcast every step regardless of the conditions
    force_fire: bool = False

    def __post_init__(self) -> None:
        if not (self.beta0 > 0 and self.gamma0 > 0):
            raise ValueError("beta0 and gamma0 must be positive")


@dataclass
class TriggerState:
    upsilon_hat: np.ndarray  # (N, N, d)
    mu_hat: np.ndarray  # (N, q)
    beta: np.ndarray  # (N,)
    gamma: np.ndarray  # (N,)
    last_event_time: np.ndarray  # (N,)
    event_log: list[tuple[int, float]] = field(default_factory=list)

    @classmethod
    def initial(cls, state: SwarmState, config: TriggerConfig, t0: float = 0.0) -> TriggerState:
        """Every player broadcasts its initial values at ``t0`` (logged)."""
        n = state.n_players
        return cls(
            upsilon_hat=state.upsilon.copy(),
            mu_hat=state.mu.copy(),
            beta=np.full(n, float(config.beta0)),
            gamma=np.full(n, float(config.gamma0)),
            last_event_time=np.full(n, float(t0)),
            event_log=[(i, float(t0)) for i in range(n)],
        )


def _lap(topology: Topology | LaplacianData) -> LaplacianData:
    return topology if isinstance(topology, LaplacianData) else build_laplacian(topology)


def measurement_errors(i: int, state: SwarmState, trig: TriggerState):
    """``(e_upsilon, e_mu)``: last broadcast minus current value for player ``i``."""
    e_ups = trig.upsilon_hat[i] - state.upsilon[i]
    e_mu = trig.mu_hat[i] - state.mu[i]
    return e_ups.reshape(-1), e_mu


def _terms(state: SwarmState, trig: TriggerState, lap: LaplacianData):
    """Per-player pieces shared by the trigger test and the internal ODEs."""
    n = state.n_players
    q = state.mu.shape[1]
    a = lap.adjacency
    e_ups_sq = np.sum((trig.upsilon_hat - state.upsilon).reshape(n, -1) ** 2, axis=1)
    e_mu_norm = np.linalg.norm(trig.mu_hat - state.mu, axis=1)
    flat = trig.upsilon_hat.reshape(n, -1)
    pair_sq = np.sum((flat[:, None, :] - flat[None, :, :]) ** 2, axis=-1)
    dis_ups = np.sum(a * pair_sq, axis=1)
    pair_l1 = np.sum(np.abs(trig.mu_hat[:, None, :] - trig.mu_hat[None, :, :]), axis=-1)
    dis_mu = np.sum(a * pair_l1, axis=1)
    ups_lhs = 4.0 * lap.degrees * e_ups_sq
    mu_lhs = 6.0 * math.sqrt(q) * n * e_mu_norm
    return ups_lhs, dis_ups, mu_lhs, dis_mu


def trigger_mask(state: SwarmState, trig: TriggerState, topology) -> np.ndarray:
    """Boolean vector: which players' triggering conditions hold now."""
    ups_lhs, dis_ups, mu_lhs, dis_mu = _terms(state, trig, _lap(topology))
    return (ups_lhs > dis_ups + trig.beta) | (mu_lhs > dis_mu + trig.gamma)


def should_trigger(i: int, state: SwarmState, trig: TriggerState, topology) -> bool:
    return bool(trigger_mask(state, trig, topology)[i])


def internal_rates(state: SwarmState, trig: TriggerState, topology):
    """``(beta_dot, gamma_dot)`` for all players."""
    ups_lhs, dis_ups, mu_lhs, dis_mu = _terms(state, trig, _lap(topology))
    beta_dot = -2.0 * trig.beta + dis_ups - ups_lhs
    gamma_dot = -trig.gamma + dis_mu - mu_lhs
    return beta_dot, gamma_dot


def internal_derivatives(i: int, state: SwarmState, trig: TriggerState, topology):
    beta_dot, gamma_dot = internal_rates(state, trig, topology)
    return float(beta_dot[i]), float(gamma_dot[i])


def fire(i: int, state: SwarmState, trig: TriggerState, t: float) -> TriggerState:
    """Broadcast player ``i``'s current estimate and multiplier (in place)."""
    trig.upsilon_hat[i] = state.upsilon[i]
    trig.mu_hat[i] = state.mu[i]
    trig.last_event_time[i] = t
    trig.event_log.append((int(i), float(t)))
    return trig


@dataclass
class ZenoReport:
    event_counts: list[int]
    min_gaps: list[float]  # inf when a player has fewer than two events
    min_gap_ok: bool
    floor_ok: bool
    worst_beta_ratio: float  # min over samples of beta / floor
    worst_gamma_ratio: float

    @property
    def passed(self) -> bool:
        return self.min_gap_ok and self.floor_ok


def zeno_report(
    event_log: list[tuple[int, float]],
    dt: float,
    config: TriggerConfig,
    horizon: float,
    *,
    n_players: int,
    times: np.ndarray | None = None,
    beta: np.ndarray | None = None,
    gamma: np.ndarray | None = None,
    raise_on_floor: bool = True,
) -> ZenoReport:
    """Event statistics and the exponential lower envelopes of ``beta``/``gamma``.

    Between events the rule keeps ``beta' >= -3 beta`` and
    ``gamma' >= -2 gamma``, so at every sample ``beta >= beta0 e^{-3t}`` and
    ``gamma >= gamma0 e^{-2t}`` (up to a relative ``1e-6``).

    Raises:
        FloorViolated: if an envelope is broken and ``raise_on_floor`` is set.
    """
    per_player: list[list[float]] = [[] for _ in range(n_players)]
    for i, t in event_log:
        if t > horizon + dt:
            raise ValueError(f"event at t={t} beyond horizon {horizon}")
        per_player[i].append(t)
    counts = [len(ts) for ts in per_player]
    gaps = []
    for ts in per_player:
        ts = sorted(ts)
        gaps.append(float(np.min(np.diff(ts))) if len(ts) > 1 else math.inf)
    min_gap_ok = all(g >= dt * (1 - 1e-9) for g in gaps)

    worst_b = worst_g = math.inf
    floor_ok = True
    if times is not None and beta is not None and gamma is not None:
        times = np.asarray(times, dtype=float)
        fb = config.beta0 * np.exp(-3.0 * times)[:, None]
        fg = config.gamma0 * np.exp(-2.0 * times)[:, None]
        worst_b = float(np.min(beta / fb))
        worst_g = float(np.min(gamma / fg))
        floor_ok = worst_b >= 1 - FLOOR_RTOL and worst_g >= 1 - FLOOR_RTOL
        if not floor_ok and raise_on_floor:
            raise FloorViolated(
                f"internal variable below envelope: min beta/floor={worst_b:.8f}, "
                f"min gamma/floor={worst_g:.8f}"
            )
    return ZenoReport(counts, gaps, min_gap_ok, floor_ok, worst_b, worst_g)
