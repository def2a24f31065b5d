"""Distributed primal-dual GNE seeking flows and their projected Euler integration.

Each player ``i`` keeps an estimate ``Upsilon^i`` of the whole action
profile.  The state is stored as one array ``upsilon`` of shape
``(N, N, d)``; player ``i``'s own action is the diagonal block
``upsilon[i, i]``, so ``Upsilon^i_i = x_i`` holds by construction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .game import (
    GameSpec,
    box_projection,
    orthant_tangent_projection,
    sgn,
    tangent_projection,
)
from .graph import LaplacianData, Topology, build_laplacian

if TYPE_CHECKING:
    from .trigger import TriggerConfig, TriggerState

__all__ = [
    "NumericalBlowup",
    "SwarmState",
    "SolverConfig",
    "Derivative",
    "Trajectory",
    "gain",
    "rhs_continuous",
    "rhs_event",
    "step",
    "simulate",
]

CONTINUOUS = "continuous"
EVENT = "event"
MODES = (CONTINUOUS, EVENT)


class NumericalBlowup(ArithmeticError):
    def __init__(self, player: int, term: str, t: float | None = None):
        self.player = player
        self.term = term
        self.t = t
        when = "" if t is None else f" at t={t:.6g}"
        super().__init__(f"non-finite {term} for player {player + 1}{when}")


@dataclass
class SwarmState:
    upsilon: np.ndarray  # (N, N, d); upsilon[i, i] is x_i
    mu: np.ndarray  # (N, q)

    @property
    def n_players(self) -> int:
        return self.upsilon.shape[0]

    @property
    def x(self) -> np.ndarray:
        """Actions ``(N, d)`` read off the diagonal blocks (a copy)."""
        n = self.n_players
        return self.upsilon[np.arange(n), np.arange(n)]

    def copy(self) -> SwarmState:
        return SwarmState(self.upsilon.copy(), self.mu.copy())

    @classmethod
    def initial(
        cls,
        game: GameSpec,
        x0: np.ndarray,
        upsilon0: np.ndarray | None = None,
        mu0: np.ndarray | None = None,
    ) -> SwarmState:
        """Initial state; unknown estimates default to the centers of the boxes."""
        n, d, q = game.n_players, game.action_dim, game.constraint_dim
        x0 = np.asarray(x0, dtype=float).reshape(n, d)
        if upsilon0 is None:
            centers = np.stack([b.center for b in game.boxes])
            ups = np.broadcast_to(centers, (n, n, d)).copy()
        else:
            ups = np.array(upsilon0, dtype=float).reshape(n, n, d)
        ups[np.arange(n), np.arange(n)] = x0
        mu = np.zeros((n, q)) if mu0 is None else np.array(mu0, dtype=float).reshape(n, q)
        return cls(ups, mu)


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    horizon: float = 1.0
    k_mu: float = 10.0
    gain_cap: float = math.inf
    mode: str = CONTINUOUS
    seed: int = 0
    sample_stride: int = 1

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= 0:
            raise ValueError("horizon must be nonnegative")
        if not self.k_mu > 0:
            raise ValueError("k_mu must be positive")
        if not self.gain_cap > 0:
            raise ValueError("gain_cap must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class Derivative:
    upsilon_dot: np.ndarray  # diagonal blocks hold x_dot
    mu_dot: np.ndarray

    @property
    def x_dot(self) -> np.ndarray:
        n = self.upsilon_dot.shape[0]
        return self.upsilon_dot[np.arange(n), np.arange(n)]


@dataclass
class Trajectory:
    """Sampled output of :func:`simulate`.

    ``beta`` and ``gamma`` are ``None`` in continuous mode.  ``event_log``
    holds ``(player, time)`` pairs with 0-based players, including the
    initial broadcast of every player at ``t = 0``.
    """

    times: np.ndarray
    upsilon: np.ndarray  # (m, N, N, d)
    mu: np.ndarray  # (m, N, q)
    config: SolverConfig
    beta: np.ndarray | None = None
    gamma: np.ndarray | None = None
    event_log: list[tuple[int, float]] = field(default_factory=list)
    trigger_config: TriggerConfig | None = None

    @property
    def x(self) -> np.ndarray:
        n = self.upsilon.shape[1]
        return self.upsilon[:, np.arange(n), np.arange(n)]

    @property
    def n_players(self) -> int:
        return self.upsilon.shape[1]

    @property
    def stride(self) -> int:
        return self.config.sample_stride

    def state_at(self, k: int) -> SwarmState:
        return SwarmState(self.upsilon[k].copy(), self.mu[k].copy())


def gain(t: float, cap: float = math.inf) -> float:
    """Consensus gain ``k(t) = e^t`` (solution of ``k' = k, k(0) = 1``), capped."""
    return min(math.exp(min(t, 700.0)), cap)


def _flow(
    t: float,
    state: SwarmState,
    game: GameSpec,
    lap: LaplacianData,
    k_mu: float,
    consensus_src: np.ndarray,
    mu_src: np.ndarray,
    mu_coeff: float,
    gain_cap: float,
) -> Derivative:
    n, _, d = state.upsilon.shape
    k = gain(t, gain_cap)
    cons = (lap.laplacian @ consensus_src.reshape(n, -1)).reshape(n, n, d)
    ups_dot = -k * cons
    diff_sign = sgn(mu_src[:, None, :] - mu_src[None, :, :])
    sign_sum = np.einsum("ij,ijq->iq", lap.adjacency, diff_sign)

    x = state.x
    g = np.empty_like(state.mu)
    for i in range(n):
        grad = np.asarray(game.cost_gradient(i, t, state.upsilon[i]), dtype=float)
        if not np.all(np.isfinite(grad)):
            raise NumericalBlowup(i, "cost gradient", t)
        gi = np.asarray(game.constraint_value(i, t, x[i]), dtype=float)
        jac = np.asarray(game.constraint_jacobian(i, t, x[i]), dtype=float)
        if not (np.all(np.isfinite(gi)) and np.all(np.isfinite(jac))):
            raise NumericalBlowup(i, "constraint", t)
        g[i] = gi
        v = -grad - jac.T @ state.mu[i] - k * cons[i, i]
        if not np.all(np.isfinite(v)):
            raise NumericalBlowup(i, "action velocity", t)
        ups_dot[i, i] = tangent_projection(game.boxes[i], x[i], v)
    if not np.all(np.isfinite(ups_dot)):
        bad = int(np.argwhere(~np.isfinite(ups_dot))[0][0])
        raise NumericalBlowup(bad, "estimate velocity", t)

    mu_dot = orthant_tangent_projection(state.mu, g - mu_coeff * k_mu * sign_sum)
    return Derivative(ups_dot, mu_dot)


def rhs_continuous(
    t: float,
    state: SwarmState,
    game: GameSpec,
    lap: LaplacianData,
    k_mu: float,
    gain_cap: float = math.inf,
) -> Derivative:
    """Right-hand side of the continuous-communication algorithm."""
    return _flow(t, state, game, lap, k_mu, state.upsilon, state.mu, 1.0, gain_cap)


def rhs_event(
    t: float,
    state: SwarmState,
    broadcast: TriggerState,
    game: GameSpec,
    lap: LaplacianData,
    k_mu: float,
    gain_cap: float = math.inf,
) -> Derivative:
    """Right-hand side under event-triggered communication.

    Consensus and multiplier-sign terms read the last broadcast values (with
    the sign term doubled); gradients and constraints use the live state.
    """
    return _flow(
        t, state, game, lap, k_mu, broadcast.upsilon_hat, broadcast.mu_hat, 2.0, gain_cap
    )


def step(state: SwarmState, deriv: Derivative, dt: float, game: GameSpec) -> SwarmState:
    """Projected Euler step; actions are clamped into their boxes, multipliers at zero."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = state.n_players
    idx = np.arange(n)
    ups = state.upsilon + dt * deriv.upsilon_dot
    x_new = state.x + dt * deriv.x_dot
    for i in range(n):
        x_new[i] = box_projection(game.boxes[i], x_new[i])
    ups[idx, idx] = x_new
    mu = np.maximum(0.0, state.mu + dt * deriv.mu_dot)
    return SwarmState(ups, mu)


def _check_feasible(state: SwarmState, game: GameSpec) -> None:
    x = state.x
    assert np.all(x >= game.lower) and np.all(x <= game.upper), "action left its box"
    assert np.all(state.mu >= 0), "negative multiplier"


def _constraint_bound_estimate(game: GameSpec, horizon: float) -> float:
    from .game import estimate_constants

    if game.constraint_dim == 0:
        return 0.0
    grid = np.linspace(0.0, max(horizon, 0.0), 11)
    return estimate_constants(game, grid, samples=64, seed=0).kg_hat


def simulate(
    game: GameSpec,
    topology: Topology | LaplacianData,
    config: SolverConfig,
    init: SwarmState,
    trigger_cfg: TriggerConfig | None = None,
    check_constants: bool = True,
) -> Trajectory:
    """Integrate on the fixed grid ``t_n = n * dt`` up to the horizon.

    In event-triggered mode every grid step runs: trigger checks and fires
    (ascending player order), right-hand side from the refreshed
    broadcasts, the state step, then the Euler step of the internal
    variables using the same post-fire errors.
    """
    from . import trigger as trg

    lap = topology if isinstance(topology, LaplacianData) else build_laplacian(topology)
    event_mode = config.mode == EVENT
    if event_mode and trigger_cfg is None:
        raise ValueError("event-triggered mode requires a trigger configuration")
    if lap.n_players != game.n_players:
        raise ValueError("topology and game disagree on the number of players")

    if check_constants:
        kg = _constraint_bound_estimate(game, config.horizon)
        if config.k_mu < game.n_players * kg:
            warnings.warn(
                f"k_mu={config.k_mu:g} is below N*K_g_hat={game.n_players * kg:.4g}; "
                "the regret/fit guarantees assume k_mu >= N*K_g",
                stacklevel=2,
            )

    state = init.copy()
    _check_feasible(state, game)
    n_steps = config.n_steps
    dt = config.dt
    stride = config.sample_stride
    sample_idx = list(range(0, n_steps + 1, stride))
    if sample_idx[-1] != n_steps:
        sample_idx.append(n_steps)
    m = len(sample_idx)
    n = game.n_players
    times = np.array(sample_idx, dtype=float) * dt
    ups_rec = np.empty((m,) + state.upsilon.shape)
    mu_rec = np.empty((m,) + state.mu.shape)
    beta_rec = gamma_rec = None
    trig = None
    if event_mode:
        trig = trg.TriggerState.initial(state, trigger_cfg)
        beta_rec = np.empty((m, n))
        gamma_rec = np.empty((m, n))

    rec = 0
    for step_no in range(n_steps + 1):
        t = step_no * dt
        if rec < m and sample_idx[rec] == step_no:
            ups_rec[rec] = state.upsilon
            mu_rec[rec] = state.mu
            if event_mode:
                beta_rec[rec] = trig.beta
                gamma_rec[rec] = trig.gamma
            rec += 1
        if step_no == n_steps:
            break
        if event_mode:
            fire_mask = (
                np.ones(n, dtype=bool)
                if trigger_cfg.force_fire
                else trg.trigger_mask(state, trig, lap)
            )
            for i in np.flatnonzero(fire_mask):
                trg.fire(int(i), state, trig, t)
            deriv = rhs_event(t, state, trig, game, lap, config.k_mu, config.gain_cap)
            beta_dot, gamma_dot = trg.internal_rates(state, trig, lap)
            state = step(state, deriv, dt, game)
            trig.beta = trig.beta + dt * beta_dot
            trig.gamma = trig.gamma + dt * gamma_dot
            assert np.all(trig.beta > 0) and np.all(trig.gamma > 0), "internal variable left (0, inf)"
        else:
            deriv = rhs_continuous(t, state, game, lap, config.k_mu, config.gain_cap)
            state = step(state, deriv, dt, game)
        _check_feasible(state, game)

    return Trajectory(
        times=times,
        upsilon=ups_rec,
        mu=mu_rec,
        config=config,
        beta=beta_rec,
        gamma=gamma_rec,
        event_log=list(trig.event_log) if trig is not None else [],
        trigger_config=trigger_cfg,
    )


def with_mode(config: SolverConfig, mode: str) -> SolverConfig:
    return replace(config, mode=mode)
