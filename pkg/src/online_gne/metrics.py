"""Regret and fit of simulated trajectories, a reference GNE oracle and bound evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory
from .game import GameSpec, LipschitzEstimates
from .graph import LaplacianData
from .trigger import TriggerConfig

__all__ = [
    "NoConvergence",
    "ReferencePoint",
    "MetricSeries",
    "BoundReport",
    "Trajectory",
    "cumulative_trapezoid",
    "regret",
    "fit",
    "metric_series",
    "gne_oracle",
    "vi_residual",
    "bound_check",
]

ORACLE_TOL = 1e-4


class NoConvergence(RuntimeError):
    """The oracle's best point misses the residual tolerance.

    The point is still attached as ``reference`` for callers willing to use
    it with a reference-uncertain flag.
    """

    def __init__(self, reference: ReferencePoint):
        self.reference = reference
        super().__init__(
            f"GNE oracle residual {reference.residual:.3e} exceeds {ORACLE_TOL:g}"
        )


@dataclass(frozen=True)
class ReferencePoint:
    x_star: np.ndarray  # (N, d)
    provenance: str  # "analytic" | "oracle"
    residual: float = 0.0
    multiplier: np.ndarray | None = None
    max_violation: float | None = None  # max over the grid of sum_i g_i(t, x*_i), per component max
    converged: bool = True

    @property
    def upsilon_star(self) -> np.ndarray:
        """``1_N (x) x*`` as an ``(N, N, d)`` array."""
        n = self.x_star.shape[0]
        return np.broadcast_to(self.x_star, (n,) + self.x_star.shape).copy()


@dataclass(frozen=True)
class MetricSeries:
    times: np.ndarray
    regret: np.ndarray
    fit_components: np.ndarray  # (m, q)
    fit: np.ndarray
    fit_over_sqrt_t: np.ndarray

    def __len__(self) -> int:
        return self.times.shape[0]


def cumulative_trapezoid(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Running trapezoidal integral along axis 0, starting at 0."""
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    if values.shape[0] > 1:
        h = np.diff(times).reshape((-1,) + (1,) * (values.ndim - 1))
        out[1:] = np.cumsum(0.5 * h * (values[1:] + values[:-1]), axis=0)
    return out


def regret_integrand(times: np.ndarray, x: np.ndarray, game: GameSpec, ref: ReferencePoint):
    """``sum_i J_i(t, x_i(t), x*_-i) - J_i(t, x*)`` at every sample time."""
    m = times.shape[0]
    xs = np.broadcast_to(ref.x_star, (m,) + ref.x_star.shape)
    total = np.zeros(m)
    for i in range(game.n_players):
        mixed = xs.copy()
        mixed[:, i] = x[:, i]
        total += game.cost_value(i, times, mixed) - game.cost_value(i, times, xs)
    return total


def regret(traj: Trajectory, game: GameSpec, ref: ReferencePoint) -> np.ndarray:
    """Running regret against the fixed reference; each player is scored
    with its own running action and everyone else at the reference."""
    integrand = regret_integrand(traj.times, traj.x, game, ref)
    return cumulative_trapezoid(integrand, traj.times)


def fit(traj: Trajectory, game: GameSpec):
    """Running constraint integrals, the fit and fit divided by sqrt(t).

    Returns ``(components, fit, fit_over_sqrt_t)``; the last is 0 at ``t = 0``.
    """
    g = game.constraints(traj.times, traj.x).sum(axis=-2)  # (m, q)
    comps = cumulative_trapezoid(g, traj.times)
    total = np.sqrt(np.sum(np.maximum(comps, 0.0) ** 2, axis=-1))
    root = np.sqrt(traj.times)
    over = np.divide(total, root, out=np.zeros_like(total), where=root > 0)
    return comps, total, over


def metric_series(traj: Trajectory, game: GameSpec, ref: ReferencePoint) -> MetricSeries:
    """All metric series; empty when the trajectory has fewer than two samples."""
    if traj.times.shape[0] < 2:
        empty = np.zeros(0)
        return MetricSeries(empty, empty, np.zeros((0, game.constraint_dim)), empty, empty)
    comps, total, over = fit(traj, game)
    return MetricSeries(traj.times, regret(traj, game, ref), comps, total, over)


# --- reference GNE -----------------------------------------------------------


class _AveragedGame:
    """Time-averaged pseudo-gradient and coupled constraint over a grid."""

    def __init__(self, game: GameSpec, time_grid: np.ndarray, scale: np.ndarray | None = None):
        self.game = game
        self.t = np.asarray(time_grid, dtype=float)
        self.shape = (game.n_players, game.action_dim)
        # positive row scaling of the constraint; leaves the solution set unchanged
        self.scale = np.ones(game.constraint_dim) if scale is None else scale

    def _batch(self, x):
        return np.broadcast_to(x.reshape(self.shape), (self.t.size,) + self.shape)

    def pseudo_gradient(self, x):
        return self.game.pseudo_gradient(self.t, self._batch(x)).mean(axis=0).ravel()

    def constraint(self, x):
        g = self.game.constraints(self.t, self._batch(x))  # (m, N, q)
        return self.scale * g.sum(axis=1).mean(axis=0)

    def constraint_jacobian(self, x):
        jac = self.game.constraint_jacobians(self.t, self._batch(x))  # (m, N, q, d)
        jac = jac.mean(axis=0)  # (N, q, d)
        flat = np.transpose(jac, (1, 0, 2)).reshape(self.game.constraint_dim, -1)
        return self.scale[:, None] * flat


def vi_residual(game: GameSpec, time_grid: np.ndarray, x: np.ndarray, lam: np.ndarray | None = None) -> float:
    """Natural-map residual of the time-averaged KKT system at ``(x, lam)``.

    Combines ``||x - P_Omega(x - F(x) - dg(x)^T lam)||`` with the
    complementarity part ``||lam - max(0, lam + g(x))||``.
    """
    avg = _AveragedGame(game, time_grid)
    return _residual(avg, game, np.asarray(x, float).ravel(), _lam_or_zero(game, lam))


def _lam_or_zero(game, lam):
    return np.zeros(game.constraint_dim) if lam is None else np.asarray(lam, float).ravel()


def _residual(avg: _AveragedGame, game: GameSpec, x: np.ndarray, lam: np.ndarray) -> float:
    lo, hi = game.lower.ravel(), game.upper.ravel()
    field_x = avg.pseudo_gradient(x)
    if game.constraint_dim:
        field_x = field_x + avg.constraint_jacobian(x).T @ lam
        r_lam = lam - np.maximum(0.0, lam + avg.constraint(x))
    else:
        r_lam = np.zeros(0)
    r_x = x - np.clip(x - field_x, lo, hi)
    return float(math.sqrt(r_x @ r_x + r_lam @ r_lam))


def _extragradient(avg, game, x0, rho, max_iter, tol):
    """Projected extragradient on the augmented-Lagrangian saddle operator
    with a backtracking step (Khobotov-type rule)."""
    lo, hi = game.lower.ravel(), game.upper.ravel()
    q = game.constraint_dim
    nd = x0.size

    def operator(z):
        x, lam = z[:nd], z[nd:]
        fx = avg.pseudo_gradient(x)
        if q == 0:
            return fx
        lam_plus = np.maximum(0.0, lam + rho * avg.constraint(x))
        return np.concatenate([fx + avg.constraint_jacobian(x).T @ lam_plus, (lam - lam_plus) / rho])

    def project(z):
        return np.concatenate([np.clip(z[:nd], lo, hi), np.maximum(z[nd:], 0.0)])

    z = np.concatenate([x0, np.zeros(q)])
    s = 0.1
    nu = 0.9
    phi = operator(z)
    for it in range(max_iter):
        while True:
            z_half = project(z - s * phi)
            phi_half = operator(z_half)
            gap = np.linalg.norm(z - z_half)
            if s * np.linalg.norm(phi - phi_half) <= nu * gap or gap == 0.0:
                break
            s *= 0.5
        z = project(z - s * phi_half)
        phi = operator(z)
        if it % 25 == 0 and _residual(avg, game, z[:nd], z[nd:]) < tol:
            break
        s *= 1.05
    return z[:nd], z[nd:]


def gne_oracle(
    game: GameSpec,
    time_grid: np.ndarray,
    attempts: int = 4,
    seed: int = 0,
    *,
    rho: float = 1.0,
    max_iter: int = 20_000,
    tol: float = 1e-10,
    strict: bool = True,
) -> ReferencePoint:
    """Stationary point of the time-averaged generalized game.

    Solves for ``x`` in ``Omega`` and ``lam >= 0`` with the averaged
    pseudo-gradient and averaged coupled constraint ``sum_i g_i <= 0``
    (a variational GNE of the averaged game), by projected extragradient
    from ``attempts`` starts: the box centers first, then seeded uniform
    draws.  The best start by residual is returned.

    Raises:
        NoConvergence: if ``strict`` and the best residual exceeds ``1e-4``.
    """
    grid = np.atleast_1d(np.asarray(time_grid, dtype=float))
    centers = np.stack([b.center for b in game.boxes]).ravel()
    scale = None
    if game.constraint_dim:
        rows = _AveragedGame(game, grid).constraint_jacobian(centers)
        scale = 1.0 / np.maximum(1.0, np.linalg.norm(rows, axis=1))
    avg = _AveragedGame(game, grid, scale)
    rng = np.random.default_rng(seed)
    starts = [centers]
    for _ in range(max(attempts, 1) - 1):
        starts.append(game.sample_profiles(rng, 1)[0].ravel())

    best = None
    for x0 in starts:
        x, lam = _extragradient(avg, game, x0, rho, max_iter, tol)
        res = _residual(avg, game, x, lam)
        if best is None or res < best[0]:
            best = (res, x, lam)
        if res < tol:
            break
    res, x, lam = best
    if scale is not None:
        lam = lam * scale  # multiplier of the unscaled constraint
        res = _residual(_AveragedGame(game, grid), game, x, lam)
    x_star = x.reshape(game.n_players, game.action_dim)
    max_viol = None
    if game.constraint_dim:
        per_t = game.constraints(grid, np.broadcast_to(x_star, (grid.size,) + x_star.shape))
        max_viol = per_t.sum(axis=1).max(axis=0)
    ref = ReferencePoint(
        x_star=x_star,
        provenance="oracle",
        residual=res,
        multiplier=lam,
        max_violation=max_viol,
        converged=res <= ORACLE_TOL,
    )
    if strict and not ref.converged:
        raise NoConvergence(ref)
    return ref


# --- theoretical bounds ------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    mode: str
    horizon: float
    regret_measured: float
    fit_measured: float
    regret_bound: float
    fit_bound: float
    delta_hat: float
    upsilon_gap: float
    lambda2: float
    constants: LipschitzEstimates
    label: str = "estimate"

    @property
    def regret_ratio(self) -> float:
        return self.regret_measured / self.regret_bound if self.regret_bound > 0 else math.inf

    @property
    def fit_ratio(self) -> float:
        return self.fit_measured / self.fit_bound if self.fit_bound > 0 else math.inf

    @property
    def regret_ok(self) -> bool:
        return self.regret_measured <= self.regret_bound

    @property
    def fit_ok(self) -> bool:
        return self.fit_measured <= self.fit_bound


def regret_bound_continuous(gap: float, l: float, delta: float, lam2: float) -> float:
    return 0.5 * gap**2 + (l * delta) ** 2 / (4.0 * lam2)


def fit_bound_continuous(n: int, kf: float, horizon: float, gap: float, l: float, delta: float, lam2: float) -> float:
    return 2 * n * math.sqrt(kf * horizon) + math.sqrt(n) * gap + l * delta * math.sqrt(n) / (2 * math.sqrt(lam2))


def event_regret_offset(k_mu: float, gamma0_sum: float, beta0_sum: float) -> float:
    """Extra regret allowance from the initial internal variables."""
    return k_mu / 4.0 * gamma0_sum + beta0_sum / 8.0


def regret_bound_event(gap, l, delta, lam2, k_mu, gamma0_sum, beta0_sum) -> float:
    return 0.5 * gap**2 + event_regret_offset(k_mu, gamma0_sum, beta0_sum) + (l * delta) ** 2 / (2.0 * lam2)


def fit_bound_event(n, kf, horizon, gap, l, delta, lam2, k_mu, gamma0_sum, beta0_sum) -> float:
    return (
        math.sqrt(n) * gap
        + math.sqrt(k_mu * n / 2.0 * gamma0_sum + n / 4.0 * beta0_sum)
        + 2 * n * math.sqrt(kf * horizon)
        + l * delta * math.sqrt(n / lam2)
    )


def bound_check(
    traj: Trajectory,
    game: GameSpec,
    lap: LaplacianData,
    ref: ReferencePoint,
    estimates: LipschitzEstimates,
    trig_cfg: TriggerConfig | None = None,
    series: MetricSeries | None = None,
) -> BoundReport:
    """Evaluate the regret/fit bounds with measured and sampled quantities.

    ``delta_hat`` is the largest distance of the trajectory from the
    reference.  The sampled constants are lower bounds of the true ones, so
    the bounds are estimates and a violation is reported rather than raised.
    """
    if series is None:
        series = metric_series(traj, game, ref)
    n = game.n_players
    horizon = float(traj.times[-1])
    gap = float(np.linalg.norm(traj.upsilon[0] - ref.upsilon_star))
    delta = float(np.max(np.linalg.norm((traj.x - ref.x_star).reshape(len(traj.times), -1), axis=1)))
    l, kf, lam2 = estimates.l_hat, estimates.kf_hat, lap.lambda2
    k_mu = traj.config.k_mu
    r_meas = float(series.regret[-1]) if len(series) else 0.0
    f_meas = float(series.fit[-1]) if len(series) else 0.0
    if trig_cfg is None:
        mode = "continuous"
        rb = regret_bound_continuous(gap, l, delta, lam2)
        fb = fit_bound_continuous(n, kf, horizon, gap, l, delta, lam2)
    else:
        mode = "event"
        gs, bs = n * trig_cfg.gamma0, n * trig_cfg.beta0
        rb = regret_bound_event(gap, l, delta, lam2, k_mu, gs, bs)
        fb = fit_bound_event(n, kf, horizon, gap, l, delta, lam2, k_mu, gs, bs)
    return BoundReport(
        mode=mode,
        horizon=horizon,
        regret_measured=r_meas,
        fit_measured=f_meas,
        regret_bound=rb,
        fit_bound=fb,
        delta_hat=delta,
        upsilon_gap=gap,
        lambda2=lam2,
        constants=estimates,
    )
