"""Online game definition, projection operators and sampled diagnostics.

All oracles of a :class:`GameSpec` are pure functions of ``(i, t, array)``
and broadcast over leading batch axes, so a single call can evaluate many
time instants or many profiles at once.  A full action profile is an array
of shape ``(..., N, d)``.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InfeasiblePoint",
    "BoxSet",
    "GameSpec",
    "LipschitzEstimates",
    "MonotonicityCertificate",
    "tangent_projection",
    "orthant_tangent_projection",
    "box_projection",
    "sgn",
    "gradient_check",
    "monotonicity_probe",
    "convexity_check",
    "estimate_constants",
]

BOUND_TOL = 1e-12


class InfeasiblePoint(ValueError):
    """A point handed to a tangent-cone projection lies outside its set."""


@dataclass(frozen=True)
class BoxSet:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"empty or degenerate box: lower={lo}, upper={hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x: np.ndarray, tol: float = BOUND_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sample(self, rng: np.random.Generator, size: int | tuple = ()) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        return rng.uniform(self.lower, self.upper, size=shape + (self.dim,))


def tangent_projection(box: BoxSet, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project velocity ``v`` onto the tangent cone of ``box`` at ``x``.

    Components pointing outward across an active face are zeroed; a
    coordinate counts as active when it is within ``1e-12`` of the bound.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not box.contains(x):
        raise InfeasiblePoint(f"x={x} outside box [{box.lower}, {box.upper}]")
    out = v.copy()
    at_lo = x <= box.lower + BOUND_TOL
    at_hi = x >= box.upper - BOUND_TOL
    out[at_lo] = np.maximum(out[at_lo], 0.0)
    out[at_hi] = np.minimum(out[at_hi], 0.0)
    return out


def orthant_tangent_projection(mu: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Tangent-cone projection onto the nonnegative orthant at ``mu``."""
    mu = np.asarray(mu, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(mu < 0):
        raise InfeasiblePoint(f"multiplier has negative entries: {mu}")
    return np.where(mu <= 0.0, np.maximum(w, 0.0), w)


def box_projection(box: BoxSet, y: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(y, dtype=float), box.lower, box.upper)


def sgn(v: np.ndarray) -> np.ndarray:
    """Componentwise sign with ``sgn(0) = 0``."""
    return np.sign(np.asarray(v, dtype=float))


GradientOracle = Callable[[int, "np.ndarray | float", np.ndarray], np.ndarray]


def _no_constraint(i, t, xi):
    xi = np.asarray(xi, dtype=float)
    return np.zeros(np.broadcast_shapes(np.shape(t), xi.shape[:-1]) + (0,))


def _no_constraint_jac(i, t, xi):
    xi = np.asarray(xi, dtype=float)
    batch = np.broadcast_shapes(np.shape(t), xi.shape[:-1])
    return np.zeros(batch + (0, xi.shape[-1]))


@dataclass(frozen=True)
class GameSpec:
    """An online game with ``N`` players, ``d``-dimensional actions and ``q`` coupled constraints.

    Oracle signatures (batch axes ``...`` broadcast against ``t``):

    * ``cost_gradient(i, t, upsilon_i)``: ``upsilon_i`` has shape ``(..., N, d)``
      and is player ``i``'s estimate of the whole profile; returns the partial
      gradient of ``J_i`` in ``x_i``, shape ``(..., d)``.
    * ``cost_value(i, t, x)``: ``x`` has shape ``(..., N, d)``; returns ``(...)``.
    * ``constraint_value(i, t, x_i)``: ``x_i`` has shape ``(..., d)``; returns ``(..., q)``.
    * ``constraint_jacobian(i, t, x_i)``: returns ``(..., q, d)``.
    """

    n_players: int
    action_dim: int
    constraint_dim: int
    cost_gradient: GradientOracle
    cost_value: Callable[[int, "np.ndarray | float", np.ndarray], np.ndarray]
    boxes: Sequence[BoxSet]
    constraint_value: Callable = _no_constraint
    constraint_jacobian: Callable = _no_constraint_jac
    name: str = "game"
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        boxes = tuple(self.boxes)
        if len(boxes) != self.n_players:
            raise ValueError(f"expected {self.n_players} boxes, got {len(boxes)}")
        for b in boxes:
            if b.dim != self.action_dim:
                raise ValueError(f"box dimension {b.dim} != action_dim {self.action_dim}")
        object.__setattr__(self, "boxes", boxes)

    @property
    def lower(self) -> np.ndarray:
        return np.stack([b.lower for b in self.boxes])

    @property
    def upper(self) -> np.ndarray:
        return np.stack([b.upper for b in self.boxes])

    def project(self, x: np.ndarray) -> np.ndarray:
        """Clamp a profile of shape ``(..., N, d)`` into ``Omega``."""
        return np.clip(x, self.lower, self.upper)

    def sample_profiles(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.n_players, self.action_dim))

    def pseudo_gradient(self, t, x: np.ndarray) -> np.ndarray:
        """Stacked partial gradients at the true profile ``x``, shape ``(..., N, d)``."""
        return np.stack(
            [self.cost_gradient(i, t, x) for i in range(self.n_players)], axis=-2
        )

    def constraints(self, t, x: np.ndarray) -> np.ndarray:
        """Per-player constraint values ``g_i(t, x_i)``, shape ``(..., N, q)``."""
        return np.stack(
            [self.constraint_value(i, t, x[..., i, :]) for i in range(self.n_players)],
            axis=-2,
        )

    def constraint_jacobians(self, t, x: np.ndarray) -> np.ndarray:
        """Per-player Jacobians, shape ``(..., N, q, d)``."""
        return np.stack(
            [self.constraint_jacobian(i, t, x[..., i, :]) for i in range(self.n_players)],
            axis=-3,
        )

    def costs(self, t, x: np.ndarray) -> np.ndarray:
        """All players' costs at profile ``x``, shape ``(..., N)``."""
        return np.stack([self.cost_value(i, t, x) for i in range(self.n_players)], axis=-1)


@dataclass(frozen=True)
class LipschitzEstimates:
    """Sampled lower bounds of the constants ``l``, ``K_f`` and ``K_g``."""

    l_hat: float
    kf_hat: float
    kg_hat: float
    lower_bounds: bool = True


@dataclass(frozen=True)
class MonotonicityCertificate:
    x: np.ndarray
    y: np.ndarray
    inner_product: float


def _interior_samples(game: GameSpec, rng: np.random.Generator, size: int, margin: float):
    lo, hi = game.lower, game.upper
    pad = margin * (hi - lo)
    return rng.uniform(lo + pad, hi - pad, size=(size, game.n_players, game.action_dim))


def gradient_check(
    game: GameSpec,
    samples: int = 100,
    seed: int = 0,
    step: float = 1e-6,
    t_range: tuple[float, float] = (0.0, 1.0),
) -> float:
    """Worst error of ``cost_gradient`` against central differences of ``cost_value``.

    The error is ``|fd - grad| / max(1, |grad|)`` per component so that a
    vanishing gradient is compared in absolute terms.
    """
    rng = np.random.default_rng(seed)
    n, d = game.n_players, game.action_dim
    worst = 0.0
    xs = _interior_samples(game, rng, samples, margin=0.01)
    ts = rng.uniform(*t_range, size=samples)
    for x, t in zip(xs, ts):
        for i in range(n):
            grad = np.asarray(game.cost_gradient(i, t, x), dtype=float)
            for k in range(d):
                xp, xm = x.copy(), x.copy()
                xp[i, k] += step
                xm[i, k] -= step
                fd = (float(game.cost_value(i, t, xp)) - float(game.cost_value(i, t, xm))) / (
                    2 * step
                )
                err = abs(fd - grad[k]) / max(1.0, abs(grad[k]))
                worst = max(worst, err)
    return worst


def monotonicity_probe(
    game: GameSpec, t: float, samples: int = 10_000, seed: int = 0, tol: float = 1e-9
) -> MonotonicityCertificate | None:
    """Search random pairs in ``Omega`` for a violation of monotonicity.

    Returns the first pair with ``<F(x) - F(y), x - y> < -tol`` where ``F``
    is the pseudo-gradient at time ``t``, or ``None`` if no pair is found.
    """
    rng = np.random.default_rng(seed)
    batch = 1000
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        xs = game.sample_profiles(rng, m)
        ys = game.sample_profiles(rng, m)
        fx = game.pseudo_gradient(t, xs)
        fy = game.pseudo_gradient(t, ys)
        ip = np.einsum("bnd,bnd->b", fx - fy, xs - ys)
        bad = np.flatnonzero(ip < -tol)
        if bad.size:
            b = int(bad[0])
            return MonotonicityCertificate(x=xs[b], y=ys[b], inner_product=float(ip[b]))
        done += m
    return None


def convexity_check(
    game: GameSpec, t: float = 0.0, samples: int = 100, seed: int = 0, tol: float = 1e-9
) -> list[tuple[int, float]]:
    """Midpoint convexity test of each ``J_i`` in ``x_i`` along random segments.

    Returns ``(player, excess)`` for every segment where
    ``J(mid) - (J(a) + J(b)) / 2`` exceeds ``tol``; empty means no violation seen.
    """
    rng = np.random.default_rng(seed)
    violations = []
    for _ in range(samples):
        base = game.sample_profiles(rng, 1)[0]
        for i in range(game.n_players):
            a, b = base.copy(), base.copy()
            b[i] = game.boxes[i].sample(rng)
            mid = base.copy()
            mid[i] = 0.5 * (a[i] + b[i])
            excess = float(game.cost_value(i, t, mid)) - 0.5 * (
                float(game.cost_value(i, t, a)) + float(game.cost_value(i, t, b))
            )
            if excess > tol:
                violations.append((i, excess))
    return violations


def _box_vertices(game: GameSpec, limit: int = 4096) -> np.ndarray | None:
    nd = game.n_players * game.action_dim
    if 2**nd > limit:
        return None
    lo, hi = game.lower.ravel(), game.upper.ravel()
    verts = np.array(list(itertools.product((0, 1), repeat=nd)), dtype=bool)
    pts = np.where(verts, hi, lo)
    return pts.reshape(-1, game.n_players, game.action_dim)


def estimate_constants(
    game: GameSpec,
    time_grid: np.ndarray,
    samples: int = 200,
    seed: int = 0,
) -> LipschitzEstimates:
    """Sampled estimates of ``K_f``, ``K_g`` and the gradient Lipschitz constant.

    Profiles are drawn uniformly from ``Omega`` and augmented with the box
    vertices (when there are at most 4096), evaluated on every time in
    ``time_grid``.  Each value is a lower bound of the true constant.
    """
    rng = np.random.default_rng(seed)
    grid = np.atleast_1d(np.asarray(time_grid, dtype=float))
    pts = game.sample_profiles(rng, samples)
    verts = _box_vertices(game)
    if verts is not None:
        pts = np.concatenate([pts, verts])
    kf = 0.0
    kg = 0.0
    for t in grid:
        kf = max(kf, float(np.max(np.abs(game.costs(t, pts)))))
        if game.constraint_dim:
            g = game.constraints(t, pts)
            kg = max(kg, float(np.max(np.linalg.norm(g, axis=-1))))

    # Difference quotients of each player's partial gradient in the full
    # profile argument, over random pairs at random grid times.
    xs = game.sample_profiles(rng, samples)
    ys = game.sample_profiles(rng, samples)
    ts = grid[rng.integers(0, grid.size, size=samples)]
    dist = np.linalg.norm((xs - ys).reshape(samples, -1), axis=1)
    l_hat = 0.0
    for i in range(game.n_players):
        gx = game.cost_gradient(i, ts, xs)
        gy = game.cost_gradient(i, ts, ys)
        q = np.linalg.norm(gx - gy, axis=-1) / np.maximum(dist, 1e-300)
        l_hat = max(l_hat, float(np.max(q)))
    return LipschitzEstimates(l_hat=l_hat, kf_hat=kf, kg_hat=kg)
