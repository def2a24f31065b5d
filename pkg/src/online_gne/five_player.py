"""Built-in five-player benchmark with two-dimensional actions.

Each player tracks an oscillating target with a weighted quadratic and is
bilinearly coupled to one partner through ``M = [[5, 1], [-1, 5]]``; the
coupled constraint is the sum of time-varying linear functions of each
player's own action.  Every action set is ``[-1, 6] x [-1, 6]``.
"""

from __future__ import annotations

import numpy as np

from .game import BoxSet, GameSpec

N_PLAYERS = 5
ACTION_DIM = 2
CONSTRAINT_DIM = 1
BOX_LOWER = -1.0
BOX_UPPER = 6.0
K_MU = 10.0
INIT_RANGE = (-5.0, 0.0)

COUPLING = np.array([[5.0, 1.0], [-1.0, 5.0]])
# tracking weights (a, b) per player
WEIGHTS = np.array([[2.0, 2.0], [1.0, 2.0], [3.0, 1.0], [1.0, 3.0], [0.5, 2.0]])
# 0-based partner and sign of the bilinear coupling x_i^T M x_partner
PARTNER = (4, 3, 3, 1, 0)
SIGN = (1.0, 1.0, 1.0, -1.0, -1.0)
# constraint offsets
OFFSET = (2.0, 4.0, 3.5, 3.2, 3.0)


def _targets(i: int, t) -> tuple:
    t = np.asarray(t, dtype=float)
    c = np.cos
    if i == 0:
        return 2 * c(10 * t) + 1, c(15 * t) + 1.5
    if i == 1:
        return c(20 * t) + 1, 2 * c(17 * t) + 3
    if i == 2:
        return c(20 * t) + 3, c(10 * t) + 1
    if i == 3:
        return 3 * c(10 * t) + 2, c(20 * t) + 2
    return c(15 * t) + 1, 3 * c(15 * t) + 1


def _constraint_coeffs(i: int, t) -> tuple:
    t = np.asarray(t, dtype=float)
    s = np.sin
    if i == 0:
        return 3 * s(1.5 * t) + 17, 2 * s(t) + 18
    if i == 1:
        return 4 * s(2 * t) + 16, 4 * s(2 * t) + 16
    if i == 2:
        return 5 * s(t) + 15, 6 * s(2.5 * t) + 14
    if i == 3:
        return 6 * s(1.5 * t) + 14, 8 * s(1.5 * t) + 12
    return 7 * s(t) + 13, 5 * s(t) + 15


def cost_value(i: int, t, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    ca, cb = _targets(i, t)
    wa, wb = WEIGHTS[i]
    xi = x[..., i, :]
    xp = x[..., PARTNER[i], :]
    track = wa * (xi[..., 0] - ca) ** 2 + wb * (xi[..., 1] - cb) ** 2
    bilinear = np.einsum("...k,kl,...l->...", xi, COUPLING, xp)
    return track + SIGN[i] * bilinear


def cost_gradient(i: int, t, upsilon_i: np.ndarray) -> np.ndarray:
    u = np.asarray(upsilon_i, dtype=float)
    ca, cb = _targets(i, t)
    wa, wb = WEIGHTS[i]
    xi = u[..., i, :]
    xp = u[..., PARTNER[i], :]
    ga = 2 * wa * (xi[..., 0] - ca)
    gb = 2 * wb * (xi[..., 1] - cb)
    return np.stack([ga, gb], axis=-1) + SIGN[i] * (xp @ COUPLING.T)


def constraint_value(i: int, t, x_i: np.ndarray) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=float)
    pa, pb = _constraint_coeffs(i, t)
    return (pa * x_i[..., 0] + pb * x_i[..., 1] - OFFSET[i])[..., None]


def constraint_jacobian(i: int, t, x_i: np.ndarray) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=float)
    pa, pb = _constraint_coeffs(i, t)
    batch = np.broadcast_shapes(np.shape(t), x_i.shape[:-1])
    jac = np.empty(batch + (1, 2))
    jac[..., 0, 0] = pa
    jac[..., 0, 1] = pb
    return jac


def make_game() -> GameSpec:
    box = BoxSet(np.full(ACTION_DIM, BOX_LOWER), np.full(ACTION_DIM, BOX_UPPER))
    return GameSpec(
        n_players=N_PLAYERS,
        action_dim=ACTION_DIM,
        constraint_dim=CONSTRAINT_DIM,
        cost_gradient=cost_gradient,
        cost_value=cost_value,
        constraint_value=constraint_value,
        constraint_jacobian=constraint_jacobian,
        boxes=[box] * N_PLAYERS,
        name="paper5",
    )
