"""Undirected weighted communication graphs and their Laplacian data."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "DisconnectedGraph",
    "Topology",
    "LaplacianData",
    "build_laplacian",
    "neighbor_set",
    "ring",
    "complete",
]

CONNECTIVITY_TOL = 1e-9


class DisconnectedGraph(ValueError):
    """Raised when the algebraic connectivity is not strictly positive."""


@dataclass(frozen=True)
class Topology:
    """Symmetric nonnegative weight matrix over ``n_players`` nodes.

    Nodes are 0-based internally; the scenario files and the CLI use
    1-based player labels.
    """

    n_players: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.n_players, self.n_players):
            raise ValueError(
                f"weights must be {self.n_players}x{self.n_players}, got {w.shape}"
            )
        if np.any(w < 0):
            raise ValueError("edge weights must be nonnegative")
        if not np.array_equal(w, w.T):
            raise ValueError("weights must be symmetric (undirected graph)")
        if np.any(np.diag(w) != 0):
            raise ValueError("self loops are not allowed")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(
        cls, n_players: int, edges: Iterable[tuple[int, int] | tuple[int, int, float]]
    ) -> Topology:
        """Build from 0-based ``(i, j)`` or ``(i, j, w)`` tuples."""
        w = np.zeros((n_players, n_players))
        for edge in edges:
            i, j = int(edge[0]), int(edge[1])
            a = float(edge[2]) if len(edge) > 2 else 1.0
            if not (0 <= i < n_players and 0 <= j < n_players):
                raise IndexError(f"edge ({i}, {j}) out of range for {n_players} nodes")
            if i == j:
                raise ValueError(f"self loop on node {i}")
            w[i, j] = w[j, i] = a
        return cls(n_players, w)

    def edges(self) -> list[tuple[int, int, float]]:
        """Upper-triangular edge list ``(i, j, a_ij)`` with ``i < j``."""
        iu, ju = np.nonzero(np.triu(self.weights))
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(iu, ju)]


@dataclass(frozen=True)
class LaplacianData:
    laplacian: np.ndarray
    degrees: np.ndarray
    lambda2: float

    @cached_property
    def adjacency(self) -> np.ndarray:
        return np.diag(self.degrees) - self.laplacian

    @property
    def n_players(self) -> int:
        return self.laplacian.shape[0]


def build_laplacian(topology: Topology) -> LaplacianData:
    """Laplacian ``L = D - A``, the degree vector and the algebraic connectivity.

    Raises:
        DisconnectedGraph: if the second smallest eigenvalue is ``<= 1e-9``.
    """
    a = topology.weights
    degrees = a.sum(axis=1)
    lap = np.diag(degrees) - a
    n = topology.n_players
    if n == 1:
        # A single player has no one to disagree with; treat as trivially
        # connected with lambda2 = +inf so bound terms vanish.
        lam2 = float("inf")
    else:
        eig = np.linalg.eigvalsh(lap)
        lam2 = float(eig[1])
        if lam2 <= CONNECTIVITY_TOL:
            raise DisconnectedGraph(f"graph is disconnected (lambda2 = {lam2:.3e})")
    lap.setflags(write=False)
    degrees.setflags(write=False)
    return LaplacianData(laplacian=lap, degrees=degrees, lambda2=lam2)


def neighbor_set(topology: Topology, i: int) -> list[int]:
    """Neighbors ``{j : a_ij > 0}`` of 0-based node ``i``."""
    if not 0 <= i < topology.n_players:
        raise IndexError(f"player index {i} out of range [0, {topology.n_players})")
    return [int(j) for j in np.flatnonzero(topology.weights[i] > 0)]


def ring(n: int, weight: float = 1.0) -> Topology:
    if n < 2:
        raise ValueError(f"ring requires n >= 2, got {n}")
    if n == 2:
        return Topology.from_edges(2, [(0, 1, weight)])
    return Topology.from_edges(n, [(i, (i + 1) % n, weight) for i in range(n)])


def complete(n: int, weight: float = 1.0) -> Topology:
    return Topology.from_edges(
        n, [(i, j, weight) for i in range(n) for j in range(i + 1, n)]
    )
