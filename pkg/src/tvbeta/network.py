"""Dynamic directed networks and the directed beta-model edge probabilities.

A :class:`DynamicNetwork` holds ``N`` binary adjacency snapshots over a
common node set ``0..n-1`` observed at times ``T_1 <= ... <= T_N`` inside a
window ``[a, b]``.  Parameters follow the directed beta-model: node ``i``
sends with effect ``alpha_i`` and receives with effect ``beta_i``, and the
last receiver effect is pinned to zero for identifiability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .exceptions import DomainError

__all__ = [
    "DynamicNetwork",
    "ParamVector",
    "ParamTrajectory",
    "edge_prob",
    "edge_prob_matrix",
    "degrees",
    "validate",
]


def edge_prob(alpha_i: float, beta_j: float) -> float:
    """Probability of an ``i -> j`` edge, ``e^(a+b) / (1 + e^(a+b))``.

    Evaluated with a sign branch so that neither ``exp`` call can overflow.
    """
    if not (math.isfinite(alpha_i) and math.isfinite(beta_j)):
        raise DomainError(f"non-finite parameter: alpha={alpha_i!r}, beta={beta_j!r}")
    x = alpha_i + beta_j
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def edge_prob_matrix(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """All pairwise edge probabilities as an ``n x n`` array, zero diagonal.

    ``beta`` may be of length ``n`` or ``n - 1`` (the free view, in which
    case the pinned zero is appended).
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if beta.shape[0] == alpha.shape[0] - 1:
        beta = np.append(beta, 0.0)
    P = expit(alpha[:, None] + beta[None, :])
    np.fill_diagonal(P, 0.0)
    return P


def degrees(snapshot) -> tuple[np.ndarray, np.ndarray]:
    """Out- and in-degrees of one binary snapshot.

    Returns
    -------
    out_degrees, in_degrees : ndarray of int
        Row sums and column sums, ignoring the diagonal.
    """
    A = np.asarray(snapshot)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"snapshot must be square, got shape {A.shape}")
    A = A.astype(np.int64, copy=True)
    np.fill_diagonal(A, 0)
    return A.sum(axis=1), A.sum(axis=0)


@dataclass(frozen=True, eq=False)
class DynamicNetwork:
    """Time-indexed binary adjacency snapshots on a common node set.

    Parameters
    ----------
    snapshots : array_like, shape (N, n, n)
        Binary adjacency matrices; ``snapshots[l, i, j] == 1`` iff ``i -> j``
        at time ``times[l]``.
    times : array_like, shape (N,)
        Observation times.  Snapshots are reordered so that times are
        non-decreasing (stable sort).
    window : (a, b), optional
        Observation window.  Defaults to ``(min(times), max(times))``.

    Notes
    -----
    Construction does not enforce the model invariants; call :func:`validate`
    for a list of violations.
    """

    snapshots: np.ndarray
    times: np.ndarray
    window: tuple[float, float] = field(default=None)

    def __post_init__(self):
        A = np.asarray(self.snapshots)
        if A.ndim == 2:
            A = A[None]
        T = np.atleast_1d(np.asarray(self.times, dtype=float))
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise DomainError(f"snapshots must have shape (N, n, n), got {A.shape}")
        if A.shape[0] != T.shape[0]:
            raise DomainError(f"{A.shape[0]} snapshots but {T.shape[0]} times")
        order = np.argsort(T, kind="stable")
        A = np.ascontiguousarray(A[order])
        T = T[order]
        A.setflags(write=False)
        T.setflags(write=False)
        window = self.window
        if window is None:
            window = (float(T.min()), float(T.max())) if T.size else (0.0, 1.0)
        object.__setattr__(self, "snapshots", A)
        object.__setattr__(self, "times", T)
        object.__setattr__(self, "window", (float(window[0]), float(window[1])))

    @classmethod
    def from_edge_lists(
        cls,
        n: int,
        edge_lists: Sequence[Iterable[tuple[int, int]]],
        times,
        window=None,
    ) -> "DynamicNetwork":
        """Build dense snapshots from per-snapshot ``(src, dst)`` lists (0-based)."""
        A = np.zeros((len(edge_lists), n, n), dtype=np.uint8)
        for ell, edges in enumerate(edge_lists):
            for i, j in edges:
                A[ell, i, j] = 1
        return cls(A, times, window)

    @property
    def n(self) -> int:
        return self.snapshots.shape[1]

    @property
    def N(self) -> int:
        return self.snapshots.shape[0]

    @cached_property
    def out_degrees(self) -> np.ndarray:
        """Out-degrees, shape (N, n)."""
        A = self.snapshots.astype(np.int64)
        idx = np.arange(self.n)
        return A.sum(axis=2) - A[:, idx, idx]

    @cached_property
    def in_degrees(self) -> np.ndarray:
        """In-degrees, shape (N, n)."""
        A = self.snapshots.astype(np.int64)
        idx = np.arange(self.n)
        return A.sum(axis=1) - A[:, idx, idx]

    def subset(self, mask) -> "DynamicNetwork":
        """Network restricted to the snapshots selected by ``mask``."""
        mask = np.asarray(mask)
        return DynamicNetwork(self.snapshots[mask], self.times[mask], self.window)


def validate(net: DynamicNetwork) -> list[str]:
    """List every violated invariant of ``net``; empty when well formed."""
    problems = []
    a, b = net.window
    if not a < b:
        problems.append(f"window: a={a} must be < b={b}")
    if net.N < 1:
        problems.append("count: at least one snapshot is required")
    if net.n < 2:
        problems.append(f"nodes: n={net.n} must be >= 2")
    if np.any(np.diff(net.times) < 0):
        problems.append("order: times are not non-decreasing")
    for ell in range(net.N):
        A = net.snapshots[ell]
        if not np.isin(A, (0, 1)).all():
            problems.append(f"snapshot {ell}: binary rule violated (entries outside {{0,1}})")
        if np.any(np.diagonal(A) != 0):
            problems.append(f"snapshot {ell}: diagonal rule violated (self-loop present)")
        t = net.times[ell]
        if not (np.isfinite(t) and a <= t <= b):
            problems.append(f"snapshot {ell}: window rule violated (time {t} outside [{a}, {b}])")
    return problems


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Sender effects ``alpha`` (length n) and receiver effects ``beta``.

    ``beta`` always has length ``n`` with ``beta[-1] == 0``.
    """

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        beta = np.array(self.beta, dtype=float)
        n = alpha.shape[0]
        if beta.shape[0] == n - 1:
            beta = np.append(beta, 0.0)
        if beta.shape != (n,):
            raise DomainError(f"beta must have length {n} or {n - 1}, got {beta.shape}")
        if beta[-1] != 0.0:
            raise DomainError("identifiability: the last receiver effect must be 0")
        if not (np.isfinite(alpha).all() and np.isfinite(beta).all()):
            raise DomainError("parameters must be finite")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def from_theta(cls, theta) -> "ParamVector":
        """Expand the free vector ``(alpha_1..alpha_n, beta_1..beta_{n-1})``."""
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or theta.shape[0] % 2 != 1:
            raise DomainError(f"free vector must have odd length 2n-1, got {theta.shape}")
        n = (theta.shape[0] + 1) // 2
        return cls(theta[:n], theta[n:])

    @classmethod
    def zeros(cls, n: int) -> "ParamVector":
        return cls(np.zeros(n), np.zeros(n))

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def theta(self) -> np.ndarray:
        """The free view of length ``2n - 1``."""
        return np.concatenate([self.alpha, self.beta[:-1]])

    def prob_matrix(self) -> np.ndarray:
        return edge_prob_matrix(self.alpha, self.beta)


@dataclass(frozen=True, eq=False)
class ParamTrajectory:
    """Free parameter vectors evaluated on a strictly increasing time grid.

    ``theta[k]`` is the free view at ``grid[k]``.  ``provenance`` is one of
    ``"smoothed"``, ``"pointwise"``, ``"smoothed-pointwise"``, ``"truth"``.
    Rows may be NaN where a fit does not exist.
    """

    grid: np.ndarray
    theta: np.ndarray
    provenance: str = "smoothed"

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.grid, dtype=float))
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[None]
        if theta.shape[0] != grid.shape[0]:
            raise DomainError(f"{grid.shape[0]} grid points but {theta.shape[0]} parameter rows")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "theta", theta)

    def __len__(self):
        return self.grid.shape[0]

    @property
    def n(self) -> int:
        return (self.theta.shape[1] + 1) // 2

    @property
    def params(self) -> list[ParamVector]:
        return [ParamVector.from_theta(row) for row in self.theta]

    @property
    def alpha(self) -> np.ndarray:
        """Sender curves, shape (len(grid), n)."""
        return self.theta[:, : self.n]

    @property
    def beta(self) -> np.ndarray:
        """Receiver curves including the pinned zero, shape (len(grid), n)."""
        return np.hstack([self.theta[:, self.n :], np.zeros((len(self), 1))])
