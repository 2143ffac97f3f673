"""Structured bi-degree Jacobians, their approximate inverse, and exact solves.

The Jacobians of the directed beta-model estimating equations have the block
form::

    V = [[diag(a),  C      ],
         [C^T,      diag(b)]]

with ``a`` (length n) the row sums of the non-negative ``n x (n-1)`` cross
block ``C`` plus the contribution of the pinned last receiver, ``b`` (length
n-1) the column sums of ``C``, and ``C[i, i] == 0``.  Only these blocks are
stored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import ClassViolation, SingularJacobianError

__all__ = ["StructuredJacobian", "class_bounds", "approx_inverse", "solve"]


@dataclass(frozen=True, eq=False)
class StructuredJacobian:
    """Non-zero blocks of a ``(2n-1) x (2n-1)`` bi-degree matrix.

    Attributes
    ----------
    diag_alpha : ndarray, shape (n,)
    diag_beta : ndarray, shape (n-1,)
    cross : ndarray, shape (n, n-1)
        ``cross[i, j]`` is the entry in row ``i``, column ``n + j``.
    """

    diag_alpha: np.ndarray
    diag_beta: np.ndarray
    cross: np.ndarray

    @classmethod
    def from_pair_weights(cls, W, scale: float = 1.0) -> "StructuredJacobian":
        """Assemble from an ``n x n`` matrix of pair weights (zero diagonal).

        The sender diagonal sums each full row of ``W`` (the pinned receiver
        column included); the receiver diagonal sums the free columns.
        """
        W = np.asarray(W, dtype=float)
        cross = W[:, :-1] * scale
        return cls(
            diag_alpha=W.sum(axis=1) * scale,
            diag_beta=cross.sum(axis=0),
            cross=cross,
        )

    @property
    def n(self) -> int:
        return self.diag_alpha.shape[0]

    @property
    def size(self) -> int:
        return 2 * self.n - 1

    @property
    def diagonal(self) -> np.ndarray:
        return np.concatenate([self.diag_alpha, self.diag_beta])

    @property
    def augmented(self) -> np.ndarray:
        """``v_{2n,i} = v_{ii} - sum_{j != i} v_{ij}`` for every row ``i``."""
        return np.concatenate([
            self.diag_alpha - self.cross.sum(axis=1),
            self.diag_beta - self.cross.sum(axis=0),
        ])

    @property
    def corner(self) -> float:
        """``v_{2n,2n}``, the sum of the augmented row."""
        return float(self.augmented.sum())

    def scaled(self, c: float) -> "StructuredJacobian":
        return StructuredJacobian(self.diag_alpha * c, self.diag_beta * c, self.cross * c)

    def dense(self) -> np.ndarray:
        n = self.n
        V = np.zeros((2 * n - 1, 2 * n - 1))
        V[np.arange(2 * n - 1), np.arange(2 * n - 1)] = self.diagonal
        V[:n, n:] = self.cross
        V[n:, :n] = self.cross.T
        return V

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.n
        xa, xb = x[:n], x[n:]
        return np.concatenate([
            self.diag_alpha * xa + self.cross @ xb,
            self.cross.T @ xa + self.diag_beta * xb,
        ])


def class_bounds(V: StructuredJacobian, atol: float = 1e-12) -> tuple[float, float]:
    """Tightest ``(m, M)`` for which ``V`` lies in the class ``L_n(m, M)``.

    The bounds range over the cross entries off the ``(i, n+i)`` positions and
    the row excesses ``v_ii - sum_j v_{i,n+j}`` for ``i < n``.  Raises
    :class:`ClassViolation` listing each structural condition that fails.
    """
    n = V.n
    C = V.cross
    failures = []
    idx = np.arange(n - 1)
    if np.any(np.abs(C[idx, idx]) > atol):
        failures.append("v_{i,n+i} must vanish for i < n")
    if np.any(C < -atol):
        failures.append("cross entries must be non-negative")
    row_excess = V.diag_alpha - C.sum(axis=1)
    if abs(row_excess[-1]) > atol * max(1.0, abs(V.diag_alpha[-1])):
        failures.append("v_{n,n} must equal its cross-block row sum")
    if np.any(np.abs(V.diag_beta - C.sum(axis=0)) > atol * np.maximum(1.0, np.abs(V.diag_beta))):
        failures.append("receiver diagonal must equal its column sum")
    if np.any(row_excess < -atol):
        failures.append("diagonal dominance fails in the sender block")
    if failures:
        raise ClassViolation(failures)
    off = ~np.eye(n, n - 1, dtype=bool)
    values = np.concatenate([C[off], row_excess[:-1]])
    return float(values.min()), float(values.max())


def approx_inverse(V: StructuredJacobian) -> np.ndarray:
    """Closed-form approximation ``S(V)`` to ``V^{-1}``.

    ``s_ij = delta_ij / v_ii + 1 / v_{2n,2n}`` inside the two diagonal blocks
    and ``-1 / v_{2n,2n}`` in the off-diagonal blocks.
    """
    d = V.diagonal
    corner = V.corner
    if np.any(d == 0) or corner == 0:
        raise SingularJacobianError("zero diagonal entry or zero v_{2n,2n}")
    n = V.n
    S = np.full((2 * n - 1, 2 * n - 1), 1.0 / corner)
    S[:n, n:] = -1.0 / corner
    S[n:, :n] = -1.0 / corner
    S[np.diag_indices_from(S)] += 1.0 / d
    return S


def solve(V: StructuredJacobian, rhs) -> np.ndarray:
    """Solve ``V x = rhs`` exactly.

    Eliminates the diagonal sender block and Cholesky-factors the
    ``(n-1) x (n-1)`` Schur complement ``diag(b) - C^T diag(a)^-1 C``, which
    is symmetric positive definite whenever ``V`` is.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = V.n
    a, C = V.diag_alpha, V.cross
    if np.any(a <= 0):
        raise SingularJacobianError("non-positive sender diagonal")
    ra, rb = rhs[:n], rhs[n:]
    Cs = C / a[:, None]
    schur = C.T @ Cs
    schur *= -1.0
    schur[np.diag_indices_from(schur)] += V.diag_beta
    try:
        factor = linalg.cho_factor(schur, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularJacobianError(f"Schur complement not positive definite: {exc}") from exc
    xb = linalg.cho_solve(factor, rb - Cs.T @ ra, check_finite=False)
    xa = (ra - C @ xb) / a
    x = np.concatenate([xa, xb])
    if not np.all(np.isfinite(x)):
        raise SingularJacobianError("non-finite solution")
    return x
