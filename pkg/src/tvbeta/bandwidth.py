"""Leave-one-out cross-validation of the bandwidth and the rate-based rule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import FitOptions, solve_degree_equations
from .exceptions import NoDataError, ParameterError
from .kernel import EPANECHNIKOV, KernelSpec
from .network import DynamicNetwork, edge_prob_matrix

__all__ = ["CvResult", "DEFAULT_H_GRID", "loo_cv", "rate_bandwidth"]

DEFAULT_H_GRID = np.linspace(0.05, 0.3, 26)


@dataclass
class CvResult:
    grid: np.ndarray
    losses: np.ndarray  # inf where the candidate is infeasible
    h_opt: float
    failures: np.ndarray  # leave-one-out fits that failed, per candidate
    terms: np.ndarray  # (len(grid), N) per-snapshot loss terms, NaN where failed


def loo_cv(net: DynamicNetwork, h_grid=None, opts: FitOptions = FitOptions(),
           spec: KernelSpec = EPANECHNIKOV, policy: str = "inf") -> CvResult:
    """Leave-one-out loss ``sum_l ||A(T_l) - W_h(T_l)||_F^2`` for each ``h``.

    ``W_h(T_l)`` holds the edge probabilities of the smoothed fit at ``T_l``
    computed without snapshot ``l``.  With ``policy="inf"`` a single failed
    fit makes the candidate infeasible; ``policy="skip"`` drops failed terms
    and rescales the remaining sum by ``N / (number of successes)``.

    Each leave-one-out fit is warm-started from the same snapshot's fit at
    the previous bandwidth.
    """
    if policy not in ("inf", "skip"):
        raise ParameterError(f"unknown policy {policy!r}")
    grid = DEFAULT_H_GRID if h_grid is None else np.atleast_1d(np.asarray(h_grid, dtype=float))
    if grid.size == 0 or np.any(grid <= 0):
        raise ParameterError("h_grid must be non-empty and positive")
    N, n = net.N, net.n
    T = net.times
    D, B = net.out_degrees.astype(float), net.in_degrees.astype(float)
    A = net.snapshots.astype(float)
    offdiag = ~np.eye(n, dtype=bool)

    terms = np.full((grid.size, N), np.nan)
    warm = [None] * N
    for k, h in enumerate(grid):
        K = spec((T[:, None] - T[None, :]) / h) / h
        np.fill_diagonal(K, 0.0)
        mass = K.sum(axis=1)
        dbar, bbar = K @ D, K @ B
        for ell in range(N):
            if mass[ell] <= 0:
                warm[ell] = None
                continue
            rep = solve_degree_equations(dbar[ell], bbar[ell], mass[ell], N - 1, opts,
                                         init=warm[ell], t=float(T[ell]))
            if not rep.converged:
                warm[ell] = None
                continue
            warm[ell] = rep.theta.theta
            W = edge_prob_matrix(rep.theta.alpha, rep.theta.beta)
            terms[k, ell] = float(np.sum((A[ell] - W)[offdiag] ** 2))

    ok = ~np.isnan(terms)
    failures = (~ok).sum(axis=1)
    if policy == "inf":
        losses = np.where(failures == 0, np.nansum(terms, axis=1), np.inf)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            losses = np.where(ok.any(axis=1), np.nansum(terms, axis=1) * N / ok.sum(axis=1), np.inf)
    if not np.isfinite(losses).any():
        raise NoDataError("every bandwidth candidate is infeasible")
    return CvResult(grid=grid, losses=losses, h_opt=float(grid[np.argmin(losses)]),
                    failures=failures, terms=terms)


def rate_bandwidth(n: int, N: int, reference=(40, 100, 0.23)) -> float:
    """Rescale a reference bandwidth by the ``(N n)^(-1/5)`` rate."""
    n0, N0, h0 = reference
    if min(n, N, n0, N0, h0) <= 0:
        raise ParameterError("all arguments must be positive")
    return float(h0 * (n0 * N0 / (n * N)) ** 0.2)
