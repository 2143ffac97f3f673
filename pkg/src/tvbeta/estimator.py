"""Kernel-smoothed estimating equations and their Newton solver.

At a target time ``t`` the smoothed equations replace the degrees of a
single snapshot by kernel-weighted sums over all snapshots::

    F_i(t, theta)   = sum_l K_h(t - T_l) { d_i(T_l) - sum_{j != i} p_ij(theta) }
    F_n+j(t, theta) = sum_l K_h(t - T_l) { b_j(T_l) - sum_{i != j} p_ij(theta) }

Because the probabilities do not depend on ``l`` only three sufficient
statistics enter: the smoothed out-degrees ``dbar``, the smoothed in-degrees
``bbar`` and the kernel mass ``sum_l K_h(t - T_l)``.  Every estimator in this
module (smoothed, point-wise, one-sided, leave-one-out) reduces to
:func:`solve_degree_equations` on such a triple.

Sign convention: ``jacobian`` returns ``V = -d(F/(N n))/d theta``, which is
positive definite, and Newton updates are ``theta += solve(V, F/(N n))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NoDataError, ParameterError, SingularJacobianError
from .kernel import EPANECHNIKOV, KernelSpec, kernel_weights
from .matclass import StructuredJacobian, solve
from .network import DynamicNetwork, ParamTrajectory, ParamVector, edge_prob_matrix

__all__ = [
    "FitOptions",
    "FitReport",
    "ChangePointResult",
    "smoothed_degrees",
    "residual",
    "jacobian",
    "solve_degree_equations",
    "newton_solve",
    "fit_trajectory",
    "default_grid",
    "pointwise_fit",
    "smooth_pointwise",
    "one_sided_fit",
    "change_point_scan",
]


@dataclass(frozen=True)
class FitOptions:
    """Newton solver settings.

    ``tol`` applies to ``max|F| / (N n)``.  ``init`` is ``"zeros"`` or a
    :class:`ParamVector` / free vector.  A fit is declared non-existent when
    any coordinate exceeds ``escape`` in magnitude, when the residual stops
    improving for ``stall_iter`` iterations, or when ``max_iter`` runs out.
    """

    max_iter: int = 100
    tol: float = 1e-10
    init: object = "zeros"
    max_halvings: int = 30
    escape: float = 40.0
    stall_iter: int = 20

    def __post_init__(self):
        if self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ParameterError("tol must be positive")

    def initial_theta(self, n: int) -> np.ndarray:
        if isinstance(self.init, str):
            if self.init != "zeros":
                raise ParameterError(f"unknown init {self.init!r}")
            return np.zeros(2 * n - 1)
        if isinstance(self.init, ParamVector):
            return self.init.theta
        return np.asarray(self.init, dtype=float).copy()


@dataclass
class FitReport:
    """Outcome of one solve.  ``theta`` is the last iterate (None if unavailable)."""

    t: float
    theta: ParamVector | None
    converged: bool
    iterations: int
    final_residual: float
    kernel_mass: float
    nonexistence: bool = False
    message: str = ""

    @property
    def free(self) -> np.ndarray:
        """Free-view estimate, NaN-filled unless converged."""
        if self.theta is None:
            raise ValueError("no estimate available")
        if not self.converged:
            return np.full(2 * self.theta.n - 1, np.nan)
        return self.theta.theta


def _stats(net: DynamicNetwork, t: float, h: float, spec: KernelSpec, side: str | None = None):
    w = kernel_weights(net.times, t, h, spec)
    if side == "right":
        w = np.where(net.times >= t, w, 0.0)
    elif side == "left":
        w = np.where(net.times < t, w, 0.0)
    elif side is not None:
        raise ParameterError(f"side must be 'left' or 'right', got {side!r}")
    mass = float(w.sum())
    if mass <= 0:
        where = f" on the {side} side" if side else ""
        raise NoDataError(f"no snapshot within h={h} of t={t}{where}")
    return w @ net.out_degrees, w @ net.in_degrees, mass


def smoothed_degrees(net: DynamicNetwork, t: float, h: float, spec: KernelSpec = EPANECHNIKOV):
    """Kernel-weighted out- and in-degree sums at ``t``."""
    dbar, bbar, _ = _stats(net, t, h, spec)
    return dbar, bbar


def _residual(theta: np.ndarray, dbar, bbar, mass: float) -> np.ndarray:
    n = dbar.shape[0]
    P = edge_prob_matrix(theta[:n], theta[n:])
    return np.concatenate([dbar - mass * P.sum(axis=1), bbar[:-1] - mass * P[:, :-1].sum(axis=0)])


def _jacobian(theta: np.ndarray, n: int, mass: float, N: int) -> StructuredJacobian:
    P = edge_prob_matrix(theta[:n], theta[n:])
    return StructuredJacobian.from_pair_weights(P * (1.0 - P) / n, scale=mass / N)


def residual(net: DynamicNetwork, t: float, theta, h: float, spec: KernelSpec = EPANECHNIKOV) -> np.ndarray:
    """Smoothed estimating-equation vector ``F(t, theta)`` of length ``2n - 1``."""
    dbar, bbar, mass = _stats(net, t, h, spec)
    theta = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    return _residual(theta, dbar, bbar, mass)


def jacobian(net: DynamicNetwork, t: float, theta, h: float, spec: KernelSpec = EPANECHNIKOV) -> StructuredJacobian:
    """``V(t, theta) = f_hat(t) V_0(t, theta)``, minus the derivative of ``F/(N n)``."""
    mass = float(kernel_weights(net.times, t, h, spec).sum())
    theta = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    return _jacobian(theta, net.n, mass, net.N)


def _degenerate(dbar, bbar, mass: float) -> str:
    """Reason the equations have no finite root, or '' if none is evident."""
    n = dbar.shape[0]
    full = mass * (n - 1) * (1 - 1e-12)
    if np.any(dbar <= 0):
        return f"node {int(np.argmin(dbar))} never sends"
    if np.any(bbar <= 0):
        return f"node {int(np.argmin(bbar))} never receives"
    if np.any(dbar >= full):
        return f"node {int(np.argmax(dbar))} always sends to everyone"
    if np.any(bbar >= full):
        return f"node {int(np.argmax(bbar))} always receives from everyone"
    return ""


def solve_degree_equations(dbar, bbar, mass: float, N: int, opts: FitOptions = FitOptions(),
                           init=None, t: float = np.nan) -> FitReport:
    """Solve ``dbar_i = mass * sum_j p_ij``, ``bbar_j = mass * sum_i p_ij``.

    Damped Newton with step halving on ``max|F|``; accepted iterates never
    increase the residual.  ``N`` only sets the normalisation ``F/(N n)``.
    """
    dbar = np.asarray(dbar, dtype=float)
    bbar = np.asarray(bbar, dtype=float)
    n = dbar.shape[0]
    if not mass > 0:
        raise NoDataError("zero kernel mass")
    scale = float(N * n)
    theta = opts.initial_theta(n) if init is None else np.array(init, dtype=float)

    def report(converged, it, res, nonexist=False, msg=""):
        return FitReport(t=t, theta=ParamVector.from_theta(theta), converged=converged, iterations=it,
                         final_residual=res, kernel_mass=mass, nonexistence=nonexist, message=msg)

    F = _residual(theta, dbar, bbar, mass)
    res = float(np.max(np.abs(F))) / scale
    reason = _degenerate(dbar, bbar, mass)
    if reason:
        return report(False, 0, res, True, reason)

    history = [res]
    for it in range(opts.max_iter + 1):
        if res <= opts.tol:
            return report(True, it, res)
        if it == opts.max_iter:
            break
        try:
            step = solve(_jacobian(theta, n, mass, N), F / scale)
        except SingularJacobianError as exc:
            return report(False, it, res, True, f"singular Jacobian: {exc}")
        lam = 1.0
        for _ in range(opts.max_halvings + 1):
            cand = theta + lam * step
            Fc = _residual(cand, dbar, bbar, mass)
            rc = float(np.max(np.abs(Fc))) / scale
            if rc <= res:
                break
            lam *= 0.5
        else:
            return report(False, it, res, True, "line search failed to reduce the residual")
        theta, F, res = cand, Fc, rc
        history.append(res)
        if np.max(np.abs(theta)) > opts.escape:
            return report(False, it + 1, res, True, f"parameter escaped beyond {opts.escape}")
        if len(history) > opts.stall_iter and res > 0.5 * history[-1 - opts.stall_iter]:
            return report(False, it + 1, res, True, f"residual stalled for {opts.stall_iter} iterations")
    return report(False, opts.max_iter, res, True, f"no convergence in {opts.max_iter} iterations")


def newton_solve(net: DynamicNetwork, t: float, h: float, opts: FitOptions = FitOptions(),
                 spec: KernelSpec = EPANECHNIKOV, init=None) -> FitReport:
    """Kernel-smoothed estimate at a single time ``t``.

    Raises :class:`NoDataError` if no snapshot lies within ``h`` of ``t``;
    a non-existent solution is reported in the returned :class:`FitReport`.
    """
    dbar, bbar, mass = _stats(net, t, h, spec)
    return solve_degree_equations(dbar, bbar, mass, net.N, opts, init=init, t=t)


def default_grid(net: DynamicNetwork, points: int = 101) -> np.ndarray:
    """Observed times together with ``points`` equispaced times in the window."""
    a, b = net.window
    return np.unique(np.concatenate([net.times, np.linspace(a, b, points)]))


def fit_trajectory(net: DynamicNetwork, grid=None, h: float = 0.1, opts: FitOptions = FitOptions(),
                   spec: KernelSpec = EPANECHNIKOV) -> tuple[ParamTrajectory, list[FitReport]]:
    """Smoothed estimates along ``grid``, warm-starting each solve from its predecessor.

    Failed grid points (no data, non-existence) are recorded in the reports and
    leave NaN rows in the trajectory; the next solve restarts from
    ``opts.init``.
    """
    grid = default_grid(net) if grid is None else np.asarray(grid, dtype=float)
    n = net.n
    theta = np.full((grid.shape[0], 2 * n - 1), np.nan)
    reports = []
    warm = None
    for k, t in enumerate(grid):
        try:
            rep = newton_solve(net, t, h, opts, spec, init=warm)
        except NoDataError as exc:
            rep = FitReport(t=float(t), theta=None, converged=False, iterations=0,
                            final_residual=np.nan, kernel_mass=0.0, message=str(exc))
        reports.append(rep)
        if rep.converged:
            theta[k] = rep.theta.theta
            warm = theta[k]
        else:
            warm = None
    return ParamTrajectory(grid, theta, "smoothed"), reports


def pointwise_fit(net: DynamicNetwork, opts: FitOptions = FitOptions()) -> list[FitReport]:
    """Static directed beta-model MLE of every snapshot separately."""
    out = []
    for ell in range(net.N):
        rep = solve_degree_equations(net.out_degrees[ell], net.in_degrees[ell], 1.0, 1, opts,
                                     t=float(net.times[ell]))
        out.append(rep)
    return out


def smooth_pointwise(times, reports: list[FitReport], h: float, grid,
                     spec: KernelSpec = EPANECHNIKOV) -> tuple[ParamTrajectory, np.ndarray]:
    """Nadaraya-Watson average of existing point-wise estimates.

    Returns the trajectory and a boolean mask of grid points with no existing
    neighbour within ``h`` (their rows are NaN).
    """
    times = np.asarray(times, dtype=float)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    ok = np.array([r.converged for r in reports])
    if not ok.any():
        p = 2 * reports[0].theta.n - 1 if reports and reports[0].theta is not None else 1
        return ParamTrajectory(grid, np.full((grid.size, p), np.nan), "smoothed-pointwise"), np.ones(grid.size, bool)
    est = np.array([r.theta.theta for r, good in zip(reports, ok) if good])
    T = times[ok]
    W = spec((grid[:, None] - T[None, :]) / h) / h
    mass = W.sum(axis=1)
    gaps = mass <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = (W @ est) / mass[:, None]
    theta[gaps] = np.nan
    return ParamTrajectory(grid, theta, "smoothed-pointwise"), gaps


def one_sided_fit(net: DynamicNetwork, t: float, h: float, side: str, opts: FitOptions = FitOptions(),
                  spec: KernelSpec = EPANECHNIKOV, init=None) -> FitReport:
    """Smoothed fit using only snapshots with ``T >= t`` (right) or ``T < t`` (left)."""
    dbar, bbar, mass = _stats(net, t, h, spec, side=side)
    return solve_degree_equations(dbar, bbar, mass, net.N, opts, init=init, t=t)


@dataclass
class ChangePointResult:
    t_hat: float
    grid: np.ndarray
    gap: np.ndarray  # NaN where a one-sided fit failed
    skipped: list = field(default_factory=list)


def change_point_scan(net: DynamicNetwork, h: float, scan_interval, grid=None,
                      opts: FitOptions = FitOptions(), spec: KernelSpec = EPANECHNIKOV) -> ChangePointResult:
    """Locate a single common jump by maximising the one-sided estimate gap.

    The gap at ``t`` is ``||theta_right(t) - theta_left(t)||_2^2``.  Grid
    points where either side fails are skipped and listed in ``skipped``.
    """
    a1, b1 = map(float, scan_interval)
    a, b = net.window
    if not (a1 <= b1 and a1 - h >= a - 1e-12 and b1 + h <= b + 1e-12):
        raise ParameterError(f"scan interval [{a1}, {b1}] needs a margin of h={h} inside [{a}, {b}]")
    grid = np.linspace(a1, b1, 61) if grid is None else np.atleast_1d(np.asarray(grid, dtype=float))
    gap = np.full(grid.shape[0], np.nan)
    skipped = []
    warm = {"left": None, "right": None}
    for k, t in enumerate(grid):
        fits = {}
        for side in ("left", "right"):
            try:
                rep = one_sided_fit(net, t, h, side, opts, spec, init=warm[side])
            except NoDataError:
                rep = None
            if rep is None or not rep.converged:
                warm[side] = None
                break
            warm[side] = rep.theta.theta
            fits[side] = warm[side]
        if len(fits) < 2:
            skipped.append(float(t))
            continue
        gap[k] = float(np.sum((fits["right"] - fits["left"]) ** 2))
    if np.all(np.isnan(gap)):
        raise NoDataError("every one-sided fit failed on the scan grid")
    return ChangePointResult(t_hat=float(grid[np.nanargmax(gap)]), grid=grid, gap=gap, skipped=skipped)
