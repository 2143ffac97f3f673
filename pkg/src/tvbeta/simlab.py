"""Ground-truth parameter curves, data generation and Monte Carlo studies.

Replicate ``r`` of a design with seed ``s`` draws from
``numpy.random.Generator(Philox(SeedSequence([s, r])))``.  Philox is a
counter-based generator, so every replicate can be regenerated in
isolation and replicates can run in any order or process.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from ._parallel import pmap
from .estimator import (FitOptions, fit_trajectory, newton_solve, pointwise_fit,
                        smooth_pointwise)
from .exceptions import ParameterError
from .inference import asymptotic_covariance, theoretical_bias, variance_estimate
from .kernel import EPANECHNIKOV, KernelSpec, moments
from .network import DynamicNetwork, ParamTrajectory, ParamVector, edge_prob_matrix

__all__ = [
    "ParamFamily",
    "SimDesign",
    "truth_eval",
    "generate",
    "rmse",
    "q_diagnostic",
    "rate_slope",
    "rmse_sweep",
    "bias_sd_table",
    "PointReplicates",
    "point_replicates",
    "normality_diag",
    "NormalityResult",
    "sparse_existence",
    "cv_study",
    "change_point_study",
]

_PI = math.pi

# Four blocks of sender curves and four of receiver curves per table.
_TABLES: dict[str, tuple[tuple[Callable, ...], tuple[Callable, ...]]] = {
    "table1": (
        (
            lambda t: -0.8 * (3 * t - 0.6),
            lambda t: -3.6 * (t - 0.3) ** 2 / (t - 3),
            lambda t: -(0.4 ** t),
            lambda t: -3.2 * (t - 0.5) ** 2 / (1 + t ** 2),
        ),
        (
            lambda t: 2 * (t - 0.5) ** 2 / (t - 2),
            lambda t: -1.6 * t * (t - 0.3) ** 3 + (t - 0.2) ** 2 + 0.2 * t,
            lambda t: -1.8 * (t + 0.6) * np.sin(0.2 * _PI * t),
            lambda t: -1.6 * (t - 0.2) ** 2 * np.sin(_PI * t),
        ),
    ),
    "table5": (
        (
            lambda t: -2 * (3 * t - 0.6),
            lambda t: -8 * (t - 0.6) ** 2 / (t - 3),
            lambda t: -(2.0 ** t),
            lambda t: -4.2 * (t - 0.5) ** 2 / (1 + t ** 2),
        ),
        (
            lambda t: -6 * (t - 0.5) ** 2 / (t - 2),
            lambda t: -2 * (t - 0.3) ** 3 + (t - 0.2) ** 2 + 0.2 * t,
            lambda t: -4 * (t + 0.8) * np.sin(0.2 * _PI * t),
            lambda t: -5 * (t - 0.2) ** 2 * np.sin(0.2 * _PI * t),
        ),
    ),
}


def _block_index(n: int) -> np.ndarray:
    """Block (0..3) of each 1-based node index ``i``; boundaries at n/4, n/2, 3n/4."""
    i = np.arange(1, n + 1)
    return np.searchsorted([n / 4, 2 * n / 4, 3 * n / 4], i, side="left")


@dataclass(frozen=True)
class ParamFamily:
    """True parameter curves ``theta*(t)``.

    ``kind`` is ``"table1"``, ``"table5"``, ``"constant"`` (every effect equal
    to ``c``, with the last receiver still 0) or ``"custom"`` (``func`` maps a
    time to a free vector).  ``jump`` optionally adds ``jump_size`` to every
    sender effect for ``t >= jump``.
    """

    kind: str
    n: int
    c: float = 0.0
    func: Callable | None = field(default=None, compare=False)
    jump: float | None = None
    jump_size: float = 0.0

    def __post_init__(self):
        if self.kind in _TABLES and self.n % 4:
            raise ParameterError(f"{self.kind} needs n divisible by 4, got {self.n}")
        if self.kind not in (*_TABLES, "constant", "custom"):
            raise ParameterError(f"unknown family {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise ParameterError("custom family needs func")

    def theta(self, t) -> np.ndarray:
        """Free vectors at ``t``; shape ``(2n-1,)`` for scalar ``t`` else ``(len(t), 2n-1)``."""
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        n = self.n
        if self.kind in _TABLES:
            fa, fb = _TABLES[self.kind]
            block = _block_index(n)
            A = np.stack([f(tt) for f in fa], axis=1)  # (T, 4)
            B = np.stack([f(tt) for f in fb], axis=1)
            alpha = A[:, block]
            alpha[:, n - 1] = alpha[:, n - 2]
            beta = B[:, block[: n - 1]]
            out = np.hstack([alpha, beta])
        elif self.kind == "constant":
            out = np.full((tt.size, 2 * n - 1), float(self.c))
        else:
            out = np.array([np.asarray(self.func(s), dtype=float) for s in tt])
        if self.jump is not None:
            out[:, :n] += self.jump_size * (tt >= self.jump)[:, None]
        return out[0] if scalar else out

    __call__ = theta


def truth_eval(family: ParamFamily, t: float) -> ParamVector:
    return ParamVector.from_theta(family.theta(t))


@dataclass(frozen=True)
class SimDesign:
    n: int
    N: int
    h: float | str = "cv"
    window: tuple[float, float] = (0.1, 0.9)
    reps: int = 100
    seed: int = 2024

    def rng(self, rep: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, rep])))

    @property
    def density(self) -> float:
        """Uniform observation-time density on the window."""
        return 1.0 / (self.window[1] - self.window[0])


def generate(design: SimDesign, family: ParamFamily, rep: int = 0) -> DynamicNetwork:
    """Draw one dynamic network: uniform sorted times, independent Bernoulli edges."""
    rng = design.rng(rep)
    a, b = design.window
    n = design.n
    times = np.sort(rng.uniform(a, b, size=design.N))
    thetas = family.theta(times)
    A = np.empty((design.N, n, n), dtype=np.uint8)
    for ell in range(design.N):
        P = edge_prob_matrix(thetas[ell, :n], thetas[ell, n:])
        A[ell] = rng.random((n, n)) < P
    return DynamicNetwork(A, times, design.window)


def rmse(est, truth, times=None) -> tuple[float, float]:
    """Root mean squared error over time points.

    ``est`` is a :class:`ParamTrajectory` or an array ``(len(times), 2n-1)``;
    ``truth`` a :class:`ParamFamily` or an array of the same shape.

    Returns
    -------
    summed : float
        ``sqrt(mean_l ||est_l - truth_l||^2)`` with the squared norm summed
        over all ``2n - 1`` coordinates.
    per_coordinate : float
        The same with the squared norm averaged over coordinates.
    """
    if isinstance(est, ParamTrajectory):
        times = est.grid if times is None else times
        est = est.theta
    est = np.asarray(est, dtype=float)
    truth = truth.theta(np.asarray(times)) if isinstance(truth, ParamFamily) else np.asarray(truth, dtype=float)
    sq = (est - truth) ** 2
    summed = float(np.sqrt(np.mean(sq.sum(axis=1))))
    return summed, summed / math.sqrt(est.shape[1])


def q_diagnostic(family: ParamFamily, window=(0.1, 0.9), grid=None) -> float:
    """``max_t max_{i != j} (1 + e^x)^2 / e^x`` with ``x = alpha_i + beta_j``."""
    grid = np.linspace(*window, 201) if grid is None else np.asarray(grid, dtype=float)
    n = family.n
    worst = 0.0
    for th in family.theta(grid):
        x = th[:n, None] + np.append(th[n:], 0.0)[None, :]
        np.fill_diagonal(x, 0.0)
        # (1+e^x)^2/e^x = 2 + 2 cosh(x); the zeroed diagonal gives the floor 4
        worst = max(worst, float(np.max(2.0 + 2.0 * np.cosh(x))))
    return worst


def rate_slope(x, y) -> float:
    """Least-squares slope of ``log y`` on ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _sweep_rep(args):
    n, N, h, kind, seed, rep, opts = args
    family = ParamFamily(kind, n)
    net = generate(SimDesign(n, N, h, seed=seed), family, rep)
    traj, reports = fit_trajectory(net, net.times, h, opts)
    ok = np.array([r.converged for r in reports])
    truth = family.theta(net.times)
    summed, per_coord = rmse(traj.theta[ok], truth[ok])
    err = (traj.theta[ok] - truth[ok]) ** 2
    return summed, per_coord, float(np.sqrt(err[:, :n].mean())), float(np.sqrt(err[:, n:].mean())), int((~ok).sum())


def rmse_sweep(ns=(40, 80, 160, 320), Ns=(25, 50, 100, 200), reps: int = 100, kind: str = "table1",
               seed: int = 2, reference=(40, 100, 0.23), opts: FitOptions = FitOptions(),
               n_jobs: int = 1) -> tuple[list[dict], float]:
    """RMSE over the observation times for every ``(n, N)`` with rate-scaled ``h``.

    Returns one row per setting (replicate-averaged RMSE variants) and the
    slope of log per-coordinate RMSE on ``log(N n)``.
    """
    from .bandwidth import rate_bandwidth

    rows = []
    for n in ns:
        for N in Ns:
            h = rate_bandwidth(n, N, reference)
            res = np.array(pmap(_sweep_rep, [(n, N, h, kind, seed, r, opts) for r in range(reps)], n_jobs))
            rows.append(dict(n=n, N=N, h=h, rmse_summed=res[:, 0].mean(), rmse_per_coord=res[:, 1].mean(),
                             rmse_alpha=res[:, 2].mean(), rmse_beta=res[:, 3].mean(),
                             failed_points=int(res[:, 4].sum()), reps=reps))
    slope = rate_slope([r["n"] * r["N"] for r in rows], [r["rmse_per_coord"] for r in rows])
    return rows, slope


def _cv_rep(args):
    from .bandwidth import loo_cv

    design, family, rep, h_grid, opts = args
    return loo_cv(generate(design, family, rep), h_grid, opts)


def cv_study(design: SimDesign, family: ParamFamily, h_grid=None, opts: FitOptions = FitOptions(),
             n_jobs: int = 1) -> list:
    """Cross-validation result for each replicate of ``design``."""
    return pmap(_cv_rep, [(design, family, r, h_grid, opts) for r in range(design.reps)], n_jobs)


def _coords(n: int, nodes, params) -> list[tuple[str, int, int]]:
    """(param, 1-based node, free-vector index) for each requested cell."""
    out = []
    for param in params:
        for i in nodes:
            if param == "alpha":
                out.append((param, i, i - 1))
            elif i < n:
                out.append((param, i, n + i - 1))
    return out


def _table_rep(args):
    design, family, t_list, idx, methods, opts, rep = args
    net = generate(design, family, rep)
    h = design.h
    out = {m: np.full((len(t_list), len(idx)), np.nan) for m in methods}
    truth_at = {m: np.full((len(t_list), len(idx)), np.nan) for m in methods}
    for k, t in enumerate(t_list):
        for m in methods:
            truth_at[m][k] = family.theta(t)[idx]
    if "smoothed" in methods:
        for k, t in enumerate(t_list):
            r = newton_solve(net, t, h, opts)
            if r.converged:
                out["smoothed"][k] = r.theta.theta[idx]
    if "pointwise" in methods or "smoothed_pointwise" in methods:
        pw = pointwise_fit(net, opts)
        if "pointwise" in methods:
            for k, t in enumerate(t_list):
                ell = int(np.argmin(np.abs(net.times - t)))
                truth_at["pointwise"][k] = family.theta(net.times[ell])[idx]
                if pw[ell].converged:
                    out["pointwise"][k] = pw[ell].theta.theta[idx]
        if "smoothed_pointwise" in methods:
            traj, _ = smooth_pointwise(net.times, pw, h, t_list)
            out["smoothed_pointwise"] = traj.theta[:, idx]
    return {m: out[m] - truth_at[m] for m in methods}


def bias_sd_table(design: SimDesign, family: ParamFamily, t_list=(0.2, 0.4, 0.6), nodes=(1, 41, 81, 121),
                  methods=("smoothed", "pointwise", "smoothed_pointwise"), params=("alpha", "beta"),
                  opts: FitOptions = FitOptions(), n_jobs: int = 1) -> list[dict]:
    """Monte Carlo bias and SD per (t, parameter, node, method).

    The point-wise method is read at the observation time nearest to each
    ``t`` and compared with the truth at that time.  Non-existent fits are
    excluded and counted in ``n_failed``.
    """
    if design.reps < 2:
        raise ParameterError("need at least two replicates")
    cells = _coords(design.n, nodes, params)
    idx = [c[2] for c in cells]
    errs = pmap(_table_rep, [(design, family, tuple(t_list), idx, tuple(methods), opts, r)
                             for r in range(design.reps)], n_jobs)
    rows = []
    for m in methods:
        E = np.array([e[m] for e in errs])  # (reps, len(t), len(cells))
        for k, t in enumerate(t_list):
            for c, (param, i, _) in enumerate(cells):
                x = E[:, k, c]
                x = x[np.isfinite(x)]
                rows.append(dict(t=t, param=param, node=i, method=m,
                                 bias=float(x.mean()) if x.size else np.nan,
                                 sd=float(x.std(ddof=1)) if x.size > 1 else np.nan,
                                 n_ok=int(x.size), n_failed=int(design.reps - x.size)))
    return rows


@dataclass
class PointReplicates:
    """Smoothed estimates at one time ``t`` across replicates."""

    design: SimDesign
    t: float
    theta_hat: np.ndarray  # (reps, 2n-1), NaN rows for failures
    se: np.ndarray  # plug-in standard errors, same shape
    converged: np.ndarray

    @property
    def n_failed(self) -> int:
        return int((~self.converged).sum())


def _point_rep(args):
    design, family, t, opts, rep = args
    net = generate(design, family, rep)
    r = newton_solve(net, t, design.h, opts)
    p = 2 * design.n - 1
    if not r.converged:
        return np.full(p, np.nan), np.full(p, np.nan), False
    return r.theta.theta, variance_estimate(net, t, r.theta, design.h).se, True


def point_replicates(design: SimDesign, family: ParamFamily, t: float, opts: FitOptions = FitOptions(),
                     n_jobs: int = 1) -> PointReplicates:
    res = pmap(_point_rep, [(design, family, t, opts, r) for r in range(design.reps)], n_jobs)
    return PointReplicates(design, t, np.array([r[0] for r in res]), np.array([r[1] for r in res]),
                           np.array([r[2] for r in res]))


@dataclass
class NormalityResult:
    coords: tuple
    z: np.ndarray  # (reps_ok, len(coords)) standardized, bias-corrected
    z_uncorrected: np.ndarray
    ks: np.ndarray  # KS distance to N(0, 1) per coordinate
    ks_uncorrected: np.ndarray
    ellipse_coverage: float  # first two coordinates, Mahalanobis radius^2 <= 9
    n_failed: int


def normality_diag(design: SimDesign, family: ParamFamily, t: float, coords=(0, 1),
                   replicates: PointReplicates | None = None, opts: FitOptions = FitOptions(),
                   spec: KernelSpec = EPANECHNIKOV, n_jobs: int = 1) -> NormalityResult:
    """Standardize ``sqrt(N n h)(theta_hat - theta* - k21 h^2 mu)`` with the true covariance.

    ``coords`` are 0-based free-vector indices.  The ellipse coverage uses the
    first two coordinates and the predicted (not sample) covariance.
    """
    if replicates is None:
        if design.reps < 1:
            raise ParameterError("reps must be positive")
        replicates = point_replicates(design, family, t, opts, n_jobs)
    ok = replicates.converged
    if not ok.any():
        raise ParameterError("no converged replicates")
    coords = tuple(coords)
    n, N, h = design.n, design.N, design.h
    mom = moments(spec)
    f = design.density
    star = family.theta(t)
    sigma = mom.k02 * asymptotic_covariance(star, f)[np.ix_(coords, coords)]
    mu = theoretical_bias(family, t, f, 0.0, window=design.window).mu[list(coords)]
    root = np.sqrt(N * n * h)
    dev = replicates.theta_hat[ok][:, coords] - star[list(coords)]
    raw = root * dev
    corrected = root * (dev - mom.k21 * h ** 2 * mu)
    sd = np.sqrt(np.diag(sigma))
    z, zu = corrected / sd, raw / sd
    ks = np.array([stats.kstest(z[:, q], "norm").statistic for q in range(len(coords))])
    ksu = np.array([stats.kstest(zu[:, q], "norm").statistic for q in range(len(coords))])
    coverage = np.nan
    if len(coords) >= 2:
        x = corrected[:, :2]
        inv = np.linalg.inv(sigma[:2, :2])
        coverage = float(np.mean(np.einsum("ij,jk,ik->i", x, inv, x) <= 9.0))
    return NormalityResult(coords, z, zu, ks, ksu, coverage, replicates.n_failed)


def _sparse_rep(args):
    design, family, grid, opts, rep = args
    net = generate(design, family, rep)
    pw = pointwise_fit(net, opts)
    g = net.times if grid is None else grid
    _, reports = fit_trajectory(net, g, design.h, opts)
    return sum(r.nonexistence or not r.converged for r in pw), sum(not r.converged for r in reports)


def sparse_existence(design: SimDesign, family: ParamFamily, grid=None, opts: FitOptions = FitOptions(),
                     n_jobs: int = 1) -> np.ndarray:
    """Per replicate: (point-wise failures over snapshots, smoothed failures over the grid).

    ``grid=None`` evaluates the smoothed fit at the observation times.
    """
    res = pmap(_sparse_rep, [(design, family, grid, opts, r) for r in range(design.reps)], n_jobs)
    return np.array(res, dtype=int)


def _cp_rep(args):
    from .estimator import change_point_scan

    design, family, scan, grid, opts, rep = args
    net = generate(design, family, rep)
    return change_point_scan(net, design.h, scan, grid, opts).t_hat


def change_point_study(design: SimDesign, family: ParamFamily, scan=(0.2, 0.8), grid=None,
                       opts: FitOptions = FitOptions(), n_jobs: int = 1) -> np.ndarray:
    """Estimated change point for each replicate."""
    return np.array(pmap(_cp_rep, [(design, family, scan, grid, opts, r) for r in range(design.reps)], n_jobs))
