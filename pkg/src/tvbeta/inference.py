"""Plug-in asymptotic variance, pointwise confidence bands, and the bias oracle.

For the smoothed estimator at an interior time ``t``::

    sqrt(N n h) (theta_hat - theta* - k21 h^2 mu)  ->  Normal(0, k02 S V S^T)

with ``V = f(t) V_0(t, theta*)`` and ``S = S(V)`` the closed-form approximate
inverse.  The plug-in version replaces ``f(t)`` by the kernel density
estimate and ``theta*`` by the estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit

from .exceptions import NoDataError, ParameterError
from .kernel import EPANECHNIKOV, KernelSpec, kernel_weights, moments
from .matclass import StructuredJacobian, approx_inverse
from .network import ParamTrajectory, ParamVector, edge_prob_matrix

__all__ = [
    "VarianceReport",
    "TheoreticalBias",
    "base_jacobian",
    "sandwich",
    "asymptotic_covariance",
    "variance_estimate",
    "confidence_band",
    "theoretical_bias",
]


def _free(theta) -> np.ndarray:
    return theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)


def base_jacobian(theta) -> StructuredJacobian:
    """``V_0(theta)``: pair weights ``p_ij (1 - p_ij) / n``."""
    theta = _free(theta)
    if theta.ndim != 1 or theta.shape[0] % 2 != 1:
        raise ParameterError(f"free vector must have odd length 2n-1, got shape {theta.shape}")
    n = (theta.shape[0] + 1) // 2
    P = edge_prob_matrix(theta[:n], theta[n:])
    return StructuredJacobian.from_pair_weights(P * (1.0 - P) / n)


def sandwich(V: StructuredJacobian) -> np.ndarray:
    """``S(V) V S(V)^T``."""
    S = approx_inverse(V)
    M = S @ V.dense() @ S.T
    return 0.5 * (M + M.T)


def asymptotic_covariance(theta_star, density: float) -> np.ndarray:
    """Limit covariance ``Sigma(t, theta*)`` (without the ``k02`` factor)."""
    return sandwich(base_jacobian(theta_star).scaled(density))


@dataclass
class VarianceReport:
    sigma_hat: np.ndarray  # S(V_hat) V_hat S(V_hat)^T
    scale: float  # k02 / (N n h)
    se: np.ndarray
    V_hat: StructuredJacobian


def variance_estimate(net, t: float, theta_hat, h: float, spec: KernelSpec = EPANECHNIKOV) -> VarianceReport:
    """Plug-in standard errors ``sqrt(k02 Sigma_hat_qq / (N n h))`` at ``t``."""
    w = kernel_weights(net.times, t, h, spec)
    if w.sum() <= 0:
        raise NoDataError(f"no snapshot within h={h} of t={t}")
    f_hat = float(w.sum()) / net.N
    V_hat = base_jacobian(theta_hat).scaled(f_hat)
    sigma = sandwich(V_hat)
    scale = moments(spec).k02 / (net.N * net.n * h)
    se = np.sqrt(scale * np.clip(np.diag(sigma), 0.0, None))
    return VarianceReport(sigma_hat=sigma, scale=scale, se=se, V_hat=V_hat)


def confidence_band(trajectory: ParamTrajectory, se, level: float = 0.95):
    """Pointwise normal intervals ``theta_hat +/- z se``.

    ``se`` is an array shaped like ``trajectory.theta`` or a sequence of
    :class:`VarianceReport` (one per grid point).  Returns ``(lower, upper)``.
    """
    if not 0 < level < 1:
        raise ParameterError(f"level must be in (0, 1), got {level}")
    if len(se) and isinstance(se[0], VarianceReport):
        se = np.array([r.se for r in se])
    se = np.asarray(se, dtype=float)
    z = stats.norm.ppf(0.5 * (1.0 + level))
    return trajectory.theta - z * se, trajectory.theta + z * se


@dataclass
class TheoreticalBias:
    """Leading bias term: ``E theta_hat - theta* ~ k21 h^2 mu``."""

    mu: np.ndarray  # (p,)
    u: np.ndarray  # (n, n) edge probabilities at t, zero diagonal
    mu_pairs: np.ndarray  # (n, n) mu_ij(t), zero diagonal
    density: float
    density_slope: float


def theoretical_bias(truth, t: float, density: float, density_slope: float = 0.0,
                     p: int | None = None, window=(0.1, 0.9), step: float | None = None) -> TheoreticalBias:
    """Bias coefficients ``mu_q(t)`` from the true curves.

    ``truth`` is a callable ``t -> free vector`` (e.g. a ``ParamFamily``).
    Derivatives of ``u_ij = expit(alpha_i + beta_j)`` use central differences
    with step ``1e-3 (b - a)``.  The shared last term enters with ``+`` for
    sender coordinates and ``-`` for receiver coordinates.
    """
    a, b = window
    step = 1e-3 * (b - a) if step is None else step
    if t - step < a - 1e-12 or t + step > b + 1e-12:
        raise ParameterError(f"t={t} is within one difference step of the window edge")
    theta_t = _free(truth(t))
    n = (theta_t.shape[0] + 1) // 2
    p = 2 * n - 1 if p is None else p

    def u(s):
        th = _free(truth(s))
        U = expit(th[:n, None] + np.append(th[n:], 0.0)[None, :])
        np.fill_diagonal(U, 0.0)
        return U

    u0, up, um = u(t), u(t + step), u(t - step)
    d1 = (up - um) / (2 * step)
    d2 = (up - 2 * u0 + um) / step ** 2
    mu_pairs = d1 * density_slope + 0.5 * d2 * density

    V0 = base_jacobian(theta_t)
    diag = V0.diagonal
    corner = V0.corner
    shared = mu_pairs[: n - 1, n - 1].sum() / n / (density * corner)
    mu = np.empty(2 * n - 1)
    mu[:n] = mu_pairs.sum(axis=1) / n / (density * diag[:n]) + shared
    mu[n:] = mu_pairs[:, : n - 1].sum(axis=0) / n / (density * diag[n:]) - shared
    return TheoreticalBias(mu=mu[:p], u=u0, mu_pairs=mu_pairs, density=density, density_slope=density_slope)
