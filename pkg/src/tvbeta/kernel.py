"""Compactly supported smoothing kernels and kernel-weight helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import ParameterError

__all__ = [
    "KernelSpec",
    "KernelMoments",
    "EPANECHNIKOV",
    "kernel_eval",
    "kh",
    "kernel_weights",
    "moments",
    "density_estimate",
]

_FAMILIES = ("epanechnikov", "uniform", "triangular")

# (k21, k02) in closed form; k12 vanishes for every even kernel.
_CLOSED_FORM = {
    "epanechnikov": (0.2, 0.6),
    "uniform": (1.0 / 3.0, 0.5),
    "triangular": (1.0 / 6.0, 2.0 / 3.0),
}


@dataclass(frozen=True)
class KernelSpec:
    """An even kernel supported on ``[-1, 1]`` with unit mass."""

    family: str = "epanechnikov"

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ParameterError(f"unknown kernel family {self.family!r}; choose from {_FAMILIES}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) < 1.0
        if self.family == "epanechnikov":
            val = 0.75 * (1.0 - u * u)
        elif self.family == "uniform":
            val = np.full_like(u, 0.5)
        else:
            val = 1.0 - np.abs(u)
        return np.where(inside, val, 0.0)


EPANECHNIKOV = KernelSpec()


@dataclass(frozen=True)
class KernelMoments:
    k21: float  # int v^2 K(v) dv
    k02: float  # int K(v)^2 dv
    k12: float  # int v K(v)^2 dv


def kernel_eval(spec: KernelSpec, u):
    """Evaluate the kernel; scalar in, scalar out."""
    val = spec(u)
    return float(val) if np.ndim(val) == 0 else val


def _check_h(h):
    if not (np.isfinite(h) and h > 0):
        raise ParameterError(f"bandwidth must be positive, got {h!r}")


def kh(spec: KernelSpec, t, T, h):
    """Scaled kernel ``K((t - T) / h) / h``."""
    _check_h(h)
    val = spec((np.asarray(t, dtype=float) - np.asarray(T, dtype=float)) / h) / h
    return float(val) if np.ndim(val) == 0 else val


def kernel_weights(times, t: float, h: float, spec: KernelSpec = EPANECHNIKOV) -> np.ndarray:
    """Weights ``K_h(t - T_l)`` for every observation time."""
    _check_h(h)
    return spec((t - np.asarray(times, dtype=float)) / h) / h


def moments(spec: KernelSpec = EPANECHNIKOV, quadrature: bool = False) -> KernelMoments:
    """Kernel moments ``k21``, ``k02`` and ``k12``.

    Closed forms are used for the built-in families.  ``quadrature=True``
    forces adaptive quadrature (used to cross-check the closed forms).
    """
    if not quadrature and spec.family in _CLOSED_FORM:
        k21, k02 = _CLOSED_FORM[spec.family]
        return KernelMoments(k21=k21, k02=k02, k12=0.0)
    opts = dict(epsabs=1e-12, epsrel=1e-12, points=[0.0])
    k21 = integrate.quad(lambda v: v * v * spec(v), -1, 1, **opts)[0]
    k02 = integrate.quad(lambda v: spec(v) ** 2, -1, 1, **opts)[0]
    k12 = integrate.quad(lambda v: v * spec(v) ** 2, -1, 1, **opts)[0]
    return KernelMoments(k21=k21, k02=k02, k12=k12)


def density_estimate(net, t: float, h: float, spec: KernelSpec = EPANECHNIKOV) -> float:
    """Kernel density estimate of the observation-time density at ``t``.

    ``(1/N) sum_l K_h(t - T_l)``; zero when no observation lies within ``h``.
    """
    times = getattr(net, "times", net)
    times = np.asarray(times, dtype=float)
    return float(kernel_weights(times, t, h, spec).sum() / times.shape[0])
