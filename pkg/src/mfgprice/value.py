"""Quadratic value function, its x-gradient and the optimal trading rate."""

from __future__ import annotations

from dataclasses import dataclass

from scipy.optimize import minimize_scalar

from .coefficients import A0, A11, A12, A13, A21, A22, A23, A24, A25, A26, CoefficientPath


@dataclass(frozen=True)
class StateSample:
    x: float
    q: float
    w: float
    t: float


def _unpack(s):
    if isinstance(s, StateSample):
        return s.x, s.q, s.w, s.t
    return s


def value(coeffs: CoefficientPath, s) -> float:
    x, q, w, t = _unpack(s)
    a = coeffs.at(t)
    return (
        a[..., A0] + a[..., A11] * x + a[..., A12] * q + a[..., A13] * w
        + a[..., A21] * x * x + a[..., A22] * x * q + a[..., A23] * x * w
        + a[..., A24] * q * q + a[..., A25] * q * w + a[..., A26] * w * w
    )


def u_x(coeffs: CoefficientPath, s) -> float:
    x, q, w, t = _unpack(s)
    a = coeffs.at(t)
    return a[..., A11] + 2.0 * a[..., A21] * x + a[..., A22] * q + a[..., A23] * w


def optimal_control(coeffs: CoefficientPath, c: float, s) -> float:
    """v* = -(w + u_x) / c."""
    x, q, w, t = _unpack(s)
    return -(w + u_x(coeffs, (x, q, w, t))) / c


def hamiltonian(p, c):
    return p * p / (2.0 * c)


def legendre_hamiltonian(p, c, bound=1e3):
    """sup_v (-p v - c v^2 / 2) by bounded numerical maximization."""
    res = minimize_scalar(lambda v: p * v + 0.5 * c * v * v, bounds=(-bound, bound),
                          method="bounded", options={"xatol": 1e-12})
    return -res.fun
