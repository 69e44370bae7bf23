"""Backward ODE system for the quadratic-ansatz coefficients and the feedback price rule.

The value function is sought as

    u = a0 + a1_1 x + a1_2 q + a1_3 w
          + a2_1 x^2 + a2_2 xq + a2_3 xw + a2_4 q^2 + a2_5 qw + a2_6 w^2

and matching monomials in the HJB equation gives ten ODEs in t, integrated
backward from the terminal cost with classical RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, SingularityError, TimeRangeError
from .io import write_csv
from .model import COEFF_NAMES, AffineCoeff, ModelSpec, ensure_valid, psi_to_terminal_conditions

SINGULARITY_FLOOR = 1e-6
OVERFLOW_GUARD = 1e12
TIME_TOL = 1e-12

# column indices into the ten-vector
A0, A11, A12, A13, A21, A22, A23, A24, A25, A26 = range(10)


def rhs(a, c, b, s):
    """Time derivative of the ten coefficients.

    ``a`` is ordered as ``COEFF_NAMES``; ``b`` and ``s`` are the supply drift
    and volatility components (k0, k1, k2) at the same time.  Works on
    floats, complex numbers and numpy arrays alike.  The price coefficients
    have already been eliminated via b^P = -c b^S and
    sigma^P = -sigma^S (c + a2_2) / (1 + a2_3).
    """
    a0, a11, a12, a13, a21, a22, a23, a24, a25, a26 = a
    b0, b1, b2 = b
    s0, s1, s2 = s
    k = a22 + c
    d = a23 + 1.0

    da21 = 2.0 * a21 * a21 / c
    da22 = (c * c * a23 * b1 - c * a22 * b1 + 2.0 * a21 * a22) / c
    da23 = (c * c * a23 * b2 - c * a22 * b2 + 2.0 * a21 + 2.0 * a21 * a23) / c
    da11 = (c * c * a23 * b0 - c * a22 * b0 + 2.0 * a11 * a21) / c

    da24 = (
        c * a25 * b1 - 2.0 * a24 * b1
        + a25 * k * s1 * s1 / d
        + 0.25 * (-4.0 * a26 * k * k * s1 * s1 / (d * d) - 4.0 * a24 * s1 * s1)
        + a22 * a22 / (2.0 * c)
    )
    da25 = (
        2.0 * c * a26 * b1 + c * a25 * b2 - a25 * b1 - 2.0 * a24 * b2
        + 0.5 * (-4.0 * a26 * k * k * s1 * s2 / (d * d) - 4.0 * a24 * s1 * s2)
        + 2.0 * a25 * k * s1 * s2 / d
        + a22 * d / c
    )
    da26 = (
        2.0 * c * a26 * b2 - a25 * b2
        + 0.25 * (-4.0 * a26 * k * k * s2 * s2 / (d * d) - 4.0 * a24 * s2 * s2)
        + a25 * k * s2 * s2 / d
        + d * d / (2.0 * c)
    )
    da0 = (
        c * a13 * b0 - a12 * b0
        + a25 * k * s0 * s0 / d
        + 0.5 * (-2.0 * a26 * k * k * s0 * s0 / (d * d) - 2.0 * a24 * s0 * s0)
        + a11 * a11 / (2.0 * c)
    )
    da12 = (
        c * a25 * b0 + c * a13 * b1 - 2.0 * a24 * b0 - a12 * b1
        + 2.0 * a25 * k * s0 * s1 / d
        + 0.5 * (-4.0 * a26 * k * k * s0 * s1 / (d * d) - 4.0 * a24 * s0 * s1)
        + a11 * a22 / c
    )
    da13 = (
        2.0 * c * a26 * b0 + c * a13 * b2 - a25 * b0 - a12 * b2
        + 0.5 * (-4.0 * a26 * k * k * s0 * s2 / (d * d) - 4.0 * a24 * s0 * s2)
        + 2.0 * a25 * k * s0 * s2 / d
        + a11 * d / c
    )
    return (da0, da11, da12, da13, da21, da22, da23, da24, da25, da26)


def _rhs_compact(a, c, b, s):
    """Algebraically regrouped ``rhs`` for the scalar RK4 loop.

    Every volatility term carries the same quadratic form
    G = a2_5 r - a2_6 r^2 - a2_4 with r = (a2_2 + c) / (1 + a2_3).
    """
    a0, a11, a12, a13, a21, a22, a23, a24, a25, a26 = a
    b0, b1, b2 = b
    s0, s1, s2 = s
    d = a23 + 1.0
    r = (a22 + c) / d
    g = a25 * r - a26 * r * r - a24
    e = c * a23 - a22
    p = c * a13 - a12
    m = c * a25 - 2.0 * a24
    n = 2.0 * c * a26 - a25
    ic = 1.0 / c
    return (
        p * b0 + g * s0 * s0 + 0.5 * a11 * a11 * ic,
        e * b0 + 2.0 * a11 * a21 * ic,
        m * b0 + p * b1 + 2.0 * g * s0 * s1 + a11 * a22 * ic,
        n * b0 + p * b2 + 2.0 * g * s0 * s2 + a11 * d * ic,
        2.0 * a21 * a21 * ic,
        e * b1 + 2.0 * a21 * a22 * ic,
        e * b2 + 2.0 * a21 * d * ic,
        m * b1 + g * s1 * s1 + 0.5 * a22 * a22 * ic,
        n * b1 + m * b2 + 2.0 * g * s1 * s2 + a22 * d * ic,
        n * b2 + g * s2 * s2 + 0.5 * d * d * ic,
    )


def a21_closed_form(c, c21, T, t):
    """a2_1(t) = c c21 / (c + 2 c21 (T - t)).

    Raises BlowUpError when the denominator reaches zero on [t, T], which
    happens for c21 < 0 once T - t >= c / (2|c21|).
    """
    t = np.asarray(t, dtype=float)
    denom = c + 2.0 * c21 * (T - t)
    if np.any(denom <= 0.0):
        raise BlowUpError("Riccati blow-up of a2_1", t=riccati_blowup_time(c, c21, T))
    out = c * c21 / denom
    return float(out) if out.ndim == 0 else out


def riccati_blowup_time(c, c21, T):
    """Time at which a2_1 explodes going backward from T, or None."""
    if c21 >= 0:
        return None
    return T - c / (2.0 * abs(c21))


def uniform_grid(T, step, min_intervals=10):
    n = int(round(T / step))
    if n < min_intervals:
        raise ValueError(f"step {step} gives {n} intervals on [0, {T}]; need at least {min_intervals}")
    if abs(n * step - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"step {step} does not divide T = {T}")
    return np.linspace(0.0, T, n + 1)


def _supply_tables(spec, times):
    b = [np.asarray(f(times), dtype=float).tolist() for f in (spec.supply_drift.k0, spec.supply_drift.k1, spec.supply_drift.k2)]
    s = [np.asarray(f(times), dtype=float).tolist() for f in (spec.supply_vol.k0, spec.supply_vol.k1, spec.supply_vol.k2)]
    return b, s


def _check(y, t):
    if not 1.0 + y[A23] > SINGULARITY_FLOOR:
        if math.isfinite(y[A23]):
            raise SingularityError(f"1 + a2_3 = {1.0 + y[A23]:.3e} fell below the singularity floor", t=t)
    for v in y:
        if not abs(v) <= OVERFLOW_GUARD:
            raise BlowUpError("coefficient exceeded the overflow guard", t=t)


def _rk4_backward(spec, grid, y_T):
    c = float(spec.c)
    n = len(grid) - 1
    h = grid[1] - grid[0]
    mids = grid[:-1] + 0.5 * h
    bn, sn = _supply_tables(spec, grid)
    bm, sm = _supply_tables(spec, mids)

    f = _rhs_compact
    hh, h6 = 0.5 * h, h / 6.0
    values = [None] * (n + 1)
    y = tuple(y_T)
    values[n] = y
    for i in range(n, 0, -1):
        bi, si = (bn[0][i], bn[1][i], bn[2][i]), (sn[0][i], sn[1][i], sn[2][i])
        bh, sh = (bm[0][i - 1], bm[1][i - 1], bm[2][i - 1]), (sm[0][i - 1], sm[1][i - 1], sm[2][i - 1])
        bl, sl = (bn[0][i - 1], bn[1][i - 1], bn[2][i - 1]), (sn[0][i - 1], sn[1][i - 1], sn[2][i - 1])
        k1 = f(y, c, bi, si)
        k2 = f([yj - hh * kj for yj, kj in zip(y, k1)], c, bh, sh)
        k3 = f([yj - hh * kj for yj, kj in zip(y, k2)], c, bh, sh)
        k4 = f([yj - h * kj for yj, kj in zip(y, k3)], c, bl, sl)
        y = tuple(yj - h6 * (p + 2.0 * (q + r) + s) for yj, p, q, r, s in zip(y, k1, k2, k3, k4))
        _check(y, float(grid[i - 1]))
        values[i - 1] = y
    return np.array(values)


def _nodal_derivatives(spec, grid, values):
    """First and second time derivatives of the coefficients at the nodes.

    The first comes straight from the ODE right-hand side; the second is its
    total derivative along the solution, taken by complex-step so that it
    is exact to rounding.
    """
    c = float(spec.c)
    a = tuple(values.T)
    b = spec.supply_drift.components(grid)
    s = spec.supply_vol.components(grid)
    first = np.array(rhs(a, c, b, s)).T

    eps = 1e-30
    db = spec.supply_drift.component_derivatives(grid)
    ds = spec.supply_vol.component_derivatives(grid)
    a_c = tuple(ai + 1j * eps * fi for ai, fi in zip(a, first.T))
    b_c = tuple(bi + 1j * eps * dbi for bi, dbi in zip(b, db))
    s_c = tuple(si + 1j * eps * dsi for si, dsi in zip(s, ds))
    second = np.array([np.imag(v) / eps for v in rhs(a_c, c, b_c, s_c)]).T
    return first, second


# quintic Hermite basis on [0, 1] and its derivative
def _basis(s):
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    s5 = s4 * s
    return (
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
        0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
        0.5 * s3 - s4 + 0.5 * s5,
        -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
    )


def _basis_ds(s):
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    return (
        -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
        1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
        s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4,
        1.5 * s2 - 4.0 * s3 + 2.5 * s4,
        -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
        30.0 * s2 - 60.0 * s3 + 30.0 * s4,
    )


@dataclass
class CoefficientPath:
    """Ten coefficient trajectories on a uniform grid.

    Between nodes the coefficients are read off a piecewise quintic Hermite
    interpolant that matches the nodal values, the ODE right-hand side and
    its time derivative, so interpolation error stays below the RK4 error.
    """

    grid: np.ndarray
    values: np.ndarray
    step: float
    slopes: np.ndarray
    curvatures: np.ndarray

    @property
    def T(self):
        return float(self.grid[-1])

    def __getitem__(self, name):
        return self.values[:, COEFF_NAMES.index(name)]

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.grid[0] - TIME_TOL) or np.any(t > self.grid[-1] + TIME_TOL):
            raise TimeRangeError(f"t outside the solved range [{self.grid[0]}, {self.grid[-1]}]")
        t = np.clip(t, self.grid[0], self.grid[-1])
        n = len(self.grid) - 1
        idx = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, n - 1)
        lo, hi = self.grid[idx], self.grid[idx + 1]
        return t, idx, (t - lo) / (hi - lo), hi - lo

    def _combine(self, idx, weights, h, deriv):
        v, d1, d2 = self.values, self.slopes, self.curvatures
        h = np.asarray(h)[..., None]
        w = [np.asarray(wk)[..., None] for wk in weights]
        out = (
            w[0] * v[idx] + w[1] * h * d1[idx] + w[2] * h * h * d2[idx]
            + w[3] * h * h * d2[idx + 1] + w[4] * h * d1[idx + 1] + w[5] * v[idx + 1]
        )
        return out / h if deriv else out

    def at(self, t):
        """Coefficient ten-vector(s) at time(s) t; shape (10,) or (m, 10)."""
        t, idx, s, h = self._locate(t)
        out = self._combine(idx, _basis(s), h, deriv=False)
        # exact nodal values (keeps the terminal condition bitwise)
        on_node = self.grid[idx + 1] == t
        if np.any(on_node):
            out = np.where(on_node[..., None], self.values[idx + 1], out)
        on_node = self.grid[idx] == t
        if np.any(on_node):
            out = np.where(on_node[..., None], self.values[idx], out)
        return out

    def rate(self, t):
        """Time derivative of the interpolated coefficients."""
        t, idx, s, h = self._locate(t)
        return self._combine(idx, _basis_ds(s), h, deriv=True)

    def to_csv(self, path):
        write_csv(path, ("t",) + COEFF_NAMES, [self.grid] + list(self.values.T))


def solve_coefficients(spec: ModelSpec, step: float | None = None) -> CoefficientPath:
    """Integrate the ten-equation system backward from t = T with RK4.

    ``step`` defaults to 1e-3 T.  Raises BlowUpError if a2_1 explodes inside
    [0, T] (detected up front from its closed form) or any coefficient
    passes the overflow guard, and SingularityError if 1 + a2_3 falls below
    the floor.
    """
    ensure_valid(spec)
    if step is None:
        step = 1e-3 * spec.T
    grid = uniform_grid(spec.T, step)
    y_T = psi_to_terminal_conditions(spec.terminal)
    t_star = riccati_blowup_time(spec.c, spec.terminal.c2[0], spec.T)
    if t_star is not None and t_star >= 0.0:
        raise BlowUpError("Riccati blow-up of a2_1: c + 2 c2_1 (T - t) vanishes", t=t_star)
    values = _rk4_backward(spec, grid, y_T)
    first, second = _nodal_derivatives(spec, grid, values)
    return CoefficientPath(grid, values, float(grid[1] - grid[0]), first, second)


def solve_a22_a23(spec: ModelSpec, grid):
    """Integrate the linear 2x2 block for (a2_2, a2_3) with a2_1 in closed form."""
    grid = np.asarray(grid, dtype=float)
    c, T = float(spec.c), float(spec.T)
    c21, c22, c23 = spec.terminal.c2[0], spec.terminal.c2[1], spec.terminal.c2[2]
    h = grid[1] - grid[0]
    mids = grid[:-1] + 0.5 * h
    a21n = a21_closed_form(c, c21, T, grid)
    a21m = a21_closed_form(c, c21, T, mids)
    b1n, b2n = spec.supply_drift.k1(grid), spec.supply_drift.k2(grid)
    b1m, b2m = spec.supply_drift.k1(mids), spec.supply_drift.k2(mids)
    b1n, b2n = np.broadcast_to(b1n, grid.shape), np.broadcast_to(b2n, grid.shape)
    b1m, b2m = np.broadcast_to(b1m, mids.shape), np.broadcast_to(b2m, mids.shape)

    def f(y, a21, b1, b2):
        p, r = y
        g = 2.0 * a21 / c
        return ((-b1 + g) * p + c * b1 * r, -b2 * p + (c * b2 + g) * r + g)

    n = len(grid) - 1
    a22 = np.empty(n + 1)
    a23 = np.empty(n + 1)
    y = (c22, c23)
    a22[n], a23[n] = y
    for i in range(n, 0, -1):
        k1 = f(y, a21n[i], b1n[i], b2n[i])
        k2 = f((y[0] - 0.5 * h * k1[0], y[1] - 0.5 * h * k1[1]), a21m[i - 1], b1m[i - 1], b2m[i - 1])
        k3 = f((y[0] - 0.5 * h * k2[0], y[1] - 0.5 * h * k2[1]), a21m[i - 1], b1m[i - 1], b2m[i - 1])
        k4 = f((y[0] - h * k3[0], y[1] - h * k3[1]), a21n[i - 1], b1n[i - 1], b2n[i - 1])
        y = tuple(y[j] - h * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0 for j in range(2))
        a22[i - 1], a23[i - 1] = y
    return a22, a23


class _Scaled:
    def __init__(self, fn, factor):
        self.fn, self.factor = fn, factor

    def __call__(self, t):
        return self.factor * self.fn(t)

    def derivative(self, t):
        return self.factor * self.fn.derivative(t)


class _VolatilityTransfer:
    """t -> -sigma^S_i(t) (c + a2_2(t)) / (1 + a2_3(t))."""

    def __init__(self, fn, rule):
        self.fn, self.rule = fn, rule

    def __call__(self, t):
        return -self.fn(t) * self.rule.vol_ratio(t)


@dataclass
class PricingRule:
    bP: AffineCoeff
    sigmaP: AffineCoeff
    w_bar: float
    c: float
    coeffs: CoefficientPath

    def vol_ratio(self, t):
        """(c + a2_2(t)) / (1 + a2_3(t))."""
        a = self.coeffs.at(t)
        out = (self.c + a[..., A22]) / (1.0 + a[..., A23])
        return float(out) if np.ndim(out) == 0 else out


def initial_price(spec, coeffs):
    a = coeffs.values[0]
    denom = 1.0 + a[A23]
    if not abs(denom) >= SINGULARITY_FLOOR:
        raise SingularityError("1 + a2_3(0) is too close to zero to fix the initial price", t=0.0)
    return -(a[A11] + 2.0 * a[A21] * spec.agents.mean + (a[A22] + spec.c) * spec.q_bar) / denom


def derive_pricing_rule(spec: ModelSpec, coeffs: CoefficientPath) -> PricingRule:
    """Price drift b^P = -c b^S, volatility sigma^P = -sigma^S (c + a2_2)/(1 + a2_3), and w_bar."""
    c = float(spec.c)
    sd = spec.supply_drift
    bP = AffineCoeff(_Scaled(sd.k0, -c), _Scaled(sd.k1, -c), _Scaled(sd.k2, -c))
    rule = PricingRule(bP, None, initial_price(spec, coeffs), c, coeffs)
    sv = spec.supply_vol
    rule.sigmaP = AffineCoeff(*(_VolatilityTransfer(k, rule) for k in (sv.k0, sv.k1, sv.k2)))
    return rule


@dataclass
class ResidualStats:
    max: float
    mean_abs: float
    values: np.ndarray


def hjb_terms(spec, a, a_t, x, q, w, t, rule):
    """-u_t + (w+u_x)^2/(2c) - b^P u_w - b^S u_q - (sigma^P)^2 u_ww/2 - (sigma^S)^2 u_qq/2 - sigma^P sigma^S u_wq."""
    c = spec.c
    u_t = (
        a_t[..., A0] + a_t[..., A11] * x + a_t[..., A12] * q + a_t[..., A13] * w
        + a_t[..., A21] * x * x + a_t[..., A22] * x * q + a_t[..., A23] * x * w
        + a_t[..., A24] * q * q + a_t[..., A25] * q * w + a_t[..., A26] * w * w
    )
    u_x = a[..., A11] + 2.0 * a[..., A21] * x + a[..., A22] * q + a[..., A23] * w
    u_q = a[..., A12] + a[..., A22] * x + 2.0 * a[..., A24] * q + a[..., A25] * w
    u_w = a[..., A13] + a[..., A23] * x + a[..., A25] * q + 2.0 * a[..., A26] * w
    u_qq = 2.0 * a[..., A24]
    u_ww = 2.0 * a[..., A26]
    u_qw = a[..., A25]
    bS = spec.supply_drift(t, q, w)
    sS = spec.supply_vol(t, q, w)
    bP = rule.bP(t, q, w)
    sP = rule.sigmaP(t, q, w)
    return (
        -u_t + (w + u_x) ** 2 / (2.0 * c)
        - bP * u_w - bS * u_q
        - 0.5 * sP * sP * u_ww - 0.5 * sS * sS * u_qq - sP * sS * u_qw
    )


def hjb_residual(spec, coeffs, rule, samples, time_derivative="interpolant") -> ResidualStats:
    """HJB residual of the quadratic ansatz at states ``samples`` = rows of (x, q, w, t).

    With ``time_derivative="interpolant"`` u_t is the time derivative of the
    computed coefficient trajectories (Hermite data built from the ODE
    right-hand side), so the residual measures how well the numerical u
    solves the PDE.  With ``"rhs"`` u_t is the right-hand side evaluated at
    the interpolated coefficients; the residual is then zero up to rounding
    unless the ODE system and the PDE disagree.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    x, q, w, t = samples.T
    a = coeffs.at(t)
    if time_derivative == "interpolant":
        a_t = coeffs.rate(t)
    elif time_derivative == "rhs":
        b = spec.supply_drift.components(t)
        s = spec.supply_vol.components(t)
        b = tuple(np.broadcast_to(v, t.shape) for v in b)
        s = tuple(np.broadcast_to(v, t.shape) for v in s)
        a_t = np.array(rhs(tuple(a.T), spec.c, b, s)).T
    else:
        raise ValueError(f"unknown time_derivative {time_derivative!r}")
    r = hjb_terms(spec, a, a_t, x, q, w, t, rule)
    r = np.abs(r)
    return ResidualStats(float(r.max()), float(r.mean()), r)
