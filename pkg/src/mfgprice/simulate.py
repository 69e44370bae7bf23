"""Common-noise simulation of supply, price and the agent population.

One scalar Brownian motion drives everything.  Supply and price follow
Euler-Maruyama with left-point coefficients; agents have no idiosyncratic
noise and move with the optimal feedback rate along the shared (Q, price)
realization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .coefficients import A11, A21, A22, A23, CoefficientPath, PricingRule
from .errors import BlowUpError
from .model import ModelSpec

PATH_GUARD = 1e12


@dataclass
class NoisePath:
    """Brownian increments on a uniform grid.

    ``increments`` has shape (n,) for one realization or (M, n) for an
    ensemble whose row i was drawn from stream ``seed ^ indices[i]``.
    """

    dt: float
    increments: np.ndarray
    seed: int
    indices: tuple = (0,)

    @property
    def n_steps(self):
        return self.increments.shape[-1]

    @property
    def is_ensemble(self):
        return self.increments.ndim == 2

    def path(self):
        """W on the grid, starting at 0."""
        W = np.cumsum(self.increments, axis=-1)
        return np.concatenate([np.zeros(W.shape[:-1] + (1,)), W], axis=-1)

    def row(self, i):
        return NoisePath(self.dt, self.increments[i], self.seed, (self.indices[i],))

    def coarsen(self, factor):
        """Sum groups of ``factor`` consecutive increments (nested coarse path)."""
        n = self.n_steps
        if n % factor:
            raise ValueError(f"{n} steps are not divisible by {factor}")
        inc = self.increments.reshape(self.increments.shape[:-1] + (n // factor, factor)).sum(axis=-1)
        return NoisePath(self.dt * factor, inc, self.seed, self.indices)

    def refine(self, factor):
        """Split every increment into ``factor`` pieces by Brownian-bridge sampling.

        The refined path passes through the same grid values (up to rounding),
        so a coarse and a fine run share their realization.
        """
        if factor == 1:
            return self
        rows = np.atleast_2d(self.increments)
        out = np.empty((rows.shape[0], rows.shape[1] * factor))
        dt = self.dt / factor
        for r, (inc, idx) in enumerate(zip(rows, self.indices)):
            gen = rng.generator(self.seed, idx, domain=rng.BRIDGE)
            z = gen.standard_normal((len(inc), factor)) * math.sqrt(dt)
            z += (inc[:, None] - z.sum(axis=1, keepdims=True)) / factor
            out[r] = z.ravel()
        if not self.is_ensemble:
            out = out[0]
        return NoisePath(dt, out, self.seed, self.indices)


def _steps(T, dt):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"dt = {dt} does not divide T = {T}")
    return n


def make_noise(seed, T, dt, index=0) -> NoisePath:
    n = _steps(T, dt)
    gen = rng.generator(seed, index)
    return NoisePath(T / n, gen.standard_normal(n) * math.sqrt(T / n), seed, (index,))


def make_noise_ensemble(seed, T, dt, M, first_index=0) -> NoisePath:
    n = _steps(T, dt)
    h = T / n
    inc = np.empty((M, n))
    indices = tuple(range(first_index, first_index + M))
    for r, i in enumerate(indices):
        inc[r] = rng.generator(seed, i).standard_normal(n) * math.sqrt(h)
    return NoisePath(h, inc, seed, indices)


def time_grid(spec, noise):
    n = _steps(spec.T, noise.dt)
    if n != noise.n_steps:
        raise ValueError(f"noise has {noise.n_steps} steps but T/dt = {n}")
    return np.linspace(0.0, spec.T, n + 1)


def _coefficient_tables(spec, rule, times):
    """Left-point affine coefficients for supply and price at each step."""
    t = times[:-1]
    c = spec.c
    b = [np.broadcast_to(np.asarray(k, dtype=float), t.shape) for k in spec.supply_drift.components(t)]
    s = [np.broadcast_to(np.asarray(k, dtype=float), t.shape) for k in spec.supply_vol.components(t)]
    ratio = np.broadcast_to(rule.vol_ratio(t), t.shape)
    bP = [-c * bi for bi in b]
    sP = [-si * ratio for si in s]
    return b, s, bP, sP


def simulate_supply_price(spec: ModelSpec, rule: PricingRule, noise: NoisePath):
    """Euler-Maruyama for (Q, price) from (q_bar, w_bar) driven by ``noise``.

    Returns arrays of shape (n+1,) for a single realization or (M, n+1) for
    an ensemble.
    """
    times = time_grid(spec, noise)
    dt = times[1] - times[0]
    b, s, bP, sP = _coefficient_tables(spec, rule, times)
    n = len(times) - 1
    if noise.is_ensemble:
        dW = noise.increments.T
        Q = np.empty((n + 1, dW.shape[1]))
        P = np.empty_like(Q)
        q = np.full(dW.shape[1], float(spec.q_bar))
        p = np.full(dW.shape[1], float(rule.w_bar))
    else:
        # plain floats are much faster than 0-d arrays in this loop
        b, s, bP, sP = ([v.tolist() for v in group] for group in (b, s, bP, sP))
        dW = noise.increments.tolist()
        Q = [0.0] * (n + 1)
        P = [0.0] * (n + 1)
        q, p = float(spec.q_bar), float(rule.w_bar)
    Q[0], P[0] = q, p
    for k in range(n):
        dq = (b[0][k] + b[1][k] * q + b[2][k] * p) * dt + (s[0][k] + s[1][k] * q + s[2][k] * p) * dW[k]
        dp = (bP[0][k] + bP[1][k] * q + bP[2][k] * p) * dt + (sP[0][k] + sP[1][k] * q + sP[2][k] * p) * dW[k]
        q = q + dq
        p = p + dp
        Q[k + 1], P[k + 1] = q, p
    Q, P = np.asarray(Q), np.asarray(P)
    bad = ~(np.abs(Q) <= PATH_GUARD) | ~(np.abs(P) <= PATH_GUARD)
    if np.any(bad):
        k = int(np.argmax(bad.any(axis=1) if bad.ndim == 2 else bad))
        raise BlowUpError("supply/price path exceeded the overflow guard", t=float(times[k]))
    if noise.is_ensemble:
        return Q.T.copy(), P.T.copy()
    return Q, P


@dataclass
class PathEnsemble:
    """One common-noise realization with its particle cloud.

    ``X`` has shape (N, n+1).  ``Pi`` is built from the coefficient identity
    a1_1 + 2 a2_1 mean(X) + a2_2 Q + a2_3 price; ``Pi_particles`` is the
    direct particle average of u_x and must agree with it.
    """

    times: np.ndarray
    Q: np.ndarray
    price: np.ndarray
    X: np.ndarray
    Pi: np.ndarray
    mean_holdings: np.ndarray
    Pi_particles: np.ndarray
    dW: np.ndarray
    centered: bool = True

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def coefficient_columns(coeffs, times):
    a = coeffs.at(times)
    return a[:, A11], a[:, A21], a[:, A22], a[:, A23]


def sample_agents(spec, N, centered=True):
    x0 = spec.agents.sample(N)
    if centered:
        x0 = x0 - x0.mean() + spec.agents.mean
    return x0


def simulate_agents(spec: ModelSpec, coeffs: CoefficientPath, Q, price, N, noise=None,
                    centered=True, x0=None) -> PathEnsemble:
    """Move N particles with dX = v* dt along the given (Q, price) path.

    The initial sample is shifted so its empirical mean equals the mean of
    the initial law exactly (``centered=False`` keeps the raw draws).
    """
    if N < 2:
        raise ValueError("need at least two particles")
    Q, price = np.asarray(Q, dtype=float), np.asarray(price, dtype=float)
    n = len(Q) - 1
    times = np.linspace(0.0, spec.T, n + 1)
    dt = times[1] - times[0]
    a11, a21, a22, a23 = coefficient_columns(coeffs, times)
    c = spec.c
    if x0 is None:
        x0 = sample_agents(spec, N, centered)
    X = np.empty((n + 1, N))
    X[0] = x0
    Pi = np.empty(n + 1)
    Pi_p = np.empty(n + 1)
    xbar = np.empty(n + 1)
    for k in range(n + 1):
        xk = X[k]
        xbar[k] = xk.mean()
        ux = a11[k] + 2.0 * a21[k] * xk + a22[k] * Q[k] + a23[k] * price[k]
        Pi[k] = a11[k] + 2.0 * a21[k] * xbar[k] + a22[k] * Q[k] + a23[k] * price[k]
        Pi_p[k] = ux.mean()
        if k < n:
            X[k + 1] = xk - (price[k] + ux) / c * dt
    dW = None if noise is None else np.asarray(noise.increments)
    return PathEnsemble(times, Q, price, X.T, Pi, xbar, Pi_p, dW, centered)


def clearing_residual(spec, ensemble):
    """|Q_t + (price_t + Pi_t) / c| per time and its sup."""
    r = np.abs(ensemble.Q + (ensemble.price + ensemble.Pi) / spec.c)
    return r, float(r.max())


def pearson(a, b):
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class MartingaleStats:
    mean: float
    std_error: float
    t_stat: float
    r_squared: float
    pinned_slopes: np.ndarray
    increments: np.ndarray = field(repr=False)


def simulate_mean_field(spec, coeffs, rule, noise):
    """Supply, price, mean holdings and Pi for every row of ``noise``.

    The control is affine in x, so the population mean evolves on its own
    and no particles are needed.  Returns arrays of shape (M, n+1) plus the
    per-step diffusion coefficient a2_2 sigma^S + a2_3 sigma^P of Pi.
    """
    if not noise.is_ensemble:
        noise = NoisePath(noise.dt, noise.increments[None, :], noise.seed, noise.indices)
    Q, P = simulate_supply_price(spec, rule, noise)
    times = time_grid(spec, noise)
    dt = times[1] - times[0]
    a11, a21, a22, a23 = coefficient_columns(coeffs, times)
    M, n1 = Q.shape
    xbar = np.empty((M, n1))
    Pi = np.empty((M, n1))
    xbar[:, 0] = spec.agents.mean
    for k in range(n1):
        Pi[:, k] = a11[k] + 2.0 * a21[k] * xbar[:, k] + a22[k] * Q[:, k] + a23[k] * P[:, k]
        if k < n1 - 1:
            xbar[:, k + 1] = xbar[:, k] - (P[:, k] + Pi[:, k]) / spec.c * dt
    t = times[:-1]
    sS = spec.supply_vol(t, Q[:, :-1], P[:, :-1])
    sP = rule.sigmaP(t, Q[:, :-1], P[:, :-1])
    g = a22[:-1] * sS + a23[:-1] * sP
    return Q, P, xbar, Pi, g


def martingale_test(spec, coeffs, rule, M, dt, seed=0, pinned=10) -> MartingaleStats:
    """Test that Pi has no drift: statistics of Pi_T - Pi_0 over M realizations.

    Also regresses the increments of Pi on (a2_2 sigma^S + a2_3 sigma^P) dW;
    ``r_squared`` is the pooled fit quality and ``pinned_slopes`` the
    per-path slopes (ideal value 1) for the first ``pinned`` paths.
    """
    if M < 100:
        raise ValueError("martingale test needs at least 100 paths")
    noise = make_noise_ensemble(seed, spec.T, dt, M)
    _, _, _, Pi, g = simulate_mean_field(spec, coeffs, rule, noise)
    incr = Pi[:, -1] - Pi[:, 0]
    mean = float(incr.mean())
    se = float(incr.std(ddof=1) / math.sqrt(M))
    if se > 0:
        t_stat = mean / se
    else:
        t_stat = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)

    dPi = np.diff(Pi, axis=1)
    regressor = g * noise.increments
    denom = float(np.sum(regressor * regressor))
    if denom > 0:
        beta = float(np.sum(dPi * regressor)) / denom
        ss_res = float(np.sum((dPi - beta * regressor) ** 2))
        ss_tot = float(np.sum((dPi - dPi.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot
        k = min(pinned, M)
        slopes = np.sum(dPi[:k] * regressor[:k], axis=1) / np.sum(regressor[:k] ** 2, axis=1)
    else:
        r2 = math.nan
        slopes = np.full(min(pinned, M), math.nan)
    return MartingaleStats(mean, se, t_stat, r2, slopes, incr)


@dataclass(frozen=True)
class TestFunction:
    """psi(z) = const + lin.z + z^T quad z for z = (x, q, w)."""

    name: str
    const: float = 0.0
    lin: tuple = (0.0, 0.0, 0.0)
    quad: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    __test__ = False  # not a pytest class

    def __call__(self, x, q, w):
        z = (x, q, w)
        out = self.const + sum(self.lin[i] * z[i] for i in range(3))
        for i in range(3):
            for j in range(3):
                if self.quad[i][j]:
                    out = out + self.quad[i][j] * z[i] * z[j]
        return out

    def gradient(self, x, q, w):
        z = (x, q, w)
        return tuple(
            self.lin[i] + sum((self.quad[i][j] + self.quad[j][i]) * z[j] for j in range(3))
            for i in range(3)
        )


def _sym(i, j, v=1.0):
    m = [[0.0] * 3 for _ in range(3)]
    m[i][j] += v / 2.0
    m[j][i] += v / 2.0
    return tuple(tuple(r) for r in m)


TEST_FUNCTIONS = {
    "1": TestFunction("1", const=1.0),
    "x": TestFunction("x", lin=(1.0, 0.0, 0.0)),
    "q": TestFunction("q", lin=(0.0, 1.0, 0.0)),
    "w": TestFunction("w", lin=(0.0, 0.0, 1.0)),
    "x^2": TestFunction("x^2", quad=_sym(0, 0)),
    "xq": TestFunction("xq", quad=_sym(0, 1)),
    "xw": TestFunction("xw", quad=_sym(0, 2)),
}


def _affine_times_affine(f, g):
    """Product of two polynomials in x given as (c0, c1, c2) with c2 == 0."""
    return (f[0] * g[0], f[0] * g[1] + f[1] * g[0], f[1] * g[1])


def _poly_sum(*terms):
    return tuple(sum(t[i] for t in terms) for i in range(3))


def transport_weak_residual(spec, coeffs, rule, ensemble, test_functions=None):
    """Discrepancy in the weak form of the stochastic transport equation.

    For each test function psi, compares mean psi(mu_t) - mean psi(mu_0) with
    the left-point sums of the drift term (D psi . b + sigma^T A sigma, A the
    quadratic part of psi) times dt and of D psi . sigma times dW over the
    particle measure.  Returns ``{name: (max_t residual, per-time residual)}``.

    Every integrand is a polynomial of degree <= 2 in the holdings x with
    (q, w, t)-dependent coefficients, so its particle average is assembled
    from the empirical moments mean(x) and mean(x^2) of the cloud.
    """
    if test_functions is None:
        test_functions = list(TEST_FUNCTIONS.values())
    if ensemble.dW is None:
        raise ValueError("ensemble was simulated without its noise increments")
    times = ensemble.times
    dt = times[1] - times[0]
    m1 = ensemble.X.mean(axis=0)
    m2 = np.mean(ensemble.X * ensemble.X, axis=0)
    Q, P = ensemble.Q, ensemble.price
    zero = np.zeros_like(times)

    def const(v):
        return (np.broadcast_to(v, times.shape), zero, zero)

    def mean(poly):
        return poly[0] + poly[1] * m1 + poly[2] * m2

    a11, a21, a22, a23 = coefficient_columns(coeffs, times)
    v = (-(P + a11 + a22 * Q + a23 * P) / spec.c, -2.0 * a21 / spec.c, zero)
    z = ((zero, zero + 1.0, zero), const(Q), const(P))
    drift = (v, const(spec.supply_drift(times, Q, P)), const(rule.bP(times, Q, P)))
    vol = (const(0.0), const(spec.supply_vol(times, Q, P)), const(rule.sigmaP(times, Q, P)))

    result = {}
    for psi in test_functions:
        A, lin = psi.quad, psi.lin
        value_terms = [const(psi.const)] + [tuple(lin[i] * c for c in z[i]) for i in range(3)]
        value_terms += [tuple(A[i][j] * c for c in _affine_times_affine(z[i], z[j]))
                        for i in range(3) for j in range(3) if A[i][j]]
        grad = [
            _poly_sum(const(lin[i]), *[tuple(2.0 * A[i][j] * c for c in z[j])
                                       for j in range(3) if A[i][j]])
            for i in range(3)
        ]
        gen = _poly_sum(
            *[_affine_times_affine(grad[i], drift[i]) for i in range(3)],
            *[tuple(A[i][j] * c for c in _affine_times_affine(vol[i], vol[j]))
              for i in range(3) for j in range(3) if A[i][j]],
        )
        noise_term = _poly_sum(*[_affine_times_affine(grad[i], vol[i]) for i in range(3)])
        level = mean(_poly_sum(*value_terms))
        lhs = level - level[0]
        steps = mean(gen)[:-1] * dt + mean(noise_term)[:-1] * ensemble.dW
        rhs_ = np.concatenate([[0.0], np.cumsum(steps)])
        r = np.abs(lhs - rhs_)
        result[psi.name] = (float(r.max()), r)
    return result


def convergence_order(steps, errors):
    """Least-squares slope of log(error) against log(step)."""
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


@dataclass
class ClearingReport:
    clearing_residual: np.ndarray
    clearing_sup: float
    martingale: MartingaleStats | None
    transport_residuals: dict
    correlation: float

    def summary(self):
        out = {
            "clearing_sup": self.clearing_sup,
            "correlation_Q_price": self.correlation,
            "transport_residuals": {k: v[0] for k, v in self.transport_residuals.items()},
        }
        if self.martingale is not None:
            m = self.martingale
            out["martingale"] = {"mean": m.mean, "std_error": m.std_error,
                                 "t_stat": m.t_stat, "r_squared": m.r_squared}
        return out


def clearing_report(spec, coeffs, rule, ensemble, martingale=None, test_functions=None):
    r, sup = clearing_residual(spec, ensemble)
    transport = transport_weak_residual(spec, coeffs, rule, ensemble, test_functions)
    return ClearingReport(r, sup, martingale, transport, pearson(ensemble.Q, ensemble.price))
