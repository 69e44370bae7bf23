"""LQ model instance: affine supply dynamics, quadratic terminal cost, initial data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import ModelValidationError

COEFF_NAMES = ("a0", "a1_1", "a1_2", "a1_3", "a2_1", "a2_2", "a2_3", "a2_4", "a2_5", "a2_6")


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t):
        if np.ndim(t) == 0:
            return self.value
        return np.full(np.shape(t), self.value)

    def derivative(self, t):
        if np.ndim(t) == 0:
            return 0.0
        return np.zeros(np.shape(t))

    def samples(self):
        return np.array([self.value])


@dataclass(frozen=True)
class Tabulated:
    """Samples on a uniform grid over [0, T], linearly interpolated."""

    T: float
    values: tuple

    def __post_init__(self):
        if len(self.values) < 2:
            raise ValueError("a tabulated coefficient needs at least two samples")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def grid(self):
        return np.linspace(0.0, self.T, len(self.values))

    def __call__(self, t):
        out = np.interp(t, self.grid, self.values)
        return float(out) if np.ndim(t) == 0 else out

    def derivative(self, t):
        vals = np.asarray(self.values)
        n = len(vals) - 1
        slopes = np.diff(vals) / (self.T / n)
        idx = np.clip(np.floor(np.asarray(t, dtype=float) / (self.T / n)).astype(int), 0, n - 1)
        out = slopes[idx]
        return float(out) if np.ndim(t) == 0 else out

    def samples(self):
        return np.asarray(self.values)


def as_time_function(value):
    if isinstance(value, (Constant, Tabulated)) or callable(value):
        return value
    return Constant(float(value))


@dataclass(frozen=True)
class AffineCoeff:
    """k0(t) + k1(t) q + k2(t) w."""

    k0: object = 0.0
    k1: object = 0.0
    k2: object = 0.0

    def __post_init__(self):
        for name in ("k0", "k1", "k2"):
            object.__setattr__(self, name, as_time_function(getattr(self, name)))

    @classmethod
    def constant(cls, k0=0.0, k1=0.0, k2=0.0):
        return cls(Constant(float(k0)), Constant(float(k1)), Constant(float(k2)))

    def components(self, t):
        return self.k0(t), self.k1(t), self.k2(t)

    def component_derivatives(self, t):
        return tuple(_derivative(k, t) for k in (self.k0, self.k1, self.k2))

    def __call__(self, t, q, w):
        k0, k1, k2 = self.components(t)
        return k0 + k1 * q + k2 * w

    def is_zero(self):
        return all(
            isinstance(k, Constant) and k.value == 0.0 for k in (self.k0, self.k1, self.k2)
        )


def _derivative(fn, t):
    if hasattr(fn, "derivative"):
        return fn.derivative(t)
    raise TypeError(f"time function {fn!r} has no derivative")


@dataclass(frozen=True)
class TerminalCost:
    """Psi(x,q,w) = c0 + c1.(x,q,w) + c2[0] x^2 + c2[1] xq + c2[2] xw + c2[3] q^2 + c2[4] qw + c2[5] w^2."""

    c0: float = 0.0
    c1: tuple = (0.0, 0.0, 0.0)
    c2: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        # + 0.0 folds -0.0 into 0.0 so equal costs print identically
        object.__setattr__(self, "c0", float(self.c0) + 0.0)
        object.__setattr__(self, "c1", tuple(float(v) + 0.0 for v in self.c1))
        object.__setattr__(self, "c2", tuple(float(v) + 0.0 for v in self.c2))
        if len(self.c1) != 3 or len(self.c2) != 6:
            raise ValueError("TerminalCost needs 3 linear and 6 quadratic coefficients")

    @classmethod
    def storage_target(cls, alpha, weight=1.0):
        """weight * (x - alpha)^2."""
        return cls(weight * alpha * alpha, (-2.0 * weight * alpha, 0.0, 0.0), (weight, 0, 0, 0, 0, 0))

    def __call__(self, x, q, w):
        c1, c2 = self.c1, self.c2
        return (
            self.c0
            + c1[0] * x + c1[1] * q + c1[2] * w
            + c2[0] * x * x + c2[1] * x * q + c2[2] * x * w
            + c2[3] * q * q + c2[4] * q * w + c2[5] * w * w
        )

    def shifted(self, alpha):
        """Return Psi(x - alpha, q, w): the same preferences around storage target alpha."""
        c1, c2 = self.c1, self.c2
        return TerminalCost(
            self.c0 - c1[0] * alpha + c2[0] * alpha * alpha,
            (c1[0] - 2.0 * c2[0] * alpha, c1[1] - c2[1] * alpha, c1[2] - c2[2] * alpha),
            c2,
        )

    def as_vector(self):
        return (self.c0, *self.c1, *self.c2)


@dataclass(frozen=True)
class InitialDistribution:
    """Initial law of agent holdings.

    ``family`` is ``"gaussian"`` with ``params = (mean, variance)`` or
    ``"samples"`` with ``params`` the explicit sample list (drawn with
    replacement).  Only the mean enters the analytic pipeline.
    """

    family: str = "gaussian"
    params: tuple = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @classmethod
    def gaussian(cls, mean=0.0, variance=1.0, seed=0):
        return cls("gaussian", (mean, variance), seed)

    @classmethod
    def from_samples(cls, samples, seed=0):
        return cls("samples", tuple(samples), seed)

    @property
    def mean(self):
        if self.family == "gaussian":
            return self.params[0]
        return math.fsum(self.params) / len(self.params)

    def problems(self):
        out = []
        if self.family == "gaussian":
            if len(self.params) != 2:
                out.append("gaussian sampler needs (mean, variance)")
            elif not all(math.isfinite(p) for p in self.params):
                out.append("gaussian sampler parameters must be finite")
            elif self.params[1] < 0:
                out.append("gaussian variance must be non-negative")
        elif self.family == "samples":
            if len(self.params) == 0:
                out.append("sample list must be non-empty")
            elif not all(math.isfinite(p) for p in self.params):
                out.append("sample list must be finite")
        else:
            out.append(f"unknown sampler family {self.family!r}")
        if self.seed < 0:
            out.append("sampler seed must be non-negative")
        return out

    def sample(self, n, generator=None):
        if generator is None:
            generator = rng.generator(self.seed, domain=rng.AGENTS)
        if self.family == "gaussian":
            mean, var = self.params
            return mean + math.sqrt(var) * generator.standard_normal(n)
        return generator.choice(np.asarray(self.params), size=n, replace=True)


@dataclass(frozen=True)
class ModelSpec:
    c: float
    T: float
    supply_drift: AffineCoeff
    supply_vol: AffineCoeff
    terminal: TerminalCost
    q_bar: float
    agents: InitialDistribution = field(default_factory=InitialDistribution)

    def with_terminal(self, terminal):
        return replace(self, terminal=terminal)


@dataclass
class ValidationResult:
    violations: list

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def _finite_on(fn, T):
    ts = np.linspace(0.0, T, 1001)
    vals = np.asarray(fn(ts), dtype=float)
    ok = bool(np.all(np.isfinite(vals)))
    if isinstance(fn, Tabulated):
        ok = ok and bool(np.all(np.isfinite(fn.samples())))
    return ok


def validate(spec: ModelSpec) -> ValidationResult:
    v = []
    if not (isinstance(spec.c, (int, float)) and math.isfinite(spec.c) and spec.c > 0):
        v.append("c must be positive")
    if not (isinstance(spec.T, (int, float)) and math.isfinite(spec.T) and spec.T > 0):
        v.append("T must be positive")
    if not math.isfinite(spec.q_bar):
        v.append("q_bar must be finite")
    if not all(math.isfinite(x) for x in spec.terminal.as_vector()):
        v.append("terminal cost coefficients must be finite")
    if not v:
        for label, coeff in (("supply_drift", spec.supply_drift), ("supply_vol", spec.supply_vol)):
            for name in ("k0", "k1", "k2"):
                fn = getattr(coeff, name)
                if isinstance(fn, Tabulated) and fn.T != spec.T:
                    v.append(f"{label}.{name} is tabulated over [0, {fn.T}] but T = {spec.T}")
                elif not _finite_on(fn, spec.T):
                    v.append(f"{label}.{name} must be finite on [0, T]")
    v.extend(spec.agents.problems())
    return ValidationResult(v)


def ensure_valid(spec):
    result = validate(spec)
    if not result.ok:
        raise ModelValidationError(result.violations)
    return spec


def psi_to_terminal_conditions(terminal: TerminalCost) -> tuple:
    """Terminal values of the ten ansatz coefficients, ordered as ``COEFF_NAMES``.

    Each equals a derivative of Psi at the origin (half the pure second
    derivatives for the squares), which for a quadratic Psi is just its
    coefficient.
    """
    return terminal.as_vector()


def fig1_spec(alpha=0.0, seed=0) -> ModelSpec:
    """c=1, T=1, Psi=(x-alpha)^2, standard normal agents, q_bar=1, dQ=(1-Q)dt+Q dW."""
    return ModelSpec(
        c=1.0,
        T=1.0,
        supply_drift=AffineCoeff.constant(1.0, -1.0, 0.0),
        supply_vol=AffineCoeff.constant(0.0, 1.0, 0.0),
        terminal=TerminalCost.storage_target(alpha),
        q_bar=1.0,
        agents=InitialDistribution.gaussian(0.0, 1.0, seed),
    )
