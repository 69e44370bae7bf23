"""Verification suite run by ``mfgprice verify`` and by ``--strict``.

Each check returns a :class:`Check`; numbering follows the project's
acceptance list in the README.
"""

from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from .coefficients import (
    A21,
    a21_closed_form,
    derive_pricing_rule,
    hjb_residual,
    rhs,
    solve_coefficients,
)
from .experiment import run_experiment, write_artifacts
from .model import psi_to_terminal_conditions
from .simulate import (
    clearing_residual,
    convergence_order,
    make_noise,
    simulate_agents,
    simulate_supply_price,
    transport_weak_residual,
)
from .value import value

HJB_STEPS = (10, 20, 40, 80)


@dataclass
class Check:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2}. {self.name}: {self.detail}"


def hjb_states(T, n=100, seed=0):
    """Scrambled Halton points in [-3, 3]^3 x [0, T]."""
    u = qmc.Halton(d=4, scramble=True, seed=seed).random(n)
    lo, hi = np.array([-3.0, -3.0, -3.0, 0.0]), np.array([3.0, 3.0, 3.0, T])
    return qmc.scale(u, lo, hi)


def reference_t0(spec):
    """Ten-vector at t=0 from an adaptive 8th-order integrator at tight tolerance."""
    c = spec.c

    def f(t, y):
        return rhs(y, c, spec.supply_drift.components(t), spec.supply_vol.components(t))

    sol = solve_ivp(f, (spec.T, 0.0), psi_to_terminal_conditions(spec.terminal),
                    method="DOP853", rtol=1e-13, atol=1e-14)
    return sol.y[:, -1]


def check_closed_form(cfg):
    worst, slowest = 0.0, 0.0
    for alpha in cfg.alphas:
        spec = cfg.spec_for(alpha)
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            coeffs = solve_coefficients(spec, cfg.dt_ode)
            times.append(time.perf_counter() - t0)
        exact = a21_closed_form(spec.c, spec.terminal.c2[0], spec.T, coeffs.grid)
        worst = max(worst, float(np.max(np.abs(coeffs.values[:, A21] - exact))))
        slowest = max(slowest, min(times))
    return Check(1, "a2_1 vs closed form", worst < 1e-8 and slowest < 0.1,
                 f"max error {worst:.2e} (< 1e-08), solve time {slowest:.3f}s (< 0.1s)")


def check_reference(cfg):
    worst = 0.0
    for alpha in cfg.alphas:
        spec = cfg.spec_for(alpha)
        got = solve_coefficients(spec, cfg.dt_ode).values[0]
        worst = max(worst, float(np.max(np.abs(got - reference_t0(spec)))))
    return Check(2, "t=0 coefficients vs reference integration", worst < 1e-8,
                 f"max componentwise error {worst:.2e} (< 1e-08)")


def check_hjb(cfg):
    worst, orders = 0.0, []
    for alpha in cfg.alphas:
        spec = cfg.spec_for(alpha)
        states = hjb_states(spec.T)
        coeffs = solve_coefficients(spec, cfg.dt_ode)
        worst = max(worst, hjb_residual(spec, coeffs, derive_pricing_rule(spec, coeffs), states).max)
        errs = []
        for n in HJB_STEPS:
            cf = solve_coefficients(spec, spec.T / n)
            errs.append(hjb_residual(spec, cf, derive_pricing_rule(spec, cf), states).max)
        orders.append(convergence_order([spec.T / n for n in HJB_STEPS], errs))
    order = min(orders)
    return Check(3, "HJB residual", worst < 1e-6 and order >= 3.5,
                 f"max residual {worst:.2e} (< 1e-06), measured order {order:.2f} (>= 3.5)")


def check_terminal(cfg):
    gen = np.random.default_rng(cfg.seed)
    worst = 0.0
    for alpha in cfg.alphas:
        spec = cfg.spec_for(alpha)
        coeffs = solve_coefficients(spec, cfg.dt_ode)
        x, q, w = gen.uniform(-3, 3, (3, 100))
        u = value(coeffs, (x, q, w, np.full(100, spec.T)))
        psi = spec.terminal(x, q, w)
        worst = max(worst, float(np.max(np.abs(u - psi) / (1.0 + np.abs(psi)))))
    return Check(4, "terminal exactness u(T) = Psi", worst <= 4 * np.finfo(float).eps,
                 f"max relative deviation {worst:.1e}")


def _clearing_levels(cfg, alpha, factors=(4, 2, 1)):
    spec = cfg.spec_for(alpha)
    coeffs = solve_coefficients(spec, cfg.dt_ode)
    rule = derive_pricing_rule(spec, coeffs)
    base = make_noise(cfg.seed, spec.T, cfg.dt_sde)
    out = []
    for f in factors:
        noise = base.coarsen(f)
        Q, P = simulate_supply_price(spec, rule, noise)
        ens = simulate_agents(spec, coeffs, Q, P, cfg.particles, noise=noise)
        out.append((noise.dt, spec, coeffs, rule, ens))
    return out


def check_clearing_t0(result):
    worst = 0.0
    for r in result.runs:
        res, _ = clearing_residual(result.config.spec_for(r.alpha), r.ensemble)
        worst = max(worst, float(res[0]))
    return Check(5, "clearing at t=0", worst < 1e-12, f"max |r(0)| {worst:.1e} (< 1e-12)")


def check_clearing_path(cfg):
    t0 = time.perf_counter()
    spec = cfg.spec_for(cfg.alphas[0])
    coeffs = solve_coefficients(spec, cfg.dt_ode)
    rule = derive_pricing_rule(spec, coeffs)
    noise = make_noise(cfg.seed, spec.T, cfg.dt_sde)
    Q, P = simulate_supply_price(spec, rule, noise)
    ens = simulate_agents(spec, coeffs, Q, P, cfg.particles, noise=noise)
    _, sup = clearing_residual(spec, ens)
    elapsed = time.perf_counter() - t0

    levels = _clearing_levels(cfg, cfg.alphas[0])
    sups = [clearing_residual(lv[1], lv[4])[1] for lv in levels]
    ratios = [sups[i] / sups[i + 1] for i in range(len(sups) - 1)]
    order = convergence_order([lv[0] for lv in levels], sups)
    ok = sup < 1e-2 and 0.8 <= order <= 1.2 and all(1.6 <= q <= 2.4 for q in ratios) and elapsed < 10
    return Check(6, "path-wise clearing", ok,
                 f"sup {sup:.2e} (< 1e-02), halving ratios {', '.join(f'{q:.2f}' for q in ratios)} "
                 f"(in [1.6, 2.4]), order {order:.2f} (in [0.8, 1.2]), runtime {elapsed:.2f}s (< 10s)")


def check_martingale(result):
    t_stats = [r.report.martingale.t_stat for r in result.runs]
    r2 = [r.report.martingale.r_squared for r in result.runs]
    worst_t = max(abs(t) for t in t_stats)
    # R^2 is undefined (nan) when Pi has no diffusion at all
    fitted = [v for v in r2 if not math.isnan(v)]
    ok = worst_t < 4 and all(v > 0.999 for v in fitted)
    r2_text = f"{min(fitted):.6f}" if fitted else "n/a"
    return Check(7, "Pi is a martingale", ok, f"max |t| {worst_t:.2f} (< 4), min R^2 {r2_text} (> 0.999)")


def check_transport(cfg):
    levels = _clearing_levels(cfg, cfg.alphas[0], factors=(8, 4, 2, 1))
    per = {}
    for dt, spec, coeffs, rule, ens in levels:
        for name, (mx, _) in transport_weak_residual(spec, coeffs, rule, ens).items():
            per.setdefault(name, []).append(mx)
    steps = [lv[0] for lv in levels]
    ok, parts = True, []
    for name, errs in per.items():
        if max(errs) < 1e-10:
            parts.append(f"{name}: exact ({max(errs):.0e})")
            continue
        order = convergence_order(steps, errs)
        ok &= 0.8 <= order <= 1.2
        parts.append(f"{name}: order {order:.2f}")
    return Check(8, "weak transport residual", ok, "; ".join(parts))


def check_fig1(result, elapsed):
    corr = [r.report.correlation for r in result.runs]
    pairs = sorted((r.alpha, r.rule.w_bar) for r in result.runs)
    increasing = all(b[1] > a[1] for a, b in zip(pairs, pairs[1:]))
    dev = result.offset_deviation
    ok = all(c < 0 for c in corr) and increasing and (dev is None or dev < 1e-12) and elapsed < 30
    dev_text = "n/a (supply depends on price)" if dev is None else f"{dev:.1e} (< 1e-12)"
    return Check(9, "figure-1 properties", ok,
                 f"corr(Q,price) {', '.join(f'{c:+.3f}' for c in corr)} (< 0); "
                 f"w_bar increasing in alpha: {increasing}; offset deviation {dev_text}; "
                 f"runtime {elapsed:.1f}s (< 30s)")


def check_determinism(cfg):
    with tempfile.TemporaryDirectory() as tmp:
        dirs = []
        for threads in (1, 4):
            d = Path(tmp) / f"threads{threads}"
            write_artifacts(run_experiment(cfg, threads=threads), d)
            dirs.append(d)
        names = sorted(p.name for p in dirs[0].iterdir())
        same = names == sorted(p.name for p in dirs[1].iterdir()) and all(
            filecmp.cmp(dirs[0] / n, dirs[1] / n, shallow=False) for n in names)
    return Check(10, "byte-identical reruns across thread counts", same,
                 f"{len(names)} files compared")


def run_checks(cfg, result=None, elapsed=None, determinism=True):
    if result is None:
        t0 = time.perf_counter()
        result = run_experiment(cfg)
        elapsed = time.perf_counter() - t0
    checks = [
        check_closed_form(cfg),
        check_reference(cfg),
        check_hjb(cfg),
        check_terminal(cfg),
        check_clearing_t0(result),
        check_clearing_path(cfg),
        check_martingale(result),
        check_transport(cfg),
        check_fig1(result, elapsed if elapsed is not None else 0.0),
    ]
    if determinism:
        checks.append(check_determinism(cfg))
    return checks
