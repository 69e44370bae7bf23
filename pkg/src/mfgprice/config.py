"""YAML experiment configs.

Schema (all numbers are read as 64-bit floats)::

    model:
      c: 1.0                    # trading-cost weight, > 0
      T: 1.0                    # horizon, > 0
      q_bar: 1.0                # initial supply
      supply_drift: {k0: 1.0, k1: -1.0, k2: 0.0}
      supply_vol:   {k0: 0.0, k1: 1.0,  k2: 0.0}
      terminal:                 # Psi before the storage-target shift
        c0: 0.0
        c1: [0.0, 0.0, 0.0]     # x, q, w
        c2: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]   # x^2, xq, xw, q^2, qw, w^2
      agents:
        family: gaussian        # or: samples
        mean: 0.0
        variance: 1.0
        # samples: [..]         # for family: samples
        # seed: 7               # defaults to experiment.seed
    experiment:
      alphas: [0.0, 0.1, 0.25, 0.5]
      seed: 42
      dt_ode: 0.001
      dt_sde: 0.001
      particles: 10000
      martingale_paths: 2000
      output_dir: out

Any k0/k1/k2 may be a list instead of a number: samples on a uniform grid
over [0, T], linearly interpolated.  Each alpha runs the model with
terminal cost Psi(x - alpha, q, w).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import yaml

from .errors import ModelValidationError
from .model import AffineCoeff, InitialDistribution, ModelSpec, Tabulated, TerminalCost, validate

OUTPUT_ENV = "MFGPRICE_OUTPUT_DIR"

_MODEL_KEYS = {"c", "T", "q_bar", "supply_drift", "supply_vol", "terminal", "agents"}
_EXPERIMENT_KEYS = {"alphas", "seed", "dt_ode", "dt_sde", "particles", "martingale_paths", "output_dir"}


class ConfigError(ModelValidationError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    alphas: tuple
    seed: int = 42
    dt_ode: float = 1e-3
    dt_sde: float = 1e-3
    particles: int = 10_000
    martingale_paths: int = 2000
    output_dir: str = "out"

    def spec_for(self, alpha):
        return self.model.with_terminal(self.model.terminal.shifted(alpha))


def fig1_config(seed=42, output_dir="out/fig1", dt_sde=1e-3, particles=10_000,
                martingale_paths=2000):
    from .model import fig1_spec

    base = fig1_spec(0.0, seed)
    return ExperimentConfig(base, (0.0, 0.1, 0.25, 0.5), seed, 1e-3, dt_sde, particles,
                            martingale_paths, output_dir)


def config_violations(cfg: ExperimentConfig):
    v = list(validate(cfg.model).violations)
    if len(cfg.alphas) == 0:
        v.append("alphas must be non-empty")
    if not all(math.isfinite(a) for a in cfg.alphas):
        v.append("alphas must be finite")
    for name in ("dt_ode", "dt_sde"):
        val = getattr(cfg, name)
        if not (math.isfinite(val) and val > 0):
            v.append(f"{name} must be positive")
    if cfg.particles < 2:
        v.append("particles must be at least 2")
    if cfg.martingale_paths < 100:
        v.append("martingale_paths must be at least 100")
    if cfg.seed < 0:
        v.append("seed must be non-negative")
    return v


# --- loading -------------------------------------------------------------

def _key_lines(node, prefix=(), out=None):
    """Map key paths to 1-based line numbers from a composed YAML node."""
    if out is None:
        out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    return out


class _Reader:
    def __init__(self, source, lines):
        self.source, self.lines, self.errors = source, lines, []

    def where(self, path):
        for i in range(len(path), 0, -1):
            if path[:i] in self.lines:
                return f"{self.source}:{self.lines[path[:i]]}"
        return f"{self.source}:1"

    def fail(self, path, msg):
        self.errors.append(f"{self.where(path)}: {'.'.join(str(p) for p in path)}: {msg}")

    def number(self, data, path, default=None, integer=False):
        key = path[-1]
        if key not in data:
            if default is None:
                self.fail(path, "missing required key")
                return math.nan
            return default
        raw = data[key]
        if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
            self.fail(path, f"expected a number, got {raw!r}")
            return math.nan
        try:
            val = float(raw)
        except ValueError:
            self.fail(path, f"expected a number, got {raw!r}")
            return math.nan
        if integer:
            if not val.is_integer():
                self.fail(path, f"expected an integer, got {raw!r}")
                return 0
            return int(val)
        return val

    def numbers(self, data, path, length=None, default=None):
        key = path[-1]
        if key not in data:
            if default is None:
                self.fail(path, "missing required key")
                return ()
            return default
        raw = data[key]
        if not isinstance(raw, list):
            self.fail(path, "expected a list of numbers")
            return ()
        out = [self.number({i: item}, path + (i,)) for i, item in enumerate(raw)]
        if length is not None and len(out) != length:
            self.fail(path, f"expected {length} numbers, got {len(out)}")
        return tuple(out)

    def mapping(self, data, path, allowed):
        key = path[-1]
        val = data.get(key) if isinstance(data, dict) else None
        if not isinstance(val, dict):
            self.fail(path, "expected a mapping")
            return {}
        for extra in sorted(set(val) - set(allowed), key=str):
            self.fail(path + (extra,), "unknown key")
        return val


def _time_function(reader, data, path, T):
    raw = data.get(path[-1], 0.0)
    if isinstance(raw, list):
        vals = reader.numbers(data, path)
        if len(vals) < 2:
            reader.fail(path, "a tabulated coefficient needs at least two samples")
            return 0.0
        return Tabulated(T, vals)
    return reader.number(data, path, default=0.0)


def parse_config(text, source="<config>", seed=None, dt_sde=None, particles=None):
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{source}:{line}: YAML syntax error: {exc.problem}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping with 'model' and 'experiment'")
    r = _Reader(source, _key_lines(node))
    for extra in sorted(set(data) - {"model", "experiment"}, key=str):
        r.fail((extra,), "unknown key")

    m = r.mapping(data, ("model",), _MODEL_KEYS)
    e = r.mapping(data, ("experiment",), _EXPERIMENT_KEYS)
    T = r.number(m, ("model", "T"))
    c = r.number(m, ("model", "c"))
    q_bar = r.number(m, ("model", "q_bar"))
    coeffs = {}
    for name in ("supply_drift", "supply_vol"):
        sub = r.mapping(m, ("model", name), {"k0", "k1", "k2"})
        Tt = T if math.isfinite(T) and T > 0 else 1.0
        coeffs[name] = AffineCoeff(*(_time_function(r, sub, ("model", name, k), Tt) for k in ("k0", "k1", "k2")))
    term = r.mapping(m, ("model", "terminal"), {"c0", "c1", "c2"})
    c0 = r.number(term, ("model", "terminal", "c0"), default=0.0)
    c1 = r.numbers(term, ("model", "terminal", "c1"), 3, default=(0.0,) * 3)
    c2 = r.numbers(term, ("model", "terminal", "c2"), 6, default=(0.0,) * 6)
    terminal = TerminalCost(c0, c1, c2) if len(c1) == 3 and len(c2) == 6 else TerminalCost()

    exp_seed = r.number(e, ("experiment", "seed"), default=42.0, integer=True)
    if seed is not None:
        exp_seed = seed
    ag = r.mapping(m, ("model", "agents"), {"family", "mean", "variance", "samples", "seed"})
    family = ag.get("family", "gaussian")
    ag_seed = r.number(ag, ("model", "agents", "seed"), default=float(exp_seed), integer=True)
    if family == "gaussian":
        agents = InitialDistribution.gaussian(
            r.number(ag, ("model", "agents", "mean"), default=0.0),
            r.number(ag, ("model", "agents", "variance"), default=1.0),
            ag_seed,
        )
    elif family == "samples":
        agents = InitialDistribution.from_samples(r.numbers(ag, ("model", "agents", "samples")), ag_seed)
    else:
        r.fail(("model", "agents", "family"), f"unknown sampler family {family!r}")
        agents = InitialDistribution()

    alphas = r.numbers(e, ("experiment", "alphas"))
    out_dir = str(e.get("output_dir", "out"))
    cfg = ExperimentConfig(
        model=ModelSpec(c, T, coeffs["supply_drift"], coeffs["supply_vol"], terminal, q_bar, agents),
        alphas=alphas,
        seed=exp_seed,
        dt_ode=r.number(e, ("experiment", "dt_ode"), default=1e-3 * (T if math.isfinite(T) else 1.0)),
        dt_sde=dt_sde if dt_sde is not None else r.number(e, ("experiment", "dt_sde"), default=1e-3),
        particles=particles if particles is not None else r.number(e, ("experiment", "particles"), default=10000.0, integer=True),
        martingale_paths=r.number(e, ("experiment", "martingale_paths"), default=2000.0, integer=True),
        output_dir=out_dir,
    )
    if r.errors:
        raise ConfigError(r.errors)

    anchors = {
        "c must be positive": ("model", "c"),
        "T must be positive": ("model", "T"),
        "q_bar must be finite": ("model", "q_bar"),
        "alphas must be non-empty": ("experiment", "alphas"),
        "alphas must be finite": ("experiment", "alphas"),
        "dt_ode must be positive": ("experiment", "dt_ode"),
        "dt_sde must be positive": ("experiment", "dt_sde"),
        "particles must be at least 2": ("experiment", "particles"),
        "martingale_paths must be at least 100": ("experiment", "martingale_paths"),
        "seed must be non-negative": ("experiment", "seed"),
    }
    problems = config_violations(cfg)
    if problems:
        raise ConfigError([
            f"{r.where(anchors.get(p, ('model',)))}: {p}" for p in problems
        ])
    return cfg


def load_config(path, **overrides):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cfg = parse_config(text, source=str(path), **overrides)
    return apply_env(cfg)


def apply_env(cfg):
    env = os.environ.get(OUTPUT_ENV)
    if env:
        cfg = replace(cfg, output_dir=env)
    return cfg


def _coeff_yaml(coeff):
    out = {}
    for k in ("k0", "k1", "k2"):
        fn = getattr(coeff, k)
        out[k] = list(fn.values) if isinstance(fn, Tabulated) else float(fn.value)
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    m = cfg.model
    ag = m.agents
    agents = {"family": ag.family, "seed": ag.seed}
    if ag.family == "gaussian":
        agents.update(mean=ag.params[0], variance=ag.params[1])
    else:
        agents["samples"] = list(ag.params)
    doc = {
        "model": {
            "c": m.c, "T": m.T, "q_bar": m.q_bar,
            "supply_drift": _coeff_yaml(m.supply_drift),
            "supply_vol": _coeff_yaml(m.supply_vol),
            "terminal": {"c0": m.terminal.c0, "c1": list(m.terminal.c1), "c2": list(m.terminal.c2)},
            "agents": agents,
        },
        "experiment": {
            "alphas": list(cfg.alphas), "seed": cfg.seed, "dt_ode": cfg.dt_ode,
            "dt_sde": cfg.dt_sde, "particles": cfg.particles,
            "martingale_paths": cfg.martingale_paths, "output_dir": cfg.output_dir,
        },
    }
    return yaml.safe_dump(doc, sort_keys=False)
