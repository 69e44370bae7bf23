import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgprice.errors import ModelValidationError
from mfgprice.model import (
    AffineCoeff,
    InitialDistribution,
    ModelSpec,
    Tabulated,
    TerminalCost,
    ensure_valid,
    fig1_spec,
    psi_to_terminal_conditions,
    validate,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_fig1_spec_is_valid():
    assert validate(fig1_spec()).ok


@pytest.mark.parametrize("field, value, message", [
    ("c", 0.0, "c must be positive"),
    ("c", -1.0, "c must be positive"),
    ("T", 0.0, "T must be positive"),
    ("T", math.inf, "T must be positive"),
    ("q_bar", math.nan, "q_bar must be finite"),
])
def test_validate_rejects(field, value, message):
    result = validate(replace(fig1_spec(), **{field: value}))
    assert not result.ok
    assert message in result.violations


def test_validate_collects_all_violations():
    result = validate(replace(fig1_spec(), c=-1.0, T=-2.0))
    assert result.violations[:2] == ["c must be positive", "T must be positive"]
    with pytest.raises(ModelValidationError):
        ensure_valid(replace(fig1_spec(), c=-1.0))


def test_validate_flags_bad_sampler_and_tabulation():
    spec = ModelSpec(1.0, 1.0, AffineCoeff(Tabulated(2.0, (0.0, 1.0))), AffineCoeff(), TerminalCost(), 1.0,
                     InitialDistribution.gaussian(0.0, -1.0))
    v = validate(spec).violations
    assert any("tabulated over [0, 2.0]" in m for m in v)
    assert "gaussian variance must be non-negative" in v


def test_psi_storage_target():
    assert psi_to_terminal_conditions(TerminalCost.storage_target(0.5)) == (
        0.25, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_psi_cross_term():
    vec = psi_to_terminal_conditions(TerminalCost(c2=(0, 1, 0, 0, 0, 0)))
    assert vec == (0, 0, 0, 0, 0, 1, 0, 0, 0, 0)


def test_shift_matches_storage_target():
    base = TerminalCost.storage_target(0.0)
    assert base.shifted(0.25) == TerminalCost.storage_target(0.25)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=10, max_size=10), st.lists(finite, min_size=10, max_size=10),
       st.floats(-10, 10))
def test_psi_mapping_is_linear(u, v, lam):
    def cost(p):
        return TerminalCost(p[0], p[1:4], p[4:])

    mixed = [a + lam * b for a, b in zip(u, v)]
    got = psi_to_terminal_conditions(cost(mixed))
    want = [a + lam * b for a, b in zip(psi_to_terminal_conditions(cost(u)), psi_to_terminal_conditions(cost(v)))]
    assert got == pytest.approx(want, rel=1e-12, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=10, max_size=10), finite, finite, finite)
def test_terminal_vector_reproduces_psi(p, x, q, w):
    psi = TerminalCost(p[0], p[1:4], p[4:])
    a = psi_to_terminal_conditions(psi)
    monomials = (1, x, q, w, x * x, x * q, x * w, q * q, q * w, w * w)
    assert math.fsum(ai * m for ai, m in zip(a, monomials)) == pytest.approx(psi(x, q, w), rel=1e-12, abs=1e-6)


def test_gaussian_sampler_mean():
    dist = InitialDistribution.gaussian(0.0, 1.0, seed=42)
    x = dist.sample(10_000)
    assert abs(x.mean()) < 3.0 / math.sqrt(10_000)
    assert np.array_equal(x, dist.sample(10_000))


def test_sample_list_sampler():
    dist = InitialDistribution.from_samples([1.0, 2.0, 6.0], seed=1)
    assert dist.mean == 3.0
    assert set(np.unique(dist.sample(500))) <= {1.0, 2.0, 6.0}


def test_affine_coeff_tabulated():
    k = AffineCoeff(Tabulated(1.0, (0.0, 2.0)), 1.0, 0.0)
    assert k(0.5, 3.0, 0.0) == pytest.approx(4.0)
    assert k.component_derivatives(0.5)[0] == pytest.approx(2.0)
    assert not k.is_zero()
    assert AffineCoeff.constant().is_zero()


def test_signed_zero_is_normalized():
    assert str(TerminalCost.storage_target(0.0).c1[0]) == "0.0"
