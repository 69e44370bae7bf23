import numpy as np
import pytest
from golden_values import COEFFS_T0

from mfgprice.coefficients import A11, A21, A22, A23, solve_coefficients
from mfgprice.errors import TimeRangeError
from mfgprice.model import AffineCoeff, InitialDistribution, ModelSpec, TerminalCost
from mfgprice.simulate import sample_agents
from mfgprice.value import StateSample, hamiltonian, legendre_hamiltonian, optimal_control, u_x, value


def test_value_at_terminal_time_is_psi(fig1):
    spec, coeffs, _ = fig1
    gen = np.random.default_rng(0)
    for x, q, w in gen.uniform(-3, 3, (100, 3)):
        assert value(coeffs, StateSample(x, q, w, 1.0)) == pytest.approx(spec.terminal(x, q, w), rel=1e-15, abs=1e-15)


def test_value_golden_at_initial_state(fig1):
    _, coeffs, rule = fig1
    a = COEFFS_T0[0.0]
    w = rule.w_bar
    # x = 0, q = 1: a0 + a1_2 + a1_3 w + a2_4 + a2_5 w + a2_6 w^2
    expected = a[0] + a[2] + a[3] * w + a[7] + a[8] * w + a[9] * w * w
    assert value(coeffs, StateSample(0.0, 1.0, w, 0.0)) == pytest.approx(expected, abs=1e-8)
    assert value(coeffs, StateSample(0.0, 1.0, -3.0, 0.0)) == pytest.approx(-1.8912163676123253, abs=1e-8)


def test_value_zero_dynamics_is_pure_w_squared():
    # with Psi = 0 and frozen supply only the (w + u_x)^2 forcing remains: u = -(T - t) w^2 / (2c)
    spec = ModelSpec(2.0, 1.0, AffineCoeff(), AffineCoeff(), TerminalCost(), 1.0, InitialDistribution())
    coeffs = solve_coefficients(spec)
    for t in (0.0, 0.3, 1.0):
        assert value(coeffs, (0.7, -1.2, 1.5, t)) == pytest.approx(-(1.0 - t) * 1.5**2 / 4.0, abs=1e-14)
        assert u_x(coeffs, (0.7, -1.2, 1.5, t)) == 0.0


@pytest.mark.parametrize("h", [1e-3, 1e-4])
def test_u_x_matches_central_differences(fig1, h):
    _, coeffs, _ = fig1
    gen = np.random.default_rng(1)
    x, q, w = gen.uniform(-3, 3, (3, 100))
    t = gen.uniform(0, 1, 100)
    fd = (value(coeffs, (x + h, q, w, t)) - value(coeffs, (x - h, q, w, t))) / (2 * h)
    # u is quadratic in x, so the only mismatch is rounding of order eps / h
    assert np.max(np.abs(u_x(coeffs, (x, q, w, t)) - fd)) < 1e-9


def test_u_x_golden(fig1):
    _, coeffs, rule = fig1
    a = COEFFS_T0[0.0]
    expected = a[1] + 2 * a[4] + a[5] + a[6] * rule.w_bar
    assert u_x(coeffs, StateSample(1.0, 1.0, rule.w_bar, 0.0)) == pytest.approx(expected, abs=1e-8)


def test_no_trade_at_indifference_price(fig1):
    _, coeffs, _ = fig1
    # u_x depends on w through a2_3, so w = -u_x is solved for w
    a = coeffs.at(0.25)
    w = -(a[A11] + 2 * a[A21] * 0.4 + a[A22] * 1.3) / (1 + a[A23])
    assert w == pytest.approx(-u_x(coeffs, (0.4, 1.3, w, 0.25)), abs=1e-15)
    assert optimal_control(coeffs, 1.0, (0.4, 1.3, w, 0.25)) == pytest.approx(0.0, abs=1e-15)


def test_pure_price_response():
    spec = ModelSpec(1.0, 1.0, AffineCoeff(), AffineCoeff(), TerminalCost(), 1.0, InitialDistribution())
    coeffs = solve_coefficients(spec)
    assert optimal_control(coeffs, 1.0, StateSample(0.3, 0.2, 2.0, 0.5)) == -2.0


def test_mean_control_clears_market_at_t0(fig1):
    spec, coeffs, rule = fig1
    x = sample_agents(spec, 10_000)
    v = optimal_control(coeffs, spec.c, (x, spec.q_bar, rule.w_bar, 0.0))
    assert v.mean() == pytest.approx(spec.q_bar, abs=1e-12)
    raw = sample_agents(spec, 10_000, centered=False)
    v_raw = optimal_control(coeffs, spec.c, (raw, spec.q_bar, rule.w_bar, 0.0))
    assert abs(v_raw.mean() - spec.q_bar) < 4 * 2 * coeffs["a2_1"][0] / np.sqrt(10_000)


@pytest.mark.parametrize("p", [-1.0, 0.0, 2.0])
@pytest.mark.parametrize("c", [0.5, 1.0])
def test_legendre_consistency(p, c):
    assert legendre_hamiltonian(p, c) == pytest.approx(hamiltonian(p, c), abs=1e-9)


def test_out_of_range_time_rejected(fig1):
    with pytest.raises(TimeRangeError):
        value(fig1[1], (0.0, 0.0, 0.0, 1.5))
