"""Linear-quadratic mean-field-game price formation with common supply noise."""

from .coefficients import (
    CoefficientPath,
    PricingRule,
    a21_closed_form,
    derive_pricing_rule,
    hjb_residual,
    solve_a22_a23,
    solve_coefficients,
)
from .errors import BlowUpError, ModelValidationError, SingularityError, TimeRangeError
from .model import (
    AffineCoeff,
    InitialDistribution,
    ModelSpec,
    TerminalCost,
    fig1_spec,
    psi_to_terminal_conditions,
    validate,
)
from .simulate import (
    PathEnsemble,
    clearing_residual,
    make_noise,
    martingale_test,
    simulate_agents,
    simulate_supply_price,
    transport_weak_residual,
)
from .value import StateSample, optimal_control, u_x, value

__all__ = [
    "AffineCoeff", "BlowUpError", "CoefficientPath", "InitialDistribution", "ModelSpec",
    "ModelValidationError", "PathEnsemble", "PricingRule", "SingularityError", "StateSample",
    "TerminalCost", "TimeRangeError", "a21_closed_form", "clearing_residual", "derive_pricing_rule",
    "fig1_spec", "hjb_residual", "make_noise", "martingale_test", "optimal_control",
    "psi_to_terminal_conditions", "simulate_agents", "simulate_supply_price", "solve_a22_a23",
    "solve_coefficients", "transport_weak_residual", "u_x", "validate", "value",
]
