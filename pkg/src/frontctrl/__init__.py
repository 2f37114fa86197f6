"""Optimal control of reaction-diffusion propagation fronts.

A library and CLI for computing controlled traveling-wave profiles of
scalar reaction-diffusion equations, the minimum-effort cost curve E(c),
and for verifying the sharp-interface limit of the rescaled parabolic
equation driven by constructed controls.
"""

__version__ = "0.1.0"

from frontctrl.reaction_models import (
    ControlCoupling,
    EffortCostFunction,
    ModelKind,
    ReactionModel,
    check_optimality_condition,
    make_cubic,
    make_logistic,
    make_polynomial,
)
from frontctrl.phase_plane import (
    Eigenstructure,
    PhasePath,
    PhasePoint,
    eigen_at,
    find_cstar,
    integrate_manifold,
    wave_speed_sign,
)

__all__ = [
    "ControlCoupling",
    "EffortCostFunction",
    "ModelKind",
    "ReactionModel",
    "check_optimality_condition",
    "make_cubic",
    "make_logistic",
    "make_polynomial",
    "Eigenstructure",
    "PhasePath",
    "PhasePoint",
    "eigen_at",
    "find_cstar",
    "integrate_manifold",
    "wave_speed_sign",
    "__version__",
]
