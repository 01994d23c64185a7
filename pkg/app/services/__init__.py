# Services package
from .equilibrium import (
    EquilibriumResult,
    NoseCurve,
    check_feasibility,
    hessian_G,
    is_convex_at,
    max_loadability,
    nose_curve,
    solve_power_flow,
    two_bus_v_high,
    two_bus_v_low,
)
from .potential import bm_potential, co_content, co_content_losses_form, q_matrix, q_positive_definite
from .certify import (
    CertificationReport,
    DesignCurves,
    TransientBound,
    Verdict,
    c_necessary_bound,
    c_transient_bound,
    c_vtr_bound,
    certify_network,
    design_capacitance,
    design_curves,
    p_crit,
    two_bus_c_tr,
)
from .topology import random_network
from .simulate import (
    FuzzReport,
    Trajectory,
    TransientSimulator,
    integrate,
    potential_decay_consistency,
    rhs,
    verify_certificate,
)

__all__ = [
    "EquilibriumResult", "NoseCurve", "check_feasibility", "hessian_G", "is_convex_at",
    "max_loadability", "nose_curve", "solve_power_flow", "two_bus_v_high", "two_bus_v_low",
    "bm_potential", "co_content", "co_content_losses_form", "q_matrix", "q_positive_definite",
    "CertificationReport", "DesignCurves", "TransientBound", "Verdict",
    "c_necessary_bound", "c_transient_bound", "c_vtr_bound", "certify_network",
    "design_capacitance", "design_curves", "p_crit", "two_bus_c_tr",
    "random_network",
    "FuzzReport", "Trajectory", "TransientSimulator", "integrate",
    "potential_decay_consistency", "rhs", "verify_certificate",
]
