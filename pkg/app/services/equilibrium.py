"""
Equilibrium Service

Power-flow equilibria of the network, i.e. stationary points of the
resistive co-content G:
- Two-bus closed forms V_high / V_low and the nose curve
- Maximum loadability for a minimum equilibrium voltage
- Damped Newton solver for the high-voltage equilibrium of any network
- Hessian of G and its convexity test
"""

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..config import settings
from ..models.network import NetworkSpec
from ..models.state import Classification
from ..utils.exceptions import DomainError, InfeasiblePower, NonConvergence
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

# Relative slack when comparing a power against the nose-curve apex
_APEX_SLACK = 1e-12


def p0(r: float, v0: float) -> float:
    """Apex of the nose curve, V0^2 / (4R)"""
    if r <= 0:
        raise DomainError("resistance must be positive", {"r": r})
    return v0 ** 2 / (4.0 * r)


def _discriminant(p: float, r: float, v0: float) -> float:
    if p < 0:
        raise DomainError("power must be non-negative", {"p": p})
    apex = p0(r, v0)
    if p > apex * (1 + _APEX_SLACK):
        raise InfeasiblePower(p, apex)
    return max(0.0, 1.0 - p / apex)


def two_bus_v_high(p: float, r: float, v0: float) -> float:
    """High-voltage equilibrium V0/2 (1 + sqrt(1 - p/P0))"""
    return 0.5 * v0 * (1.0 + math.sqrt(_discriminant(p, r, v0)))


def two_bus_v_low(p: float, r: float, v0: float) -> float:
    """Low-voltage equilibrium V0/2 (1 - sqrt(1 - p/P0))"""
    return 0.5 * v0 * (1.0 - math.sqrt(_discriminant(p, r, v0)))


def voltage_bounds(p_sigma: float, r_max: float, v0: float) -> Tuple[float, float]:
    """
    Voltage thresholds separating the high-voltage equilibrium from all
    others for total loading `p_sigma` under resistance budget `r_max`.
    """
    return two_bus_v_high(p_sigma, r_max, v0), two_bus_v_low(p_sigma, r_max, v0)


def max_loadability(v_min: float, v0: float, r_max: float) -> float:
    """
    Largest P_max such that every admissible network keeps a feasible
    equilibrium above v_min: V_min (V0 - V_min) / R_max.
    """
    if not (v0 / 2 <= v_min < v0):
        raise DomainError(
            f"v_min must lie in [V0/2, V0), got {v_min:g} with V0={v0:g}",
            {"v_min": v_min, "v0": v0},
        )
    if r_max <= 0:
        raise DomainError("r_max must be positive", {"r_max": r_max})
    return v_min * (v0 - v_min) / r_max


# ==============================================
# Nose curve
# ==============================================

class NoseSample(NamedTuple):
    p: float
    v_high: float
    v_low: float


@dataclass
class NoseCurve:
    """Equilibrium load voltage versus load power for a two-bus line"""
    samples: List[NoseSample]
    p0: float


def nose_curve(r: float, v0: float, n: int) -> NoseCurve:
    """n samples of (p, v_high, v_low) on [0, P0], both endpoints included"""
    if n < 2:
        raise DomainError("nose curve needs at least 2 samples", {"n": n})
    apex = p0(r, v0)
    powers = np.linspace(0.0, apex, n)
    powers[-1] = apex
    samples = [
        NoseSample(float(p), two_bus_v_high(float(p), r, v0), two_bus_v_low(float(p), r, v0))
        for p in powers
    ]
    return NoseCurve(samples=samples, p0=apex)


# ==============================================
# Network equilibrium
# ==============================================

@dataclass
class EquilibriumResult:
    """Solution of the power flow equations"""
    v_sep: np.ndarray  # all nodes, sources pinned at V0
    i_sep: np.ndarray  # all edges
    p: np.ndarray  # load powers the equilibrium was solved for
    converged: bool
    iterations: int
    residual_norm: float
    classification: Classification

    def v_loads(self, spec: NetworkSpec) -> np.ndarray:
        return self.v_sep[list(spec.load_indices)]

    @property
    def p_sigma(self) -> float:
        return float(np.sum(self.p))


@dataclass
class FeasibilityResult:
    """Equilibrium feasibility of the design parameters"""
    p_max: float
    p_max_allowed: float
    feasible: bool
    v_high_at_p_max: float


def _as_load_powers(spec: NetworkSpec, p: Optional[Sequence[float]]) -> np.ndarray:
    if p is None:
        return np.array(spec.p_nominal, dtype=float)
    p_arr = np.asarray(p, dtype=float).reshape(-1)
    if p_arr.shape[0] != spec.n_loads:
        raise DomainError(
            f"expected {spec.n_loads} load powers, got {p_arr.shape[0]}",
            {"n_loads": spec.n_loads},
        )
    if np.any(p_arr < 0):
        raise DomainError("load powers must be non-negative")
    return p_arr


def _as_load_voltages(spec: NetworkSpec, v: Sequence[float]) -> np.ndarray:
    v_arr = np.asarray(v, dtype=float).reshape(-1)
    if v_arr.shape[0] == spec.n_nodes:
        v_arr = v_arr[list(spec.load_indices)]
    elif v_arr.shape[0] != spec.n_loads:
        raise DomainError(
            f"voltage vector must cover all {spec.n_nodes} nodes or the {spec.n_loads} loads",
        )
    if np.any(v_arr <= 0):
        raise DomainError("load voltages must be positive", {"v_min": float(np.min(v_arr))})
    return v_arr


def laplacian(spec: NetworkSpec) -> np.ndarray:
    """Weighted graph Laplacian over all nodes, conductances 1/R"""
    nabla = spec.incidence
    return nabla.T @ (nabla / spec.resistances[:, None])


def gradient_G(spec: NetworkSpec, v_loads: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Derivative of G with respect to load voltages (power flow residual)"""
    v_full = spec.full_voltage(v_loads)
    flow = (laplacian(spec) @ v_full)[list(spec.load_indices)]
    return flow + p / v_loads


def hessian_G(spec: NetworkSpec, v: Sequence[float], p: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Hessian of G over load voltages: the Laplacian restricted to loads
    (source rows and columns eliminated) minus diag(p_k / v_k^2).
    `v` may cover all nodes or the loads only.
    """
    v_loads = _as_load_voltages(spec, v)
    p_arr = _as_load_powers(spec, p)
    idx = list(spec.load_indices)
    lap = laplacian(spec)[np.ix_(idx, idx)]
    return lap - np.diag(p_arr / v_loads ** 2)


def is_convex_at(spec: NetworkSpec, v: Sequence[float], p: Optional[Sequence[float]] = None) -> bool:
    """Positive definiteness of the Hessian of G"""
    hess = hessian_G(spec, v, p)
    if hess.size == 0:
        return True
    eig = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    return bool(eig[-1] > 0 and eig[0] > settings.pd_rel_tol * eig[-1])


def solve_power_flow(
    spec: NetworkSpec,
    p: Optional[Sequence[float]] = None,
    *,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> EquilibriumResult:
    """
    Newton iteration on load voltages from the flat start v_k = V0.

    G is convex on v_k > V0/2 when p_sigma < P0, so the iteration stays in
    that domain (steps are halved if an iterate would leave it) and lands
    on the unique high-voltage equilibrium.
    """
    p_arr = _as_load_powers(spec, p)
    p_sigma = float(np.sum(p_arr))
    apex = spec.p0
    if p_sigma > apex * (1 + _APEX_SLACK):
        raise InfeasiblePower(p_sigma, apex)

    scale = max(spec.p_max, p_sigma) or apex
    tol = tol if tol is not None else settings.newton_tol_scale * scale / spec.v0
    max_iter = max_iter or settings.newton_max_iter

    v = np.full(spec.n_loads, spec.v0, dtype=float)
    half = 0.5 * spec.v0
    residual = float("inf")
    iterations = 0
    converged = False

    while True:
        grad = gradient_G(spec, v, p_arr)
        residual = float(np.max(np.abs(grad))) if grad.size else 0.0
        if residual < tol or grad.size == 0:
            converged = True
            break
        if iterations >= max_iter:
            break
        try:
            step = np.linalg.solve(hessian_G(spec, v, p_arr), grad)
        except np.linalg.LinAlgError:
            logger.warning("Singular Hessian at iteration %d", iterations)
            break
        alpha = 1.0
        candidate = v - step
        while np.any(candidate <= half) and alpha > 1e-12:
            alpha *= 0.5
            candidate = v - alpha * step
        v = candidate
        iterations += 1

    if not converged:
        raise NonConvergence(iterations, residual)

    v_full = spec.full_voltage(v)
    i_sep = (spec.incidence @ v_full) / spec.resistances

    v_high, _ = voltage_bounds(p_sigma, spec.r_max, spec.v0)
    slack = settings.classification_tol_scale * spec.v0
    if v.size == 0 or float(np.min(v)) > v_high - slack:
        classification = Classification.HIGH_VOLTAGE
    else:
        classification = Classification.LOW_VOLTAGE_OR_OTHER

    logger.solver_converged(iterations, residual, classification.value)
    return EquilibriumResult(
        v_sep=v_full,
        i_sep=i_sep,
        p=p_arr,
        converged=True,
        iterations=iterations,
        residual_norm=residual,
        classification=classification,
    )


def check_feasibility(spec: NetworkSpec) -> FeasibilityResult:
    """P_max against V_min (V0 - V_min) / R_max"""
    allowed = max_loadability(spec.v_min, spec.v0, spec.r_max)
    try:
        v_high = two_bus_v_high(spec.p_max, spec.r_max, spec.v0)
    except InfeasiblePower:
        v_high = float("nan")
    return FeasibilityResult(
        p_max=spec.p_max,
        p_max_allowed=allowed,
        feasible=spec.p_max <= allowed * (1 + _APEX_SLACK),
        v_high_at_p_max=v_high,
    )
