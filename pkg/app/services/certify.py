"""
Certification Service

Capacitance bounds that certify transient stability of an ad hoc network
after any single-load switching event:
- Decay bound (P decreases while every load stays above V_tr)
- Transient bound (post-switch potential stays below the boundary level)
- Necessary bound
- Critical loadability above which no capacitance certifies
- Normalized design curves and per-network certification reports

The transient bound is a 2-D maximization over the pre/post total
loading. It is solved by a coarse grid over the feasible polygon followed
by a Nelder-Mead refinement from the best cell.
"""

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple

import numpy as np
from scipy.optimize import minimize

from ..config import settings
from ..models.network import Line, NetworkSpec, Node, NodeKind, blocking, validate
from ..models.state import SwitchingEvent
from ..utils.exceptions import DomainError, InfeasiblePower, NetworkValidationError
from ..utils.logging_config import get_logger
from .equilibrium import (
    EquilibriumResult,
    FeasibilityResult,
    check_feasibility,
    p0 as nose_apex,
    two_bus_v_high,
)
from .potential import co_content

logger = get_logger(__name__)


class DesignGlobals(Protocol):
    """Global parameters every bound depends on (NetworkSpec satisfies this)"""
    v0: float
    r_max: float
    tau_max: float
    p_max: float
    v_min: float
    v_tr: float


@dataclass(frozen=True)
class DesignParameters:
    """Globals without a topology, for design-time sizing"""
    v0: float
    r_max: float
    tau_max: float
    p_max: float
    v_min: float
    v_tr: float

    @classmethod
    def from_spec(cls, spec: DesignGlobals, **overrides) -> "DesignParameters":
        values = {name: getattr(spec, name) for name in ("v0", "r_max", "tau_max", "p_max", "v_min", "v_tr")}
        values.update(overrides)
        return cls(**values)

    @property
    def p0(self) -> float:
        return self.v0 ** 2 / (4.0 * self.r_max)

    @property
    def c0(self) -> float:
        return self.tau_max / self.r_max


# ==============================================
# Closed-form bounds
# ==============================================

def c_vtr_bound(p_max_k: float, tau_max: float, v_tr: float) -> float:
    """Capacitance keeping Q positive definite down to V_tr: tau_max p_k^max / V_tr^2"""
    if v_tr <= 0:
        raise DomainError("v_tr must be positive", {"v_tr": v_tr})
    return tau_max * p_max_k / v_tr ** 2


def c_necessary_bound(p_max_k: float, tau: float, v_min: float) -> float:
    """Necessary capacitance tau p_k^max / V_min^2"""
    if v_min <= 0:
        raise DomainError("v_min must be positive", {"v_min": v_min})
    return tau * p_max_k / v_min ** 2


def g_tr_plus(p_sigma_plus: float, spec: DesignGlobals) -> float:
    """Lower bound of G on the boundary of the transient domain"""
    return (spec.v_tr - spec.v0) ** 2 / (2.0 * spec.r_max) + p_sigma_plus * math.log(spec.v_tr)


def g_ini_plus(p_sigma_minus: float, p_sigma_plus: float, spec: DesignGlobals) -> float:
    """Upper bound of the post-switch co-content at the pre-switch equilibrium"""
    v_high = two_bus_v_high(p_sigma_minus, spec.r_max, spec.v0)
    return 0.5 * p_sigma_minus * (spec.v0 - v_high) / v_high + p_sigma_plus * math.log(spec.v0)


def _v_high_vec(p: np.ndarray, spec: DesignGlobals) -> np.ndarray:
    apex = spec.v0 ** 2 / (4.0 * spec.r_max)
    return 0.5 * spec.v0 * (1.0 + np.sqrt(np.clip(1.0 - p / apex, 0.0, None)))


def _denominator(pm: np.ndarray, pp: np.ndarray, spec: DesignGlobals) -> np.ndarray:
    """G_tr+ - G_ini+ over arrays of (p_sigma-, p_sigma+)"""
    vh = _v_high_vec(pm, spec)
    g_tr = (spec.v_tr - spec.v0) ** 2 / (2.0 * spec.r_max) + pp * math.log(spec.v_tr)
    g_ini = 0.5 * pm * (spec.v0 - vh) / vh + pp * math.log(spec.v0)
    return g_tr - g_ini


def _ratio(pm: np.ndarray, pp: np.ndarray, spec: DesignGlobals) -> np.ndarray:
    vh = _v_high_vec(pm, spec)
    num = spec.tau_max * ((pm - pp) / vh) ** 2
    den = 2.0 * _denominator(pm, pp, spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / den, np.inf)
    return np.where(num == 0, np.where(den > 0, 0.0, np.inf), out)


# ==============================================
# Transient bound
# ==============================================

@dataclass
class TransientBound:
    """Worst case of the transient bound for one load size"""
    value: float  # farads, inf when uncertifiable
    certifiable: bool
    p_sigma_minus: float  # argmax (or the point where no certificate exists)
    p_sigma_plus: float
    min_denominator: float

    @property
    def scenario(self) -> Tuple[float, float]:
        return (self.p_sigma_minus, self.p_sigma_plus)


def _project(pm: float, pp: float, p_max: float, dp: float) -> Tuple[float, float]:
    pm = min(max(pm, 0.0), p_max)
    pp = min(max(pp, max(0.0, pm - dp)), min(p_max, pm + dp))
    return pm, pp


def _candidates(p_max: float, dp: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Grid over the feasible polygon plus both band edges"""
    axis = np.linspace(0.0, p_max, n)
    pm, pp = np.meshgrid(axis, axis, indexing="ij")
    mask = np.abs(pp - pm) <= dp * (1 + 1e-12)
    pm_c, pp_c = [pm[mask]], [pp[mask]]
    for sign in (1.0, -1.0):
        edge = axis + sign * dp
        ok = (edge >= 0.0) & (edge <= p_max)
        pm_c.append(axis[ok])
        pp_c.append(edge[ok])
    return np.concatenate(pm_c), np.concatenate(pp_c)


def c_transient_bound(
    p_max_k: float,
    spec: DesignGlobals,
    *,
    p_max: Optional[float] = None,
    grid: Optional[int] = None,
) -> TransientBound:
    """
    max over (p_sigma-, p_sigma+) of
        tau_max ((p- - p+)/V_high-)^2 / (2 (G_tr+ - G_ini+))
    subject to p-, p+ <= P_max and |p+ - p-| <= p_k^max.
    Uncertifiable (inf) when the denominator is non-positive anywhere feasible.
    """
    p_cap = spec.p_max if p_max is None else p_max
    apex = spec.v0 ** 2 / (4.0 * spec.r_max)
    if p_cap >= apex:
        raise InfeasiblePower(p_cap, apex, f"P_max {p_cap:.6g} must be below P0 = {apex:.6g}")
    if p_max_k < 0 or p_cap < 0:
        raise DomainError("powers must be non-negative", {"p_max_k": p_max_k, "p_max": p_cap})
    dp = min(p_max_k, p_cap)
    n = grid or settings.optimizer_grid

    pm, pp = _candidates(p_cap, dp, n)
    den = _denominator(pm, pp, spec)
    # G_tr+ - G_ini+ decreases in both loadings, so its minimum sits at (P_max, P_max)
    corner = float(_denominator(np.array([p_cap]), np.array([p_cap]), spec)[0])
    min_den = min(float(np.min(den)), corner)
    if min_den <= 0:
        worst = int(np.argmin(den))
        pm_w, pp_w = (p_cap, p_cap) if corner <= den[worst] else (float(pm[worst]), float(pp[worst]))
        logger.warning("No finite transient bound for p_max_k=%.6g (P_max=%.6g)", p_max_k, p_cap)
        return TransientBound(math.inf, False, pm_w, pp_w, min_den)

    values = _ratio(pm, pp, spec)
    best = int(np.argmax(values))
    best_val = float(values[best])
    best_pt = (float(pm[best]), float(pp[best]))

    if dp > 0 and best_val > 0:
        step = p_cap / max(n - 1, 1)

        def objective(x: np.ndarray) -> float:
            a, b = _project(float(x[0]), float(x[1]), p_cap, dp)
            return -float(_ratio(np.array([a]), np.array([b]), spec)[0])

        x0 = np.array(best_pt)
        simplex = np.array([x0, x0 + [step, 0.0], x0 + [0.0, step]])
        res = minimize(
            objective, x0, method="Nelder-Mead",
            options=dict(initial_simplex=simplex, xatol=1e-12 * max(p_cap, 1e-300), fatol=1e-15, maxiter=2000),
        )
        refined = _project(float(res.x[0]), float(res.x[1]), p_cap, dp)
        refined_val = -objective(np.array(refined))
        if np.isfinite(refined_val) and refined_val > best_val:
            best_val, best_pt = refined_val, refined

    return TransientBound(best_val, True, best_pt[0], best_pt[1], min_den)


def p_crit(spec: DesignGlobals, tol: Optional[float] = None) -> float:
    """
    Largest total loading P for which G_ini+ < G_tr+ for all p-, p+ <= P.
    The binding case is p- = p+ = P; bisection on its sign.
    """
    apex = spec.v0 ** 2 / (4.0 * spec.r_max)
    tol = (tol if tol is not None else settings.pcrit_tol_scale) * apex

    def margin(p: float) -> float:
        return float(_denominator(np.array([p]), np.array([p]), spec)[0])

    lo, hi = 0.0, apex
    if margin(lo) <= 0:
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if margin(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo


# ==============================================
# Two-bus worst case
# ==============================================

def _two_bus(spec: DesignGlobals, p_plus: float) -> NetworkSpec:
    tau_line = 0.5 * spec.tau_max
    return NetworkSpec(
        nodes=(
            Node(0, NodeKind.SOURCE),
            Node(1, NodeKind.LOAD, p_nominal=p_plus, p_max=max(p_plus, spec.p_max), capacitance=1.0),
        ),
        edges=(Line(0, 1, spec.r_max, tau_line * spec.r_max),),
        v0=spec.v0, r_max=spec.r_max, tau_max=spec.tau_max,
        p_max=max(p_plus, spec.p_max), v_min=spec.v_min, v_tr=spec.v_tr,
    )


def two_bus_c_tr(p_minus: float, p_plus: float, spec: DesignGlobals) -> float:
    """
    Capacitance for one two-bus switching event p- -> p+ with the exact
    two-bus co-content; inf when G+(V_tr) <= G+(V_high-).
    """
    v_high = two_bus_v_high(p_minus, spec.r_max, spec.v0)
    net = _two_bus(spec, p_plus)
    g_boundary = co_content(net, [spec.v0, spec.v_tr], [p_plus])
    g_start = co_content(net, [spec.v0, v_high], [p_plus])
    den = 2.0 * (g_boundary - g_start)
    num = spec.tau_max * ((p_minus - p_plus) / v_high) ** 2
    if den <= 0:
        return math.inf
    return num / den


def two_bus_worst_case(spec: DesignGlobals, grid: Optional[int] = None) -> TransientBound:
    """Worst case of `two_bus_c_tr` over the box p-, p+ in [0, P_max]"""
    p_cap = spec.p_max
    apex = spec.v0 ** 2 / (4.0 * spec.r_max)
    if p_cap >= apex:
        raise InfeasiblePower(p_cap, apex)
    n = grid or settings.optimizer_grid
    axis = np.linspace(0.0, p_cap, n)
    pm, pp = (a.ravel() for a in np.meshgrid(axis, axis, indexing="ij"))
    vh = _v_high_vec(pm, spec)
    # Exact two-bus co-content difference G+(V_tr) - G+(V_high-)
    den = ((spec.v0 - spec.v_tr) ** 2 - (spec.v0 - vh) ** 2) / (2.0 * spec.r_max) + pp * np.log(spec.v_tr / vh)
    min_den = float(np.min(den))
    if min_den <= 0:
        worst = int(np.argmin(den))
        return TransientBound(math.inf, False, float(pm[worst]), float(pp[worst]), min_den)
    values = spec.tau_max * ((pm - pp) / vh) ** 2 / (2.0 * den)
    best = int(np.argmax(values))
    best_val, best_pt = float(values[best]), (float(pm[best]), float(pp[best]))

    def objective(x: np.ndarray) -> float:
        a = min(max(float(x[0]), 0.0), p_cap)
        b = min(max(float(x[1]), 0.0), p_cap)
        return -two_bus_c_tr(a, b, spec)

    step = p_cap / max(n - 1, 1)
    if best_val > 0:
        x0 = np.array(best_pt)
        simplex = np.array([x0, x0 + [step, 0.0], x0 + [0.0, step]])
        res = minimize(objective, x0, method="Nelder-Mead",
                       options=dict(initial_simplex=simplex, xatol=1e-12 * p_cap, fatol=1e-15, maxiter=2000))
        refined = (min(max(float(res.x[0]), 0.0), p_cap), min(max(float(res.x[1]), 0.0), p_cap))
        refined_val = -objective(np.array(refined))
        if np.isfinite(refined_val) and refined_val > best_val:
            best_val, best_pt = refined_val, refined
    return TransientBound(best_val, True, best_pt[0], best_pt[1], min_den)


# ==============================================
# Post-switch potential
# ==============================================

def post_switch_bound(spec: NetworkSpec, eq: EquilibriumResult, event: SwitchingEvent) -> float:
    """
    Upper bound on P right after `event` from the equilibrium `eq`:
    G_ini+ + tau_max/(2 C_k) ((p_k- - p_k+)/V_high-)^2.
    """
    p_minus = eq.p_sigma
    p_plus = p_minus - event.p_before + event.p_after
    v_high = two_bus_v_high(p_minus, spec.r_max, spec.v0)
    c_k = spec.nodes[event.load].capacitance
    kinetic = spec.tau_max / (2.0 * c_k) * ((event.p_before - event.p_after) / v_high) ** 2
    return g_ini_plus(p_minus, p_plus, spec) + kinetic


# ==============================================
# Design curves
# ==============================================

@dataclass
class DesignSample:
    delta_p_over_p0: float
    c_vtr_over_c0: float
    c_transient_over_c0: float
    c_necessary_over_c0: float
    c_sufficient_over_c0: float


@dataclass
class DesignCurves:
    """Normalized capacitance bounds versus switching magnitude"""
    samples: List[DesignSample]
    c0: float
    p0: float
    p_crit: float
    p_max: Optional[float] = None  # None: single-load mode, P_max = delta_p


def design_curves(
    spec: DesignGlobals,
    n: int,
    *,
    p_max: Optional[float] = None,
    overshoot: Optional[float] = None,
) -> DesignCurves:
    """
    Sweep the switching magnitude and emit the three bounds normalized by
    C0 = tau_max/R_max, with magnitudes normalized by P0 = V0^2/(4 R_max).

    Without `p_max` each sample is the single-load worst case P_max = delta_p,
    swept over (0, p_crit + overshoot]; `overshoot` (default 0.02 P0) makes
    the loss of certifiability visible. With `p_max` the magnitude is swept
    over (0, p_max] at fixed P_max.
    """
    if n < 2:
        raise DomainError("design curves need at least 2 samples", {"n": n})
    params = DesignParameters.from_spec(spec)
    apex, c0 = params.p0, params.c0
    pc = p_crit(params)

    if p_max is None:
        extra = 0.02 * apex if overshoot is None else overshoot * apex
        upper = min(pc + extra, apex * (1.0 - 1e-9))
    else:
        upper = p_max
    deltas = upper * np.arange(1, n + 1) / n

    samples: List[DesignSample] = []
    for dp in deltas:
        dp = float(dp)
        cap = dp if p_max is None else p_max
        c_vtr = c_vtr_bound(dp, params.tau_max, params.v_tr)
        c_nec = c_necessary_bound(dp, params.tau_max, params.v_min)
        bound = c_transient_bound(dp, params, p_max=cap)
        c_suff = max(c_vtr, bound.value)
        samples.append(DesignSample(
            delta_p_over_p0=dp / apex,
            c_vtr_over_c0=c_vtr / c0,
            c_transient_over_c0=bound.value / c0,
            c_necessary_over_c0=c_nec / c0,
            c_sufficient_over_c0=c_suff / c0,
        ))
    return DesignCurves(samples=samples, c0=c0, p0=apex, p_crit=pc, p_max=p_max)


def design_capacitance(spec: DesignGlobals, p_max_k: float, margin: Optional[float] = None) -> float:
    """margin x max(decay bound, transient bound); inf when uncertifiable"""
    margin = margin if margin is not None else settings.certify_margin
    bound = c_transient_bound(p_max_k, spec)
    return margin * max(c_vtr_bound(p_max_k, spec.tau_max, spec.v_tr), bound.value)


# ==============================================
# Certification report
# ==============================================

class Verdict(str, enum.Enum):
    CERTIFIED = "certified"
    NECESSARY_ONLY_MET = "necessary_only_met"
    FAILS = "fails"


_VERDICT_RANK = {Verdict.CERTIFIED: 0, Verdict.NECESSARY_ONLY_MET: 1, Verdict.FAILS: 2}


@dataclass
class LoadCertificate:
    load: int
    p_max: float
    c_vtr: float
    c_transient: float  # inf when uncertifiable
    certifiable: bool
    c_necessary: float
    installed: float
    verdict: Verdict
    binding_scenario: Tuple[float, float]

    @property
    def c_sufficient(self) -> float:
        return max(self.c_vtr, self.c_transient)


@dataclass
class CertificationReport:
    loads: List[LoadCertificate]
    p_crit: float
    feasibility: FeasibilityResult
    p0: float
    c0: float
    violations: List[str] = field(default_factory=list)  # informational only

    @property
    def verdict(self) -> Verdict:
        """Worst load verdict; an infeasible P_max fails the whole network"""
        if not self.feasibility.feasible:
            return Verdict.FAILS
        if not self.loads:
            return Verdict.CERTIFIED
        return max((c.verdict for c in self.loads), key=_VERDICT_RANK.__getitem__)

    @property
    def certified(self) -> bool:
        return self.verdict == Verdict.CERTIFIED


def _verdict(installed: float, c_vtr: float, bound: TransientBound, c_nec: float) -> Verdict:
    if bound.certifiable and installed > max(c_vtr, bound.value):
        return Verdict.CERTIFIED
    if installed > c_nec:
        return Verdict.NECESSARY_ONLY_MET
    return Verdict.FAILS


def certify_network(spec: NetworkSpec) -> CertificationReport:
    """Per-load bounds and verdicts for the installed capacitors"""
    violations = validate(spec)
    hard = blocking(violations)
    if hard:
        raise NetworkValidationError(hard)

    started = time.perf_counter()
    pc = p_crit(spec)
    certificates: List[LoadCertificate] = []
    for k in spec.load_indices:
        node = spec.nodes[k]
        c_vtr = c_vtr_bound(node.p_max, spec.tau_max, spec.v_tr)
        c_nec = c_necessary_bound(node.p_max, spec.tau_max, spec.v_min)
        bound = c_transient_bound(node.p_max, spec)
        verdict = _verdict(node.capacitance, c_vtr, bound, c_nec)
        certificates.append(LoadCertificate(
            load=k,
            p_max=node.p_max,
            c_vtr=c_vtr,
            c_transient=bound.value,
            certifiable=bound.certifiable,
            c_necessary=c_nec,
            installed=node.capacitance,
            verdict=verdict,
            binding_scenario=bound.scenario,
        ))
        logger.bound_computed(k, "transient", bound.value)

    report = CertificationReport(
        loads=certificates,
        p_crit=pc,
        feasibility=check_feasibility(spec),
        p0=nose_apex(spec.r_max, spec.v0),
        c0=spec.tau_max / spec.r_max,
        violations=[str(v) for v in violations],
    )
    logger.log_with_context(
        logging.INFO, f"Certification finished: {report.verdict.value}",
        entity_type="network",
        duration_ms=(time.perf_counter() - started) * 1000.0,
        loads=len(certificates),
        p_crit=pc,
    )
    return report
