"""
Potential Service

Brayton-Moser machinery for the line/load dynamics:
- Resistive co-content G and its equilibrium (losses) form
- Vector field of the line and capacitor equations
- Potential P, its decay rate -xdot^T Q xdot, and the Q matrix
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from ..config import settings
from ..models.network import NetworkSpec
from ..models.state import PotentialSample, SystemState
from ..utils.exceptions import DomainError, NotAtEquilibrium
from .equilibrium import EquilibriumResult, gradient_G


def _load_powers(spec: NetworkSpec, p: Optional[Sequence[float]]) -> np.ndarray:
    if p is None:
        return np.array(spec.p_nominal, dtype=float)
    p_arr = np.asarray(p, dtype=float).reshape(-1)
    if p_arr.shape[0] != spec.n_loads:
        raise DomainError(f"expected {spec.n_loads} load powers, got {p_arr.shape[0]}")
    return p_arr


class NetworkDynamics:
    """
    Precomputed arrays for evaluating the dynamics of one network.

    Sources are algebraic (pinned at V0), so their contribution to the
    line equations is a constant vector.
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.n_edges = spec.n_edges
        self.n_loads = spec.n_loads
        self.nabla_el = np.array(spec.reduced_incidence)
        src = list(spec.source_indices)
        self.source_drive = spec.incidence[:, src].sum(axis=1) * spec.v0 if src else np.zeros(spec.n_edges)
        self.r = np.array(spec.resistances)
        self.l = np.array(spec.inductances)
        self.c = np.array(spec.capacitances)
        self.tau_max = spec.tau_max
        self.line_weight = spec.tau_max * self.r - self.l  # diag block of Q over lines
        self.line_kinetic = (spec.tau_max - spec.time_constants) * self.l

    def derivatives(self, i_lines: np.ndarray, v_loads: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(i_dot, v_dot); no domain checks, callers guard v > 0"""
        drop = self.nabla_el @ v_loads + self.source_drive
        i_dot = (-self.r * i_lines + drop) / self.l
        v_dot = (-p / v_loads - self.nabla_el.T @ i_lines) / self.c
        return i_dot, v_dot

    def vector_field(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        i_dot, v_dot = self.derivatives(x[:self.n_edges], x[self.n_edges:], p)
        return np.concatenate([i_dot, v_dot])

    def co_content(self, v_loads: np.ndarray, p: np.ndarray) -> float:
        drop = self.nabla_el @ v_loads + self.source_drive
        return float(np.sum(drop ** 2 / (2.0 * self.r)) + np.sum(p * np.log(v_loads)))

    def load_weight(self, v_loads: np.ndarray, p: np.ndarray) -> np.ndarray:
        """C_k - tau_max p_k / v_k^2, the load block of Q"""
        return self.c - self.tau_max * p / v_loads ** 2

    def sample(self, i_lines: np.ndarray, v_loads: np.ndarray, p: np.ndarray) -> PotentialSample:
        i_dot, v_dot = self.derivatives(i_lines, v_loads, p)
        g = self.co_content(v_loads, p)
        transient = 0.5 * np.sum(self.line_kinetic * i_dot ** 2) + 0.5 * self.tau_max * np.sum(self.c * v_dot ** 2)
        load_w = self.load_weight(v_loads, p)
        p_dot = -(np.sum(self.line_weight * i_dot ** 2) + np.sum(load_w * v_dot ** 2))
        definite = bool(np.all(self.line_weight > 0) and np.all(load_w > 0))
        return PotentialSample(g=g, p_total=float(g + transient), p_dot=float(p_dot), q_definite=definite)


def _checked(spec: NetworkSpec, state: SystemState) -> Tuple[np.ndarray, np.ndarray]:
    state.check_domain()
    v = np.asarray(state.v_loads, dtype=float)
    i = np.asarray(state.i_lines, dtype=float)
    if v.shape[0] != spec.n_loads or i.shape[0] != spec.n_edges:
        raise DomainError("state dimensions do not match the network")
    return i, v


def co_content(spec: NetworkSpec, v: Sequence[float], p: Optional[Sequence[float]] = None) -> float:
    """
    G(v) = sum over lines (v_i - v_j)^2 / (2 R_ij) + sum over loads p_k log v_k.
    `v` covers all nodes; sources are taken as given.
    """
    v_full = np.asarray(v, dtype=float).reshape(-1)
    if v_full.shape[0] != spec.n_nodes:
        raise DomainError(f"expected {spec.n_nodes} node voltages, got {v_full.shape[0]}")
    p_arr = _load_powers(spec, p)
    v_loads = v_full[list(spec.load_indices)]
    if np.any(v_loads <= 0):
        raise DomainError("load voltages must be positive", {"v_min": float(np.min(v_loads))})
    drop = spec.incidence @ v_full
    return float(np.sum(drop ** 2 / (2.0 * spec.resistances)) + np.sum(p_arr * np.log(v_loads)))


def co_content_losses_form(
    spec: NetworkSpec,
    eq: EquilibriumResult,
    p: Optional[Sequence[float]] = None,
) -> float:
    """
    Equilibrium-only representation of G through delivered power:
    sum over loads (p_i / v_i)(V0 - v_i)/2 + p_i log v_i.
    """
    p_arr = eq.p if p is None else _load_powers(spec, p)
    v_loads = eq.v_loads(spec)
    if np.any(v_loads <= 0):
        raise DomainError("load voltages must be positive")
    scale = max(spec.p_max, float(np.sum(p_arr))) or spec.p0
    tol = 10.0 * settings.newton_tol_scale * scale / spec.v0
    residual = float(np.max(np.abs(gradient_G(spec, v_loads, p_arr)))) if v_loads.size else 0.0
    if not eq.converged or residual > tol:
        raise NotAtEquilibrium(residual, tol)
    return float(np.sum((p_arr / v_loads) * (spec.v0 - v_loads) / 2.0 + p_arr * np.log(v_loads)))


def state_derivative(
    spec: NetworkSpec,
    state: SystemState,
    p: Optional[Sequence[float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Line and capacitor equations at `state`: (i_dot over edges, v_dot over loads)"""
    i, v = _checked(spec, state)
    return NetworkDynamics(spec).derivatives(i, v, _load_powers(spec, p))


def bm_potential(
    spec: NetworkSpec,
    state: SystemState,
    p: Optional[Sequence[float]] = None,
) -> PotentialSample:
    """
    P = G + 1/2 sum (tau_max - tau_a) L_a i_dot_a^2 + tau_max/2 sum C_k v_dot_k^2,
    with its decay rate -xdot^T Q xdot and the definiteness flag of Q.
    """
    i, v = _checked(spec, state)
    return NetworkDynamics(spec).sample(i, v, _load_powers(spec, p))


def q_matrix(
    spec: NetworkSpec,
    state: SystemState,
    p: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    Block matrix over x = [i_E, v_L]:
        [[diag(tau_max R - L), -tau_max nabla_EL],
         [tau_max nabla_EL^T, diag(C - tau_max p / v^2)]]
    """
    _, v = _checked(spec, state)
    dyn = NetworkDynamics(spec)
    p_arr = _load_powers(spec, p)
    top = np.hstack([np.diag(dyn.line_weight), -spec.tau_max * dyn.nabla_el])
    bottom = np.hstack([spec.tau_max * dyn.nabla_el.T, np.diag(dyn.load_weight(v, p_arr))])
    return np.vstack([top, bottom])


def q_positive_definite(
    spec: NetworkSpec,
    state: SystemState,
    p: Optional[Sequence[float]] = None,
) -> bool:
    """
    Definiteness of the symmetric part of Q. The off-diagonal blocks are
    antisymmetric and cancel, so only the diagonal signs matter.
    """
    _, v = _checked(spec, state)
    dyn = NetworkDynamics(spec)
    return bool(np.all(dyn.line_weight > 0) and np.all(dyn.load_weight(v, _load_powers(spec, p)) > 0))


def equilibrium_state(spec: NetworkSpec, eq: EquilibriumResult, time: float = 0.0) -> SystemState:
    """x_sep as a SystemState"""
    return SystemState(v_loads=eq.v_loads(spec).copy(), i_lines=np.array(eq.i_sep, dtype=float), time=time)

