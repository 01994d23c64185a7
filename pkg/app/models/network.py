"""
Network Model

Immutable description of an ad hoc DC microgrid: perfectly regulated
sources, constant-power loads with parallel capacitors, and RL lines,
plus the global design parameters (V0, R_max, tau_max, P_max, V_min, V_tr).

Node ids are dense 0-based indices; sources and loads share one index
space. Vectors "over loads" follow the order of `load_indices`.
"""

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np


class NodeKind(str, enum.Enum):
    SOURCE = "source"
    LOAD = "load"


@dataclass(frozen=True)
class Node:
    """A bus with either a voltage source or a constant-power load attached"""
    id: int
    kind: NodeKind
    p_nominal: float = 0.0
    p_max: float = 0.0  # p_k^max
    capacitance: float = 0.0  # C_k, farads

    @property
    def is_load(self) -> bool:
        return self.kind == NodeKind.LOAD

    @property
    def is_source(self) -> bool:
        return self.kind == NodeKind.SOURCE


@dataclass(frozen=True)
class Line:
    """RL line oriented from `from_node` to `to_node`"""
    from_node: int
    to_node: int
    resistance: float
    inductance: float

    @property
    def time_constant(self) -> float:
        return self.inductance / self.resistance


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NetworkSpec:
    """
    Network graph with global parameters. Nodes are kept sorted by id.

    Derived arrays are computed once and frozen, so a spec can be shared
    between threads and processes.
    """
    nodes: Tuple[Node, ...]
    edges: Tuple[Line, ...]
    v0: float
    r_max: float
    tau_max: float
    p_max: float
    v_min: float
    v_tr: float

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(self.edges))

    # ----- index sets -----

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def load_indices(self) -> Tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.is_load)

    @cached_property
    def source_indices(self) -> Tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.is_source)

    @property
    def n_loads(self) -> int:
        return len(self.load_indices)

    def load_position(self, node_id: int) -> int:
        """Position of a load node inside vectors over loads"""
        return self.load_indices.index(node_id)

    # ----- derived arrays -----

    @cached_property
    def incidence(self) -> np.ndarray:
        return _readonly(incidence_matrix(self))

    @cached_property
    def reduced_incidence(self) -> np.ndarray:
        """Columns of the incidence matrix belonging to load nodes"""
        return _readonly(np.array(self.incidence[:, list(self.load_indices)]))

    @cached_property
    def resistances(self) -> np.ndarray:
        return _readonly(np.array([e.resistance for e in self.edges], dtype=float))

    @cached_property
    def inductances(self) -> np.ndarray:
        return _readonly(np.array([e.inductance for e in self.edges], dtype=float))

    @cached_property
    def time_constants(self) -> np.ndarray:
        return _readonly(self.inductances / self.resistances)

    @cached_property
    def capacitances(self) -> np.ndarray:
        return _readonly(np.array([self.nodes[k].capacitance for k in self.load_indices], dtype=float))

    @cached_property
    def p_nominal(self) -> np.ndarray:
        return _readonly(np.array([self.nodes[k].p_nominal for k in self.load_indices], dtype=float))

    @cached_property
    def p_max_loads(self) -> np.ndarray:
        return _readonly(np.array([self.nodes[k].p_max for k in self.load_indices], dtype=float))

    @property
    def total_resistance(self) -> float:
        return float(np.sum(self.resistances))

    @property
    def p0(self) -> float:
        """Natural unit of power V0^2 / (4 R_max)"""
        return self.v0 ** 2 / (4.0 * self.r_max)

    @property
    def c0(self) -> float:
        """Natural unit of capacitance tau_max / R_max"""
        return self.tau_max / self.r_max

    def full_voltage(self, v_loads: Sequence[float]) -> np.ndarray:
        """Expand a load-voltage vector to all nodes, sources pinned at V0"""
        v = np.full(self.n_nodes, self.v0, dtype=float)
        v[list(self.load_indices)] = np.asarray(v_loads, dtype=float)
        return v

    # ----- immutable updates -----

    def with_capacitances(self, caps: Sequence[float]) -> "NetworkSpec":
        caps = list(caps)
        if len(caps) != self.n_loads:
            raise ValueError(f"expected {self.n_loads} capacitances, got {len(caps)}")
        by_id = dict(zip(self.load_indices, caps))
        nodes = tuple(
            replace(n, capacitance=float(by_id[n.id])) if n.id in by_id else n
            for n in self.nodes
        )
        return replace(self, nodes=nodes)

    def with_loads(self, p: Sequence[float]) -> "NetworkSpec":
        p = list(p)
        if len(p) != self.n_loads:
            raise ValueError(f"expected {self.n_loads} load powers, got {len(p)}")
        by_id = dict(zip(self.load_indices, p))
        nodes = tuple(
            replace(n, p_nominal=float(by_id[n.id])) if n.id in by_id else n
            for n in self.nodes
        )
        return replace(self, nodes=nodes)


def incidence_matrix(spec: NetworkSpec) -> np.ndarray:
    """
    (Transposed) incidence matrix, |E| x |V|.

    Row alpha has +1 at the `from` column and -1 at the `to` column, so
    `incidence @ v` gives per-line potential differences and
    `incidence.T @ i` gives the net current flowing out of each node.
    """
    mat = np.zeros((len(spec.edges), len(spec.nodes)), dtype=float)
    for alpha, line in enumerate(spec.edges):
        mat[alpha, line.from_node] += 1.0
        mat[alpha, line.to_node] -= 1.0
    return mat


# ==============================================
# Assumption checks
# ==============================================

class ViolationKind(str, enum.Enum):
    NON_DENSE_IDS = "non_dense_ids"
    DUPLICATE_NODE_ID = "duplicate_node_id"
    UNKNOWN_ENDPOINT = "unknown_endpoint"
    SELF_LOOP = "self_loop"
    NON_POSITIVE_PARAMETER = "non_positive_parameter"
    NO_SOURCE = "no_source"
    NOT_STRONGLY_CONNECTED = "not_strongly_connected"
    RESISTANCE_BUDGET_EXCEEDED = "resistance_budget_exceeded"
    TIME_CONSTANT_TOO_LARGE = "time_constant_too_large"
    VOLTAGE_ORDERING = "voltage_ordering"
    LOADABILITY_EXCEEDS_P0 = "loadability_exceeds_p0"
    LOAD_BOUNDS_INCONSISTENT = "load_bounds_inconsistent"
    NOMINAL_LOADING_EXCEEDS_PMAX = "nominal_loading_exceeds_pmax"
    SOURCE_TO_SOURCE_LINE = "source_to_source_line"


@dataclass(frozen=True)
class Violation:
    """A failed modelling assumption. Informational entries never block."""
    kind: ViolationKind
    element: Optional[int] = None
    message: str = field(default="", compare=False)
    informational: bool = field(default=False, compare=False)
    # element is an edge index rather than a node id
    on_edge: bool = field(default=False, compare=False)

    def __str__(self) -> str:
        where = f"({self.element})" if self.element is not None else ""
        tag = " [info]" if self.informational else ""
        return f"{self.kind.value}{where}: {self.message}{tag}"


# Relative slack for budget/ordering comparisons stated with <=
_REL_SLACK = 1e-12


def _connectivity_violations(spec: NetworkSpec) -> List[Violation]:
    graph = nx.MultiGraph()
    graph.add_nodes_from(range(spec.n_nodes))
    graph.add_edges_from(
        (e.from_node, e.to_node) for e in spec.edges
        if 0 <= e.from_node < spec.n_nodes and 0 <= e.to_node < spec.n_nodes
    )
    sources = set(spec.source_indices)
    components = [set(c) for c in nx.connected_components(graph)]
    with_sources = [c for c in components if c & sources]
    if not with_sources:
        return []
    # The energized component is the one holding most sources (lowest id breaks ties)
    main = max(with_sources, key=lambda c: (len(c & sources), -min(c)))
    return [
        Violation(
            ViolationKind.NOT_STRONGLY_CONNECTED, node,
            f"node {node} is not connected to the energized component",
        )
        for node in sorted(set(range(spec.n_nodes)) - main)
    ]


def validate(spec: NetworkSpec) -> List[Violation]:
    """
    Check the ad hoc network assumptions.

    Returns an empty list iff every assumption holds (informational
    entries aside). The result is sorted, so it does not depend on the
    order in which checks run.
    """
    out: List[Violation] = []

    ids = [n.id for n in spec.nodes]
    seen: Dict[int, int] = {}
    for node_id in ids:
        seen[node_id] = seen.get(node_id, 0) + 1
    for node_id, count in seen.items():
        if count > 1:
            out.append(Violation(ViolationKind.DUPLICATE_NODE_ID, node_id, f"node id {node_id} declared {count} times"))
    if set(ids) != set(range(len(ids))) and not any(c > 1 for c in seen.values()):
        out.append(Violation(ViolationKind.NON_DENSE_IDS, None, "node ids must be exactly 0..n-1"))

    for name in ("v0", "r_max", "tau_max", "v_min", "v_tr"):
        if not getattr(spec, name) > 0:
            out.append(Violation(ViolationKind.NON_POSITIVE_PARAMETER, None, f"{name} must be > 0"))
    if spec.p_max < 0:
        out.append(Violation(ViolationKind.NON_POSITIVE_PARAMETER, None, "p_max must be >= 0"))

    if not spec.source_indices:
        out.append(Violation(ViolationKind.NO_SOURCE, None, "network has no source"))

    for node in spec.nodes:
        if not node.is_load:
            continue
        if node.capacitance <= 0:
            out.append(Violation(ViolationKind.NON_POSITIVE_PARAMETER, node.id, "capacitance must be > 0"))
        if node.p_nominal < 0 or node.p_nominal > node.p_max:
            out.append(Violation(
                ViolationKind.LOAD_BOUNDS_INCONSISTENT, node.id,
                f"need 0 <= p_nominal ({node.p_nominal:g}) <= p_max ({node.p_max:g})",
            ))
        elif node.p_max > spec.p_max * (1 + _REL_SLACK):
            out.append(Violation(
                ViolationKind.LOAD_BOUNDS_INCONSISTENT, node.id,
                f"p_max of load ({node.p_max:g}) exceeds system P_max ({spec.p_max:g})",
            ))

    loads = [n for n in spec.nodes if n.is_load]
    nominal_total = sum(n.p_nominal for n in loads)
    if nominal_total > spec.p_max * (1 + _REL_SLACK):
        out.append(Violation(
            ViolationKind.NOMINAL_LOADING_EXCEEDS_PMAX, None,
            f"nominal loading {nominal_total:g} exceeds P_max {spec.p_max:g}",
        ))

    kinds = {n.id: n.kind for n in spec.nodes}
    endpoints_ok = True
    for alpha, line in enumerate(spec.edges):
        if line.from_node not in kinds or line.to_node not in kinds:
            out.append(Violation(
                ViolationKind.UNKNOWN_ENDPOINT, alpha, f"line {alpha} references an unknown node", on_edge=True,
            ))
            endpoints_ok = False
            continue
        if line.from_node == line.to_node:
            out.append(Violation(
                ViolationKind.SELF_LOOP, alpha,
                f"line {alpha} connects node {line.from_node} to itself", on_edge=True,
            ))
        if line.resistance <= 0 or line.inductance <= 0:
            out.append(Violation(
                ViolationKind.NON_POSITIVE_PARAMETER, alpha, f"line {alpha} needs R > 0 and L > 0", on_edge=True,
            ))
        elif not line.time_constant < spec.tau_max:
            out.append(Violation(
                ViolationKind.TIME_CONSTANT_TOO_LARGE, alpha,
                f"line {alpha} time constant {line.time_constant:g}s is not below tau_max {spec.tau_max:g}s",
                on_edge=True,
            ))
        if kinds[line.from_node] == NodeKind.SOURCE and kinds[line.to_node] == NodeKind.SOURCE:
            out.append(Violation(
                ViolationKind.SOURCE_TO_SOURCE_LINE, alpha,
                f"line {alpha} joins two sources", informational=True, on_edge=True,
            ))

    total_r = sum(e.resistance for e in spec.edges)
    if total_r > spec.r_max * (1 + _REL_SLACK):
        out.append(Violation(
            ViolationKind.RESISTANCE_BUDGET_EXCEEDED, None,
            f"total line resistance {total_r:g} exceeds R_max {spec.r_max:g}",
        ))

    if not (spec.v0 / 2 < spec.v_tr <= spec.v_min < spec.v0):
        out.append(Violation(
            ViolationKind.VOLTAGE_ORDERING, None,
            f"need V0/2 < V_tr <= V_min < V0, got V0={spec.v0:g}, V_tr={spec.v_tr:g}, V_min={spec.v_min:g}",
        ))

    if spec.r_max > 0 and not spec.p_max < spec.v0 ** 2 / (4.0 * spec.r_max):
        out.append(Violation(
            ViolationKind.LOADABILITY_EXCEEDS_P0, None,
            f"P_max {spec.p_max:g} is not below P0 = {spec.v0 ** 2 / (4.0 * spec.r_max):g}",
        ))

    if endpoints_ok and spec.source_indices:
        out.extend(_connectivity_violations(spec))

    return sorted(out, key=_violation_key)


def _violation_key(v: Violation) -> tuple:
    return (v.kind.value, v.on_edge, -1 if v.element is None else v.element, v.message)


def blocking(violations: Sequence[Violation]) -> List[Violation]:
    """Violations that invalidate the network (informational ones dropped)"""
    return [v for v in violations if not v.informational]
