"""
Topology Service

Random admissible networks for fuzzing the certificate. A network is a
uniform spanning tree of the complete graph plus extra edges with a fixed
probability, with line resistances scaled to the R_max budget.
"""

from typing import Optional

import networkx as nx
import numpy as np

from ..models.network import Line, NetworkSpec, Node, NodeKind
from ..utils.exceptions import DomainError
from ..utils.logging_config import get_logger
from .certify import DesignParameters, design_capacitance

logger = get_logger(__name__)


def random_network(
    n_nodes: int,
    seed: int,
    *,
    n_sources: int = 1,
    v0: float = 1.0,
    r_max: float = 1.0,
    tau_max: float = 1.0,
    p_max: Optional[float] = None,
    v_min: Optional[float] = None,
    v_tr: Optional[float] = None,
    mesh_probability: float = 0.3,
    budget: float = 0.999,
    margin: Optional[float] = None,
    cap_factor: Optional[float] = None,
) -> NetworkSpec:
    """
    Deterministic random network for a given seed.

    Node 0 (and the next n_sources - 1 nodes) are sources, the rest loads.
    Load limits p_k^max split P_max at random; nominal powers lie below
    them. Capacitances default to `design_capacitance` with `margin`;
    `cap_factor` instead scales the sufficient bound (below 1 gives an
    uncertified network).
    """
    if n_nodes < 2:
        raise DomainError("a network needs at least 2 nodes", {"n_nodes": n_nodes})
    if not 1 <= n_sources < n_nodes:
        raise DomainError("need 1 <= n_sources < n_nodes", {"n_sources": n_sources})
    if not 0 < budget <= 1:
        raise DomainError("resistance budget must lie in (0, 1]", {"budget": budget})

    rng = np.random.default_rng(seed)
    apex = v0 ** 2 / (4.0 * r_max)
    p_max = 0.2 * apex if p_max is None else p_max
    v_min = 0.8 * v0 if v_min is None else v_min
    v_tr = 0.66 * v0 if v_tr is None else v_tr

    tree = nx.random_spanning_tree(nx.complete_graph(n_nodes), seed=int(rng.integers(2 ** 31)))
    pairs = [tuple(sorted(e)) for e in tree.edges()]
    in_tree = set(pairs)
    for a in range(n_nodes):
        for b in range(a + 1, n_nodes):
            if (a, b) not in in_tree and rng.random() < mesh_probability:
                pairs.append((a, b))
    pairs.sort()

    raw = rng.uniform(0.5, 1.5, len(pairs))
    resistances = raw * (budget * r_max / raw.sum())
    taus = rng.uniform(0.2, 0.9, len(pairs)) * tau_max
    edges = []
    for (a, b), r, tau in zip(pairs, resistances, taus):
        if rng.random() < 0.5:
            a, b = b, a
        edges.append(Line(int(a), int(b), float(r), float(tau * r)))

    n_loads = n_nodes - n_sources
    shares = rng.dirichlet(np.ones(n_loads))
    limits = shares * p_max
    nominal = limits * rng.uniform(0.0, 1.0, n_loads)

    params = DesignParameters(v0=v0, r_max=r_max, tau_max=tau_max, p_max=p_max, v_min=v_min, v_tr=v_tr)
    if cap_factor is None:
        caps = [design_capacitance(params, float(lim), margin) for lim in limits]
    else:
        caps = [cap_factor * design_capacitance(params, float(lim), 1.0) for lim in limits]

    nodes = [Node(i, NodeKind.SOURCE) for i in range(n_sources)]
    nodes += [
        Node(n_sources + j, NodeKind.LOAD, float(nominal[j]), float(limits[j]), float(caps[j]))
        for j in range(n_loads)
    ]
    logger.debug("Random network seed=%d: %d nodes, %d lines", seed, n_nodes, len(edges))
    return NetworkSpec(
        nodes=tuple(nodes), edges=tuple(edges),
        v0=v0, r_max=r_max, tau_max=tau_max, p_max=p_max, v_min=v_min, v_tr=v_tr,
    )
