"""
Shared fixtures: a two-bus network (one source, one load) and a
three-bus radial path, both with V0 = 1, R_max = 1, tau_max = 1.
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.models.network import Line, NetworkSpec, Node, NodeKind  # noqa: E402


def build_two_bus(
    capacitance: float = 1.0,
    p_nominal: float = 0.05,
    p_max_load: float = 0.1,
    line_tau: float = 0.5,
    p_max: float = 0.1,
    v_min: float = 0.8,
    v_tr: float = 0.66,
) -> NetworkSpec:
    return NetworkSpec(
        nodes=(
            Node(0, NodeKind.SOURCE),
            Node(1, NodeKind.LOAD, p_nominal=p_nominal, p_max=p_max_load, capacitance=capacitance),
        ),
        edges=(Line(0, 1, resistance=1.0, inductance=line_tau * 1.0),),
        v0=1.0, r_max=1.0, tau_max=1.0, p_max=p_max, v_min=v_min, v_tr=v_tr,
    )


def build_three_bus(capacitance: float = 1.0) -> NetworkSpec:
    return NetworkSpec(
        nodes=(
            Node(0, NodeKind.SOURCE),
            Node(1, NodeKind.LOAD, p_nominal=0.03, p_max=0.05, capacitance=capacitance),
            Node(2, NodeKind.LOAD, p_nominal=0.04, p_max=0.05, capacitance=capacitance),
        ),
        edges=(
            Line(0, 1, resistance=0.4, inductance=0.2),
            Line(1, 2, resistance=0.5, inductance=0.25),
        ),
        v0=1.0, r_max=1.0, tau_max=1.0, p_max=0.1, v_min=0.8, v_tr=0.66,
    )


@pytest.fixture
def two_bus() -> NetworkSpec:
    return build_two_bus()


@pytest.fixture
def three_bus() -> NetworkSpec:
    return build_three_bus()


TWO_BUS_TEXT = """\
# two-bus test network
[globals]
v0 = 1.0
r_max = 1.0
tau_max = 1.0
p_max = 0.1
v_min = 0.8
v_tr = 0.66

[nodes]
0 source
1 load p_nominal={p_nominal} p_max=0.1 capacitance={capacitance}

[edges]
0 1 resistance=1.0 inductance=0.5
"""


@pytest.fixture
def two_bus_file(tmp_path):
    """Factory writing a two-bus network file"""
    def write(capacitance: float = 1.0, p_nominal: float = 0.05, name: str = "two_bus.net"):
        path = tmp_path / name
        path.write_text(TWO_BUS_TEXT.format(capacitance=capacitance, p_nominal=p_nominal))
        return path
    return write
