"""
Tests for the Equilibrium Service

Tests cover:
- Two-bus closed forms and the nose curve
- Maximum loadability
- Newton power flow against closed forms and KCL
- High/low voltage classification of the solution
- The equilibrium as minimizer of the co-content
- Convexity of the co-content on v > V0/2
"""

import numpy as np
import pytest

from app.models.network import Line, NetworkSpec, Node, NodeKind
from app.models.state import Classification
from app.services.equilibrium import (
    check_feasibility,
    gradient_G,
    hessian_G,
    is_convex_at,
    voltage_bounds,
    max_loadability,
    nose_curve,
    p0,
    solve_power_flow,
    two_bus_v_high,
    two_bus_v_low,
)
from app.services.potential import co_content
from app.services.topology import random_network
from app.utils.exceptions import DomainError, InfeasiblePower, NonConvergence


def _path_two_loads() -> NetworkSpec:
    """S - L1 - L2 with R = 0.5 per line"""
    return NetworkSpec(
        nodes=(
            Node(0, NodeKind.SOURCE),
            Node(1, NodeKind.LOAD, p_nominal=0.0, p_max=0.1, capacitance=1.0),
            Node(2, NodeKind.LOAD, p_nominal=0.0, p_max=0.1, capacitance=1.0),
        ),
        edges=(Line(0, 1, 0.5, 0.1), Line(1, 2, 0.5, 0.1)),
        v0=1.0, r_max=1.0, tau_max=1.0, p_max=0.2, v_min=0.7, v_tr=0.66,
    )


def _grid_minimum(fun, lo, hi, rounds=12, n=41):
    """Zooming grid search for the minimizer of a convex function on a box"""
    lo, hi = np.array(lo, dtype=float), np.array(hi, dtype=float)
    best = 0.5 * (lo + hi)
    for _ in range(rounds):
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        values = np.array([[fun(np.array([x, y])) for y in axes[1]] for x in axes[0]])
        i, j = np.unravel_index(np.argmin(values), values.shape)
        best = np.array([axes[0][i], axes[1][j]])
        half = 5.0 * (hi - lo) / (n - 1)
        lo, hi = np.maximum(best - half, lo), np.minimum(best + half, hi)
    return best


class TestTwoBusClosedForm:
    """V_high / V_low"""

    def test_v_high_at_tenth_of_unit_power(self):
        assert two_bus_v_high(0.1, 1.0, 1.0) == pytest.approx(0.887298, abs=1e-6)

    def test_v_low_at_tenth_of_unit_power(self):
        assert two_bus_v_low(0.1, 1.0, 1.0) == pytest.approx(0.112702, abs=1e-6)

    def test_branches_meet_at_apex(self):
        """At P0 both branches equal V0/2"""
        assert two_bus_v_high(0.25, 1.0, 1.0) == pytest.approx(0.5)
        assert two_bus_v_low(0.25, 1.0, 1.0) == pytest.approx(0.5)

    def test_no_load(self):
        assert two_bus_v_high(0.0, 1.0, 1.0) == 1.0
        assert two_bus_v_low(0.0, 1.0, 1.0) == 0.0

    def test_above_apex_is_infeasible(self):
        with pytest.raises(InfeasiblePower):
            two_bus_v_high(0.26, 1.0, 1.0)

    def test_negative_power_rejected(self):
        with pytest.raises(DomainError):
            two_bus_v_low(-0.01, 1.0, 1.0)

    def test_branches_satisfy_power_balance(self):
        """v (V0 - v) / R = p on both branches"""
        for p in (0.01, 0.1, 0.2):
            for v in (two_bus_v_high(p, 2.0, 1.5), two_bus_v_low(p, 2.0, 1.5)):
                assert v * (1.5 - v) / 2.0 == pytest.approx(p, rel=1e-12)

    def test_p0(self):
        assert p0(1.0, 1.0) == 0.25
        with pytest.raises(DomainError):
            p0(0.0, 1.0)


class TestNoseCurve:

    def test_endpoints(self):
        curve = nose_curve(1.0, 1.0, 11)
        assert len(curve.samples) == 11
        assert curve.samples[0] == (0.0, 1.0, 0.0)
        assert curve.samples[-1].p == pytest.approx(0.25)
        assert curve.samples[-1].v_high == pytest.approx(0.5)

    def test_too_few_samples(self):
        with pytest.raises(DomainError):
            nose_curve(1.0, 1.0, 1)


class TestMaxLoadability:

    def test_example_value(self):
        assert max_loadability(0.8, 1.0, 1.0) == pytest.approx(0.16)

    def test_half_voltage_gives_p0(self):
        assert max_loadability(0.5, 1.0, 1.0) == pytest.approx(0.25)

    def test_v_min_below_half_rejected(self):
        with pytest.raises(DomainError):
            max_loadability(0.4, 1.0, 1.0)

    def test_feasibility_result(self, two_bus):
        result = check_feasibility(two_bus)
        assert result.feasible
        assert result.p_max_allowed == pytest.approx(0.16)
        assert result.v_high_at_p_max == pytest.approx(0.887298, abs=1e-6)


class TestPowerFlow:
    """Damped Newton power flow"""

    def test_matches_two_bus_closed_form(self, two_bus):
        """100 loadings in [0, 0.99 P0] match V_high to 1e-9"""
        for p in np.linspace(0.0, 0.99 * 0.25, 100):
            eq = solve_power_flow(two_bus, [p])
            assert eq.v_sep[1] == pytest.approx(two_bus_v_high(p, 1.0, 1.0), abs=1e-9)
            assert eq.classification == Classification.HIGH_VOLTAGE

    def test_kirchhoff_current_law(self, three_bus):
        """Lines deliver p_k / v_k into every load"""
        eq = solve_power_flow(three_bus)
        v = eq.v_loads(three_bus)
        outflow = (three_bus.incidence.T @ eq.i_sep)[[1, 2]]
        np.testing.assert_allclose(outflow, -three_bus.p_nominal / v, atol=1e-10)

    def test_residual_below_tolerance(self, three_bus):
        eq = solve_power_flow(three_bus)
        assert eq.converged
        assert np.max(np.abs(gradient_G(three_bus, eq.v_loads(three_bus), eq.p))) < 1e-10 * 0.1

    def test_voltages_above_high_voltage_bound(self, three_bus):
        eq = solve_power_flow(three_bus)
        v_high, _ = voltage_bounds(eq.p_sigma, three_bus.r_max, three_bus.v0)
        assert np.min(eq.v_loads(three_bus)) >= v_high - 1e-12

    def test_sources_pinned(self, three_bus):
        eq = solve_power_flow(three_bus, [0.05, 0.05])
        assert eq.v_sep[0] == 1.0

    def test_zero_load_gives_flat_profile(self, three_bus):
        eq = solve_power_flow(three_bus, [0.0, 0.0])
        np.testing.assert_allclose(eq.v_sep, 1.0)
        np.testing.assert_allclose(eq.i_sep, 0.0)

    def test_infeasible_total(self, three_bus):
        with pytest.raises(InfeasiblePower):
            solve_power_flow(three_bus, [0.2, 0.2])

    def test_wrong_length(self, three_bus):
        with pytest.raises(DomainError):
            solve_power_flow(three_bus, [0.01])

    def test_iteration_cap(self, three_bus):
        """One iteration is not enough from the flat start"""
        with pytest.raises(NonConvergence):
            solve_power_flow(three_bus, [0.05, 0.05], max_iter=1, tol=1e-15)

    def test_random_networks_converge(self):
        for seed in range(10):
            spec = random_network(6, seed)
            eq = solve_power_flow(spec)
            assert eq.classification == Classification.HIGH_VOLTAGE


class TestCoContentMinimum:
    """The power flow solution minimizes the co-content on v > V0/2"""

    P = [0.09375, 0.09375]

    def test_newton_matches_grid_search(self):
        spec = _path_two_loads()
        eq = solve_power_flow(spec, self.P)
        best = _grid_minimum(lambda v: co_content(spec, spec.full_voltage(v), self.P), [0.5, 0.5], [1.0, 1.0])
        np.testing.assert_allclose(eq.v_loads(spec), best, atol=1e-6)

    def test_sampled_points_do_not_beat_equilibrium(self):
        rng = np.random.default_rng(11)
        spec = _path_two_loads()
        eq = solve_power_flow(spec, self.P)
        g_sep = co_content(spec, eq.v_sep, self.P)
        for v in rng.uniform(0.5 + 1e-9, 1.0, (500, 2)):
            assert g_sep <= co_content(spec, spec.full_voltage(v), self.P) + 1e-15

    def test_random_networks(self):
        rng = np.random.default_rng(3)
        for seed in range(5):
            spec = random_network(5, seed)
            eq = solve_power_flow(spec)
            g_sep = co_content(spec, eq.v_sep, eq.p)
            for v in rng.uniform(0.5 + 1e-9, 1.0, (100, spec.n_loads)):
                assert g_sep <= co_content(spec, spec.full_voltage(v), eq.p) + 1e-15


class TestConvexity:
    """Hessian of the co-content"""

    def test_hessian_two_bus(self, two_bus):
        """1/R - p/v^2 for a single load"""
        hess = hessian_G(two_bus, [0.9], [0.1])
        assert hess[0, 0] == pytest.approx(1.0 - 0.1 / 0.81)

    def test_accepts_full_voltage_vector(self, three_bus):
        a = hessian_G(three_bus, [1.0, 0.9, 0.8])
        b = hessian_G(three_bus, [0.9, 0.8])
        np.testing.assert_allclose(a, b)

    def test_positive_definite_above_half_voltage(self):
        """Random points with v > V0/2 and p_sigma < P0 on random networks"""
        rng = np.random.default_rng(7)
        for seed in range(20):
            spec = random_network(int(rng.integers(2, 8)), seed)
            for _ in range(10):
                v = rng.uniform(0.5 + 1e-6, 1.0, spec.n_loads)
                p = rng.dirichlet(np.ones(spec.n_loads)) * rng.uniform(0.0, 0.999) * spec.p0
                assert np.linalg.eigvalsh(hessian_G(spec, v, p))[0] > 0
                assert is_convex_at(spec, v, p)

    def test_not_convex_at_low_voltage(self, two_bus):
        """Below V0/2 with heavy loading the Hessian turns indefinite"""
        assert not is_convex_at(two_bus, [0.3], [0.2])

    @pytest.mark.slow
    def test_positive_definite_sweep(self):
        """1000 random points across random specs"""
        rng = np.random.default_rng(2024)
        for k in range(1000):
            spec = random_network(int(rng.integers(2, 9)), k)
            v = rng.uniform(0.5 + 1e-9, 1.0, spec.n_loads)
            p = rng.dirichlet(np.ones(spec.n_loads)) * rng.uniform(0.0, 0.999999) * spec.p0
            assert np.linalg.eigvalsh(hessian_G(spec, v, p))[0] > 0
