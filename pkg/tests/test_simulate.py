"""
Tests for the Simulation Service

Tests cover:
- Vector field domain checks
- Fixed point and closed-form endpoints
- Switching events and the post-switch potential
- Monotone potential and its analytic decay rate
- Instability below the necessary capacitance
- Certificate fuzzing and random topologies
"""

import dataclasses
import logging

import numpy as np
import pytest

from app.models.network import Line, NetworkSpec, Node, NodeKind, blocking, validate
from app.models.state import SwitchingEvent, SystemState, TrajectoryVerdict
from app.services.certify import certify_network, design_capacitance, post_switch_bound
from app.services.equilibrium import solve_power_flow, two_bus_v_high
from app.services.potential import equilibrium_state
from app.services.simulate import (
    FuzzReport,
    RunOutcome,
    SimulationOptions,
    TransientSimulator,
    apply_event,
    fuzz_random_networks,
    integrate,
    potential_decay_consistency,
    random_events,
    rhs,
    run_event,
    verify_certificate,
)
from app.services.topology import random_network
from app.utils.exceptions import CertificateViolation, DomainError
from tests.conftest import build_two_bus


def _certified_two_bus(**kw):
    """Two-bus network with C = 2x the sufficient bound"""
    spec = build_two_bus(p_nominal=0.0, **kw)
    return spec.with_capacitances([design_capacitance(spec, 0.1, margin=2.0)])


def _three_load_path(capacitance=2.0):
    """Three loads whose limits together exceed P_max"""
    return NetworkSpec(
        nodes=(Node(0, NodeKind.SOURCE),) + tuple(
            Node(k, NodeKind.LOAD, p_nominal=0.0, p_max=0.1, capacitance=capacitance) for k in (1, 2, 3)
        ),
        edges=tuple(Line(k, k + 1, resistance=0.3, inductance=0.15) for k in range(3)),
        v0=1.0, r_max=1.0, tau_max=1.0, p_max=0.1, v_min=0.8, v_tr=0.66,
    )


def _step_run(spec, p_after=0.1, t_end=60.0, options=None):
    eq = solve_power_flow(spec, [0.0])
    start = equilibrium_state(spec, eq)
    event = SwitchingEvent(load=1, p_before=0.0, p_after=p_after, time=0.0)
    return integrate(spec, start, [0.0], t_end, options=options, events=[event])


class TestRhs:

    def test_domain_error_on_collapsed_voltage(self, two_bus):
        with pytest.raises(DomainError):
            rhs(two_bus, SystemState(np.array([0.0]), np.array([0.1])))

    def test_matches_capacitor_equation(self):
        spec = build_two_bus(capacitance=0.25)
        i_dot, v_dot = rhs(spec, SystemState(np.array([1.0]), np.array([0.0])), [0.1])
        assert i_dot[0] == 0.0
        assert v_dot[0] == pytest.approx(-0.4)


class TestIntegrate:
    """Single runs"""

    def test_equilibrium_is_fixed_point(self, three_bus):
        """Starting at x_sep stays within 1e-6 V0 for 100 tau_max"""
        eq = solve_power_flow(three_bus)
        start = equilibrium_state(three_bus, eq)
        traj = integrate(three_bus, start, eq.p, 100.0)
        drift = max(np.max(np.abs(s.v_loads - start.v_loads)) for s in traj.states)
        assert drift < 1e-6
        assert traj.verdict == TrajectoryVerdict.CONVERGED_TO_SEP

    def test_step_converges_to_closed_form(self):
        """0 -> 0.1 settles at V_high(0.1)"""
        traj = _step_run(_certified_two_bus())
        assert traj.verdict == TrajectoryVerdict.CONVERGED_TO_SEP
        assert traj.final_state.v_loads[0] == pytest.approx(0.887298, abs=1e-6)
        assert traj.final_state.v_loads[0] >= two_bus_v_high(0.1, 1.0, 1.0) - 1e-6

    def test_tolerance_halving(self):
        """Endpoints are stable under tighter tolerances"""
        spec = _certified_two_bus()
        coarse = _step_run(spec, t_end=20.0)
        fine = _step_run(spec, t_end=20.0, options=SimulationOptions(rtol=0.5e-8, atol=0.5e-10))
        assert np.max(np.abs(coarse.final_state.as_vector() - fine.final_state.as_vector())) < 1e-7

    def test_potential_nonincreasing(self):
        traj = _step_run(_certified_two_bus())
        assert traj.max_potential_increase() <= 1e-9
        assert all(s.q_definite for s in traj.potentials)

    def test_decay_rate_consistency(self):
        spec = _certified_two_bus()
        traj = _step_run(spec, t_end=30.0)
        assert potential_decay_consistency(spec, traj) < 1e-4

    def test_events_outside_horizon(self, two_bus):
        eq = solve_power_flow(two_bus)
        start = equilibrium_state(two_bus, eq)
        event = SwitchingEvent(load=1, p_before=0.05, p_after=0.1, time=5.0)
        with pytest.raises(DomainError):
            integrate(two_bus, start, eq.p, 1.0, events=[event])

    def test_below_necessary_capacitance_is_unstable(self):
        """Half the necessary capacitance: the worst-case step does not settle"""
        spec = build_two_bus(p_nominal=0.0, line_tau=0.95)
        spec = spec.with_capacitances([0.5 * 1.0 * 0.1 / 0.8 ** 2])
        traj = _step_run(spec, t_end=50.0)
        assert traj.verdict != TrajectoryVerdict.CONVERGED_TO_SEP


class TestEvents:
    """Switching events"""

    def test_zero_magnitude_forbidden(self):
        with pytest.raises(DomainError):
            SwitchingEvent(load=1, p_before=0.1, p_after=0.1, time=0.0)

    def test_event_power_above_limit(self, two_bus):
        eq = solve_power_flow(two_bus)
        sim = TransientSimulator(two_bus, eq.p, equilibrium_state(two_bus, eq))
        with pytest.raises(DomainError):
            sim.apply_event(SwitchingEvent(load=1, p_before=0.05, p_after=0.2, time=0.0))

    def test_state_continuous_across_event(self):
        spec = _certified_two_bus()
        traj = _step_run(spec, t_end=5.0)
        start = traj.segment_starts[1]
        assert traj.times[start] == traj.times[start - 1]
        np.testing.assert_array_equal(traj.states[start].as_vector(), traj.states[start - 1].as_vector())
        assert traj.powers[start][0] == 0.1

    def test_post_switch_potential_bounded(self):
        """P(t+) stays below the closed-form bound"""
        spec = _certified_two_bus()
        eq = solve_power_flow(spec, [0.03])
        sim = TransientSimulator(spec, [0.03], equilibrium_state(spec, eq))
        event = SwitchingEvent(load=1, p_before=0.03, p_after=0.1, time=0.0)
        traj = apply_event(sim, event).finish()
        assert traj.potentials[-1].p_total <= post_switch_bound(spec, eq, event) + 1e-12

    def test_sequence_of_events(self):
        spec = _certified_two_bus()
        eq = solve_power_flow(spec, [0.0])
        events = [
            SwitchingEvent(load=1, p_before=0.0, p_after=0.1, time=1.0),
            SwitchingEvent(load=1, p_before=0.1, p_after=0.04, time=30.0),
        ]
        traj = integrate(spec, equilibrium_state(spec, eq), [0.0], 70.0, events=events)
        assert len(traj.segments()) == 3
        assert traj.verdict == TrajectoryVerdict.CONVERGED_TO_SEP
        assert traj.final_state.v_loads[0] == pytest.approx(two_bus_v_high(0.04, 1.0, 1.0), abs=1e-6)


class TestTopology:
    """Random network generator"""

    def test_deterministic(self):
        assert random_network(6, 42) == random_network(6, 42)

    def test_different_seeds_differ(self):
        assert random_network(6, 1) != random_network(6, 2)

    def test_generated_networks_are_valid_and_certified(self):
        for seed in range(5):
            spec = random_network(6, seed)
            assert blocking(validate(spec)) == []
            assert spec.total_resistance <= spec.r_max
            assert np.all(spec.time_constants < spec.tau_max)
            assert certify_network(spec).certified

    def test_cap_factor_below_one_is_not_certified(self):
        spec = random_network(5, 0, cap_factor=0.5)
        assert not certify_network(spec).certified

    def test_too_small(self):
        with pytest.raises(DomainError):
            random_network(1, 0)


class TestFuzz:
    """Certificate fuzzing"""

    def test_random_events_are_admissible(self, three_bus):
        for p_vec, event in random_events(three_bus, 30, seed=1):
            assert np.all(p_vec <= three_bus.p_max_loads)
            assert event.p_before == p_vec[three_bus.load_position(event.load)]
            event.check_against(three_bus)

    def test_certified_two_bus(self):
        report = verify_certificate(_certified_two_bus(), 25, seed=0)
        assert report.passed
        assert report.runs == 25
        assert report.verdict_counts == {"converged_to_sep": 25}
        assert report.max_potential_increase <= 1e-9
        assert report.max_decay_mismatch < 1e-4

    def test_uncertified_network_rejected(self):
        with pytest.raises(DomainError):
            verify_certificate(build_two_bus(capacitance=0.2), 5, seed=0)

    def test_violation_raised_in_strict_mode(self, monkeypatch):
        """A failing run surfaces as CertificateViolation"""
        from app.services import simulate

        def failing_run(spec, p_before, event, horizon, options=None):
            outcome = RunOutcome(event, tuple(p_before), TrajectoryVerdict.TIMED_OUT, 0.0, 0.0, 0.0, "verdict timed_out")
            return outcome, None

        monkeypatch.setattr(simulate, "run_event", failing_run)
        with pytest.raises(CertificateViolation):
            verify_certificate(_certified_two_bus(), 3, seed=0)
        report = verify_certificate(_certified_two_bus(), 3, seed=0, strict=False)
        assert len(report.violations) == 3

    def test_sweep_summary_log_level(self, monkeypatch, caplog):
        """Clean sweeps log at INFO, sweeps with violations at WARNING"""
        from app.services import simulate

        caplog.set_level(logging.INFO, logger="app")
        verify_certificate(_certified_two_bus(), 2, seed=0)
        (clean,) = [r for r in caplog.records if r.getMessage().startswith("Fuzzed")]
        assert clean.levelno == logging.INFO

        def failing_run(spec, p_before, event, horizon, options=None):
            outcome = RunOutcome(event, tuple(p_before), TrajectoryVerdict.TIMED_OUT, 0.0, 0.0, 0.0, "verdict timed_out")
            return outcome, None

        monkeypatch.setattr(simulate, "run_event", failing_run)
        caplog.clear()
        verify_certificate(_certified_two_bus(), 2, seed=0, strict=False)
        (failed,) = [r for r in caplog.records if r.getMessage().startswith("Fuzzed")]
        assert failed.levelno == logging.WARNING
        assert failed.entity_type == "fuzz"

    def test_report_merge(self):
        a, b = FuzzReport(), FuzzReport()
        event = SwitchingEvent(load=1, p_before=0.0, p_after=0.1, time=0.0)
        a.add(RunOutcome(event, (0.0,), TrajectoryVerdict.CONVERGED_TO_SEP, -1e-3, 1e-6, -0.1))
        b.add(RunOutcome(event, (0.0,), TrajectoryVerdict.CONVERGED_TO_SEP, -2e-3, 2e-6, -0.1))
        merged = a.merge(b)
        assert merged.runs == 2
        assert merged.verdict_counts == {"converged_to_sep": 2}
        assert merged.max_decay_mismatch == 2e-6

    def test_random_events_respect_p_max(self):
        """Load limits summing past P_max: both totals stay within P_max"""
        spec = _three_load_path()
        assert float(np.sum(spec.p_max_loads)) > spec.p_max
        for p_vec, event in random_events(spec, 200, seed=5):
            after = p_vec.copy()
            after[spec.load_position(event.load)] = event.p_after
            assert float(np.sum(p_vec)) <= spec.p_max + 1e-12
            assert float(np.sum(after)) <= spec.p_max + 1e-12
            event.check_against(spec)

    def test_random_events_need_switchable_load(self):
        spec = _three_load_path()
        with pytest.raises(DomainError):
            random_events(dataclasses.replace(spec, p_max=0.0), 3, seed=0)

    def test_overlapping_load_limits_certificate(self):
        """A certified network whose load limits overlap P_max fuzzes cleanly"""
        spec = _three_load_path()
        assert certify_network(spec).certified
        report = verify_certificate(spec, 10, 0, strict=False)
        assert report.runs == 10
        assert report.passed

    def test_random_mesh_events_converge(self):
        """Runs on meshed random networks settle at x_sep"""
        for seed in range(3):
            spec = random_network(6, seed)
            for p_vec, event in random_events(spec, 2, seed):
                outcome, traj = run_event(spec, p_vec, event, 100.0 * spec.tau_max)
                assert outcome.verdict == TrajectoryVerdict.CONVERGED_TO_SEP
                assert outcome.reason is None
                assert potential_decay_consistency(spec, traj) < 1e-4

    def test_convergence_independent_of_capacitance_scale(self):
        """Large capacitors still end the run as converged"""
        spec = _certified_two_bus()
        big = spec.with_capacitances([50.0 * spec.capacitances[0]])
        traj = _step_run(big, t_end=100.0 * big.capacitances[0], options=SimulationOptions(stop_when_converged=True))
        assert traj.verdict == TrajectoryVerdict.CONVERGED_TO_SEP

    def test_small_random_sweep(self):
        report = fuzz_random_networks(2, 5, 5, seed=3)
        assert report.passed
        assert report.runs == 10
        assert report.verdict_counts == {"converged_to_sep": 10}
        assert report.max_decay_mismatch < 1e-4

    @pytest.mark.slow
    def test_certified_two_bus_hundred_events(self):
        assert verify_certificate(_certified_two_bus(), 100, seed=1).passed

    @pytest.mark.slow
    def test_random_sweep(self):
        """50 certified random networks x 20 events"""
        report = fuzz_random_networks(50, 6, 20, seed=2024)
        assert report.passed
        assert report.max_potential_increase <= 1e-9
        assert report.max_decay_mismatch < 1e-4
