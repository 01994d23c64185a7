"""
Simulation Service

Nonlinear transient simulation of the line and capacitor equations with
single-load switching events:
- Adaptive RK45 integration with domain/divergence detection
- Brayton-Moser potential recorded on every accepted step
- Consistency of the recorded potential with its analytic decay rate
- Randomized fuzzing of certified networks
"""

import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from ..config import settings
from ..models.network import NetworkSpec
from ..models.state import (
    PotentialSample,
    SwitchingEvent,
    SystemState,
    TrajectoryVerdict,
)
from ..utils.exceptions import (
    CertificateViolation,
    DomainError,
    InfeasiblePower,
    NonConvergence,
    StepSizeUnderflow,
)
from ..utils.logging_config import get_logger
from .certify import certify_network, post_switch_bound
from .equilibrium import solve_power_flow
from .potential import NetworkDynamics, equilibrium_state, state_derivative
from .topology import random_network

logger = get_logger(__name__)

# Gauss-Legendre nodes for integrating the decay rate over one step
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def rhs(spec: NetworkSpec, state: SystemState, p: Optional[Sequence[float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(i_dot, v_dot) of the line and capacitor equations; DomainError if any v_k <= 0"""
    return state_derivative(spec, state, p)


@dataclass(frozen=True)
class SimulationOptions:
    """Integrator settings; None fields are filled from settings and the network"""
    rtol: Optional[float] = None
    atol: Optional[float] = None
    max_step: Optional[float] = None
    converge_tol: Optional[float] = None
    convergence_steps: Optional[int] = None
    sep_tol: Optional[float] = None
    divergence_limit: Optional[float] = None
    stop_outside_domain: bool = True
    stop_when_converged: bool = False
    chunk: Optional[float] = None

    def resolve(self, spec: NetworkSpec) -> "SimulationOptions":
        tau_min = float(np.min(spec.time_constants)) if spec.n_edges else spec.tau_max
        return replace(
            self,
            rtol=self.rtol or settings.sim_rtol,
            atol=self.atol or settings.sim_atol_scale * spec.v0,
            max_step=self.max_step or tau_min / 5.0,
            converge_tol=self.converge_tol or settings.sim_converge_scale * spec.v0,
            convergence_steps=self.convergence_steps or settings.convergence_steps,
            sep_tol=self.sep_tol or settings.sep_tol_scale * spec.v0,
            divergence_limit=self.divergence_limit or settings.divergence_scale * spec.v0,
            chunk=self.chunk or 5.0 * spec.tau_max,
        )


@dataclass
class Trajectory:
    """
    Recorded run. Samples are taken at every accepted step; an event adds
    a second sample at the same time carrying the post-switch power, and
    starts a new segment.
    """
    times: np.ndarray
    states: List[SystemState]
    potentials: List[PotentialSample]
    powers: List[np.ndarray]
    events: List[SwitchingEvent]
    segment_starts: List[int]
    verdict: TrajectoryVerdict
    left_domain_time: Optional[float] = None
    # dense[k] interpolates the step ending at sample k (None at segment starts)
    dense: List[Optional[Callable]] = field(default_factory=list, repr=False)

    @property
    def final_state(self) -> SystemState:
        return self.states[-1]

    def segments(self) -> List[Tuple[int, int]]:
        """[start, stop) sample ranges between events"""
        bounds = list(self.segment_starts) + [len(self.states)]
        return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def max_potential_increase(self) -> float:
        """Largest P[k+1] - P[k] inside any segment (negative when P strictly decays)"""
        worst = -math.inf
        for a, b in self.segments():
            p_vals = np.array([s.p_total for s in self.potentials[a:b]])
            if p_vals.size > 1:
                worst = max(worst, float(np.max(np.diff(p_vals))))
        return worst


class TransientSimulator:
    """
    Stateful integration of one run. Use `advance` to integrate up to a
    time, `apply_event` to switch a load, and `finish` for the Trajectory.
    """

    def __init__(
        self,
        spec: NetworkSpec,
        p: Optional[Sequence[float]],
        initial: SystemState,
        options: Optional[SimulationOptions] = None,
    ):
        initial.check_domain()
        self.spec = spec
        self.dyn = NetworkDynamics(spec)
        self.options = (options or SimulationOptions()).resolve(spec)
        self.p = np.array(spec.p_nominal if p is None else p, dtype=float)
        if self.p.shape[0] != spec.n_loads:
            raise DomainError(f"expected {spec.n_loads} load powers, got {self.p.shape[0]}")
        self.t = float(initial.time)
        self.x = initial.as_vector()
        # Line voltages L i_dot and capacitor currents C v_dot (times R_max), in volts
        self._residual_weights = np.concatenate([self.dyn.l, spec.r_max * self.dyn.c])
        # State distance in volts: line currents enter as R_max i
        self._state_weights = np.concatenate([np.full(spec.n_edges, spec.r_max), np.ones(spec.n_loads)])

        self._times: List[float] = []
        self._states: List[SystemState] = []
        self._potentials: List[PotentialSample] = []
        self._powers: List[np.ndarray] = []
        self._dense: List[Optional[Callable]] = []
        self._events: List[SwitchingEvent] = []
        self._segment_starts: List[int] = [0]
        self._quiet = 0
        self._left_at: Optional[float] = None
        self._diverged = False
        self._stopped = False
        self._targets: Dict[tuple, Optional[np.ndarray]] = {}
        self._started = time.perf_counter()

        self._record(self.t, self.x, None)
        if spec.n_loads and float(np.min(self.x[spec.n_edges:])) <= spec.v_tr:
            self._left_at = self.t
            self._stopped = self.options.stop_outside_domain

    # ----- recording -----

    def _record(self, t: float, x: np.ndarray, dense: Optional[Callable]) -> None:
        n_e = self.dyn.n_edges
        i, v = x[:n_e], x[n_e:]
        state = SystemState(v_loads=v.copy(), i_lines=i.copy(), time=float(t))
        with np.errstate(divide="ignore", invalid="ignore"):
            sample = self.dyn.sample(i, v, self.p)
        self._times.append(float(t))
        self._states.append(state)
        self._potentials.append(sample)
        self._powers.append(self.p.copy())
        self._dense.append(dense)

    def _target(self) -> Optional[np.ndarray]:
        """x_sep for the current power vector, None when no equilibrium exists"""
        key = tuple(self.p)
        if key not in self._targets:
            try:
                eq = solve_power_flow(self.spec, self.p)
                self._targets[key] = equilibrium_state(self.spec, eq).as_vector()
            except (InfeasiblePower, NonConvergence) as exc:
                logger.warning("No equilibrium for the post-switch loading: %s", exc)
                self._targets[key] = None
        return self._targets[key]

    def _near_target(self) -> bool:
        target = self._target()
        if target is None:
            return False
        distance = float(np.max(self._state_weights * np.abs(self.x - target), initial=0.0))
        return distance <= self.options.sep_tol

    @property
    def converged(self) -> bool:
        return self._quiet >= self.options.convergence_steps and self._near_target()

    # ----- integration -----

    def _integrate(self, t_until: float) -> None:
        opts = self.options
        dyn = self.dyn
        n_e = dyn.n_edges
        p = self.p.copy()
        v_tr = self.spec.v_tr
        limit = opts.divergence_limit
        weights = self._residual_weights

        def fun(_t, x):
            return dyn.vector_field(x, p)

        def leave(_t, x):
            return float(np.min(x[n_e:])) - v_tr
        leave.terminal = opts.stop_outside_domain
        leave.direction = -1

        def collapse(_t, x):
            return float(np.min(x[n_e:]))
        collapse.terminal = True
        collapse.direction = -1

        def blowup(_t, x):
            return limit - float(np.max(np.abs(x)))
        blowup.terminal = True
        blowup.direction = -1

        events = [leave, collapse, blowup] if dyn.n_loads else [blowup]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            sol = solve_ivp(
                fun, (self.t, t_until), self.x,
                method="RK45",
                rtol=opts.rtol,
                atol=opts.atol,
                max_step=opts.max_step,
                dense_output=True,
                events=events,
            )
        if sol.status == -1:
            raise StepSizeUnderflow(float(sol.t[-1]), sol.message)

        for j in range(1, sol.t.size):
            x = sol.y[:, j]
            self.t, self.x = float(sol.t[j]), x.copy()
            self._record(self.t, self.x, sol.sol)
            with np.errstate(divide="ignore", invalid="ignore"):
                residual = float(np.max(np.abs(weights * dyn.vector_field(x, p)), initial=0.0))
            self._quiet = self._quiet + 1 if residual < opts.converge_tol else 0

        if dyn.n_loads:
            if sol.t_events[0].size and self._left_at is None:
                self._left_at = float(sol.t_events[0][0])
            if sol.t_events[1].size or sol.t_events[2].size:
                self._diverged = True
        elif sol.t_events[0].size:
            self._diverged = True
        if sol.status == 1:
            self._stopped = True

    def advance(self, t_until: float) -> "TransientSimulator":
        """Integrate up to `t_until` (or until a terminal condition)"""
        if self._stopped or t_until <= self.t:
            return self
        if not self.options.stop_when_converged:
            self._integrate(t_until)
            return self
        # Chunked so a settled run can stop early
        while not self._stopped and self.t < t_until:
            self._integrate(min(self.t + self.options.chunk, t_until))
            if self.converged:
                self._stopped = True
        return self

    def apply_event(self, event: SwitchingEvent) -> "TransientSimulator":
        """
        Switch one load at event.time. The state is carried over unchanged;
        P is re-evaluated with the post-switch power.
        """
        event.check_against(self.spec)
        if event.time < self.t - 1e-12 * max(1.0, abs(self.t)):
            raise DomainError(
                f"event at t={event.time:g}s precedes the simulation time {self.t:g}s",
                {"event_time": event.time},
            )
        self.advance(event.time)
        if self._stopped:
            # A stopped-early run that had converged resumes for the next event
            if self._diverged or self._left_at is not None:
                logger.info("Event at t=%gs ignored, run already stopped", event.time)
                return self
            self._stopped = False
        pos = self.spec.load_position(event.load)
        if not math.isclose(self.p[pos], event.p_before, rel_tol=1e-9, abs_tol=1e-15):
            logger.warning(
                "Event p_before=%g differs from the load's current power %g",
                event.p_before, self.p[pos],
            )
        self.t = max(self.t, float(event.time))
        self.p[pos] = event.p_after
        self._events.append(event)
        self._segment_starts.append(len(self._states))
        self._record(self.t, self.x, None)
        self._quiet = 0
        return self

    def finish(self) -> Trajectory:
        if self._diverged:
            verdict = TrajectoryVerdict.DIVERGED
        elif self._left_at is not None:
            verdict = TrajectoryVerdict.LEFT_TRANSIENT_DOMAIN
        elif self.converged:
            verdict = TrajectoryVerdict.CONVERGED_TO_SEP
        else:
            verdict = TrajectoryVerdict.TIMED_OUT
        logger.trajectory_finished(
            verdict.value, self.t, len(self._times),
            duration_ms=(time.perf_counter() - self._started) * 1000.0,
        )
        return Trajectory(
            times=np.array(self._times),
            states=self._states,
            potentials=self._potentials,
            powers=self._powers,
            events=list(self._events),
            segment_starts=list(self._segment_starts),
            verdict=verdict,
            left_domain_time=self._left_at,
            dense=self._dense,
        )


def integrate(
    spec: NetworkSpec,
    initial: SystemState,
    p: Optional[Sequence[float]],
    t_end: float,
    options: Optional[SimulationOptions] = None,
    events: Sequence[SwitchingEvent] = (),
) -> Trajectory:
    """Simulate from `initial` to `t_end`, applying `events` in time order"""
    if t_end <= initial.time:
        raise DomainError("t_end must be after the initial time", {"t_end": t_end})
    for ev in events:
        if not initial.time <= ev.time <= t_end:
            raise DomainError(f"event at t={ev.time:g}s is outside the horizon", {"event_time": ev.time})
    sim = TransientSimulator(spec, p, initial, options)
    for ev in sorted(events, key=lambda e: e.time):
        sim.apply_event(ev)
    sim.advance(t_end)
    return sim.finish()


def apply_event(simulator: TransientSimulator, event: SwitchingEvent) -> TransientSimulator:
    return simulator.apply_event(event)


def potential_decay_consistency(spec: NetworkSpec, trajectory: Trajectory, floor: Optional[float] = None) -> float:
    """
    Largest mismatch between the recorded change of P over an accepted
    step and the integral of the analytic rate -xdot^T Q xdot over the
    step (Gauss-Legendre on the dense output), relative to |dP| + floor.

    Without an explicit `floor`, each segment uses
    decay_slack + decay_floor_scale * (total decay of the segment), so
    steps whose dP sits at the integrator noise level are judged against
    the size of the transient they belong to.
    """
    dyn = NetworkDynamics(spec)
    n_e = spec.n_edges
    worst = 0.0
    for a, b in trajectory.segments():
        p_seg = [s.p_total for s in trajectory.potentials[a:b]]
        if floor is None:
            seg_floor = settings.decay_slack + settings.decay_floor_scale * (max(p_seg) - min(p_seg))
        else:
            seg_floor = floor
        for k in range(a + 1, b):
            dense = trajectory.dense[k]
            if dense is None:
                continue
            t_a, t_b = trajectory.times[k - 1], trajectory.times[k]
            h = t_b - t_a
            if h <= 0:
                continue
            p = trajectory.powers[k]
            nodes = t_a + 0.5 * h * (_GL_NODES + 1.0)
            rates = [dyn.sample(x[:n_e], x[n_e:], p).p_dot for x in dense(nodes).T]
            integral = 0.5 * h * float(np.dot(_GL_WEIGHTS, rates))
            delta = trajectory.potentials[k].p_total - trajectory.potentials[k - 1].p_total
            worst = max(worst, abs(delta - integral) / (abs(delta) + seg_floor))
    return worst


# ==============================================
# Fuzzing
# ==============================================

@dataclass
class RunOutcome:
    """Summary of one fuzz run"""
    event: SwitchingEvent
    p_before: Tuple[float, ...]
    verdict: TrajectoryVerdict
    potential_increase: float
    decay_mismatch: float
    post_switch_excess: float  # P(t+) minus its closed-form upper bound
    reason: Optional[str] = None


@dataclass
class FuzzReport:
    runs: int = 0
    violations: List[RunOutcome] = field(default_factory=list)
    max_potential_increase: float = -math.inf
    max_decay_mismatch: float = 0.0
    verdict_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, outcome: RunOutcome) -> None:
        self.runs += 1
        self.max_potential_increase = max(self.max_potential_increase, outcome.potential_increase)
        self.max_decay_mismatch = max(self.max_decay_mismatch, outcome.decay_mismatch)
        counts = Counter(self.verdict_counts)
        counts[outcome.verdict.value] += 1
        self.verdict_counts = dict(counts)
        if outcome.reason:
            self.violations.append(outcome)

    def merge(self, other: "FuzzReport") -> "FuzzReport":
        self.runs += other.runs
        self.violations.extend(other.violations)
        self.max_potential_increase = max(self.max_potential_increase, other.max_potential_increase)
        self.max_decay_mismatch = max(self.max_decay_mismatch, other.max_decay_mismatch)
        self.verdict_counts = dict(Counter(self.verdict_counts) + Counter(other.verdict_counts))
        return self


def _draw_power(rng: np.random.Generator, cap: float) -> float:
    """Uniform on [0, cap], with the endpoints drawn a quarter of the time"""
    u = rng.random()
    if u < 0.125:
        return 0.0
    if u < 0.25:
        return cap
    return float(rng.uniform(0.0, cap))


def random_events(spec: NetworkSpec, n_events: int, seed: int) -> List[Tuple[np.ndarray, SwitchingEvent]]:
    """
    Admissible (pre-switch loading, single-load event) pairs starting at
    t = 0. Both the pre- and post-switch totals stay within P_max; a
    pre-switch draw above it is scaled back onto the P_max simplex face.
    """
    rng = np.random.default_rng(seed)
    caps = np.array(spec.p_max_loads)
    if spec.p_max <= 0 or not np.any(caps > 0):
        raise DomainError("no load can switch: P_max and every p_k^max must allow some power")
    out = []
    while len(out) < n_events:
        p_vec = np.array([_draw_power(rng, c) for c in caps])
        total = float(np.sum(p_vec))
        if total > spec.p_max:
            p_vec *= spec.p_max / total
            p_vec = np.minimum(p_vec, caps)
            while float(np.sum(p_vec)) > spec.p_max:
                p_vec = np.nextafter(p_vec, 0.0)
        k = int(rng.integers(spec.n_loads))
        others = float(np.sum(p_vec)) - float(p_vec[k])
        headroom = max(0.0, min(float(caps[k]), spec.p_max - others))
        p_after = _draw_power(rng, headroom)
        if p_after == p_vec[k]:
            continue
        load = spec.load_indices[k]
        out.append((p_vec, SwitchingEvent(load=load, p_before=float(p_vec[k]), p_after=p_after, time=0.0)))
    return out


def run_event(
    spec: NetworkSpec,
    p_before: np.ndarray,
    event: SwitchingEvent,
    horizon: float,
    options: Optional[SimulationOptions] = None,
) -> Tuple[RunOutcome, Trajectory]:
    """One switching event from the pre-switch equilibrium"""
    eq = solve_power_flow(spec, p_before)
    start = equilibrium_state(spec, eq, time=event.time)
    opts = options or SimulationOptions(stop_when_converged=True)
    sim = TransientSimulator(spec, p_before, start, opts)
    sim.apply_event(event)
    sim.advance(event.time + horizon)
    traj = sim.finish()

    increase = traj.max_potential_increase()
    mismatch = potential_decay_consistency(spec, traj)
    bound = post_switch_bound(spec, eq, event)
    excess = traj.potentials[traj.segment_starts[-1]].p_total - bound

    reasons = []
    if traj.verdict != TrajectoryVerdict.CONVERGED_TO_SEP:
        reasons.append(f"verdict {traj.verdict.value}")
    if increase > settings.decay_slack:
        reasons.append(f"potential increased by {increase:.3e}")
    if excess > settings.decay_slack:
        reasons.append(f"post-switch potential exceeds its bound by {excess:.3e}")
    outcome = RunOutcome(
        event=event,
        p_before=tuple(float(x) for x in p_before),
        verdict=traj.verdict,
        potential_increase=increase,
        decay_mismatch=mismatch,
        post_switch_excess=excess,
        reason="; ".join(reasons) or None,
    )
    return outcome, traj


def _run_event_summary(args) -> RunOutcome:
    return run_event(*args)[0]


def verify_certificate(
    spec: NetworkSpec,
    n_events: int,
    seed: int,
    *,
    horizon: Optional[float] = None,
    strict: bool = True,
    workers: Optional[int] = None,
    options: Optional[SimulationOptions] = None,
) -> FuzzReport:
    """
    Random admissible single-load switches from equilibrium on a certified
    network. Each run must converge to x_sep with P nonincreasing between
    events. With `strict`, the first counterexample raises
    CertificateViolation; otherwise counterexamples are collected.
    """
    report = certify_network(spec)
    if not report.certified:
        raise DomainError(
            f"network is not certified (verdict {report.verdict.value})",
            {"verdict": report.verdict.value},
        )
    horizon = horizon if horizon is not None else 100.0 * spec.tau_max
    workers = workers or settings.fuzz_workers
    cases = random_events(spec, n_events, seed)
    fuzz = FuzzReport()

    if workers > 1:
        args = [(spec, p_vec, ev, horizon, options) for p_vec, ev in cases]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for outcome in pool.map(_run_event_summary, args):
                fuzz.add(outcome)
                if strict and outcome.reason:
                    raise CertificateViolation(outcome.reason, outcome.event)
    else:
        for p_vec, ev in cases:
            outcome, traj = run_event(spec, p_vec, ev, horizon, options)
            fuzz.add(outcome)
            if strict and outcome.reason:
                raise CertificateViolation(outcome.reason, ev, traj)

    logger.log_with_context(
        logging.INFO if fuzz.passed else logging.WARNING,
        f"Fuzzed {fuzz.runs} events: {len(fuzz.violations)} violation(s)",
        entity_type="fuzz",
        seed=seed,
        verdicts=fuzz.verdict_counts,
    )
    return fuzz


def fuzz_random_networks(
    n_specs: int,
    n_nodes: int,
    n_events: int,
    seed: int,
    *,
    strict: bool = True,
    **network_kwargs,
) -> FuzzReport:
    """`verify_certificate` over `n_specs` random certified networks"""
    rng = np.random.default_rng(seed)
    total = FuzzReport()
    for _ in range(n_specs):
        spec_seed = int(rng.integers(2 ** 31))
        spec = random_network(n_nodes, spec_seed, **network_kwargs)
        total.merge(verify_certificate(spec, n_events, spec_seed, strict=strict))
    return total
