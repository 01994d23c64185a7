"""
Command-line entry point.

    python -m app <command> [options]

Commands: equilibrium, nose, certify, design-curves, design, simulate,
fuzz, check. CSV goes to stdout or --out; logs go to stderr.

Exit codes: 0 success, 1 negative verdict (uncertifiable, fails,
blocking violations, unstable run), 2 error.
"""

import argparse
import contextlib
import csv
import sys
import uuid
from pathlib import Path
from typing import IO, Iterator, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .config import settings
from .models.network import NetworkSpec, blocking, validate
from .models.state import SwitchingEvent, TrajectoryVerdict
from .schemas.network_file import parse_network
from .services.certify import (
    CertificationReport,
    DesignParameters,
    Verdict,
    c_necessary_bound,
    c_transient_bound,
    c_vtr_bound,
    certify_network,
    design_curves,
    p_crit,
)
from .services.equilibrium import check_feasibility, nose_curve, solve_power_flow
from .services.potential import equilibrium_state
from .services.simulate import Trajectory, fuzz_random_networks, integrate, verify_certificate
from .utils.exceptions import CertifierError, DomainError
from .utils.logging_config import clear_run_context, get_logger, set_run_context, setup_logging

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_ERROR = 2


def fmt(x: float) -> str:
    """Fixed 12 significant digits"""
    return format(float(x), ".12g")


@contextlib.contextmanager
def _output(path: Optional[str]) -> Iterator[IO[str]]:
    if not path:
        yield sys.stdout
        return
    target = Path(path)
    if not target.is_absolute():
        target = settings.output_path / target
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as fh:
        yield fh
    logger.info("Wrote %s", target)


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise DomainError(f"expected comma-separated numbers, got {text!r}") from exc


def parse_event(text: str) -> SwitchingEvent:
    """load:p_before:p_after:t"""
    parts = text.split(":")
    if len(parts) != 4:
        raise DomainError(f"event must read load:p_before:p_after:t, got {text!r}")
    try:
        return SwitchingEvent(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]))
    except ValueError as exc:
        raise DomainError(f"malformed event {text!r}") from exc


def _load_powers(spec: NetworkSpec, text: Optional[str]) -> Optional[np.ndarray]:
    if text is None:
        return None
    p = _floats(text)
    if len(p) != spec.n_loads:
        raise DomainError(f"--p-vector needs {spec.n_loads} values (one per load), got {len(p)}")
    return np.array(p)


# ==============================================
# Commands
# ==============================================

def cmd_equilibrium(args) -> int:
    spec = parse_network(args.network)
    eq = solve_power_flow(spec, _load_powers(spec, args.p_vector))
    with _output(args.out) as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "index", "value"])
        for k, v in enumerate(eq.v_sep):
            writer.writerow(["v", k, fmt(v)])
        for a, i in enumerate(eq.i_sep):
            writer.writerow(["i", a, fmt(i)])
    logger.info("Equilibrium %s after %d iterations", eq.classification.value, eq.iterations)
    return EXIT_OK


def cmd_nose(args) -> int:
    curve = nose_curve(args.r, args.v0, args.n)
    with _output(args.out) as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "v_high", "v_low"])
        for s in curve.samples:
            writer.writerow([fmt(s.p), fmt(s.v_high), fmt(s.v_low)])
    return EXIT_OK


def render_report(report: CertificationReport) -> str:
    lines = [
        f"verdict: {report.verdict.value}",
        f"p_crit: {fmt(report.p_crit)} ({fmt(report.p_crit / report.p0)} P0)",
        f"P_max feasible: {report.feasibility.feasible} "
        f"(P_max {fmt(report.feasibility.p_max)}, allowed {fmt(report.feasibility.p_max_allowed)})",
    ]
    for v in report.violations:
        lines.append(f"note: {v}")
    lines.append("load,p_max,c_vtr,c_transient,c_necessary,c_sufficient,installed,verdict,p_sigma_minus,p_sigma_plus")
    for c in report.loads:
        lines.append(",".join([
            str(c.load), fmt(c.p_max), fmt(c.c_vtr), fmt(c.c_transient), fmt(c.c_necessary),
            fmt(c.c_sufficient), fmt(c.installed), c.verdict.value,
            fmt(c.binding_scenario[0]), fmt(c.binding_scenario[1]),
        ]))
    return "\n".join(lines) + "\n"


def cmd_certify(args) -> int:
    report = certify_network(parse_network(args.network))
    with _output(args.out) as fh:
        fh.write(render_report(report))
    return EXIT_OK if report.verdict == Verdict.CERTIFIED else EXIT_VERDICT


def _design_params(args) -> DesignParameters:
    if args.network:
        return DesignParameters.from_spec(parse_network(args.network))
    v_min = args.vmin if args.vmin is not None else max(0.8 * args.v0, args.vtr)
    return DesignParameters(
        v0=args.v0, r_max=args.r_max, tau_max=args.tau_max,
        p_max=args.p_max or 0.0, v_min=v_min, v_tr=args.vtr,
    )


def cmd_design_curves(args) -> int:
    params = _design_params(args)
    curves = design_curves(params, args.n, p_max=args.p_max, overshoot=args.overshoot)
    with _output(args.out) as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "delta_p_over_p0", "c_vtr_over_c0", "c_transient_over_c0",
            "c_necessary_over_c0", "c_sufficient_over_c0",
        ])
        for s in curves.samples:
            writer.writerow([
                fmt(s.delta_p_over_p0), fmt(s.c_vtr_over_c0), fmt(s.c_transient_over_c0),
                fmt(s.c_necessary_over_c0), fmt(s.c_sufficient_over_c0),
            ])
    logger.info("p_crit = %.6g P0", curves.p_crit / curves.p0)
    return EXIT_OK


def cmd_design(args) -> int:
    """Capacitor sizing for given load limits"""
    params = DesignParameters(
        v0=args.v0, r_max=args.r_max, tau_max=args.tau_max,
        p_max=args.p_max, v_min=args.vmin, v_tr=args.vtr,
    )
    margin = args.margin if args.margin is not None else settings.certify_margin
    pc = p_crit(params)
    feasible = check_feasibility(params)
    ok = feasible.feasible
    with _output(args.out) as fh:
        fh.write(f"# p_crit={fmt(pc)} p0={fmt(params.p0)} c0={fmt(params.c0)}\n")
        fh.write(
            f"# p_max={fmt(params.p_max)} allowed={fmt(feasible.p_max_allowed)} feasible={feasible.feasible}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["load", "p_max", "c_vtr", "c_transient", "c_necessary", "recommended"])
        for k, p_k in enumerate(_floats(args.loads)):
            c_vtr = c_vtr_bound(p_k, params.tau_max, params.v_tr)
            bound = c_transient_bound(p_k, params)
            c_nec = c_necessary_bound(p_k, params.tau_max, params.v_min)
            recommended = margin * max(c_vtr, bound.value)
            ok = ok and bound.certifiable
            writer.writerow([k, fmt(p_k), fmt(c_vtr), fmt(bound.value), fmt(c_nec), fmt(recommended)])
    return EXIT_OK if ok else EXIT_VERDICT


def trajectory_rows(spec: NetworkSpec, traj: Trajectory) -> Iterator[List[str]]:
    yield (
        ["time"]
        + [f"v_{k}" for k in spec.load_indices]
        + [f"i_{a}" for a in range(spec.n_edges)]
        + ["G", "P", "Pdot", "event"]
    )
    marks = {}
    for start, ev in zip(traj.segment_starts[1:], traj.events):
        marks[start] = f"{ev.load}:{fmt(ev.p_before)}:{fmt(ev.p_after)}"
    for k, (state, pot) in enumerate(zip(traj.states, traj.potentials)):
        yield (
            [fmt(state.time)]
            + [fmt(v) for v in state.v_loads]
            + [fmt(i) for i in state.i_lines]
            + [fmt(pot.g), fmt(pot.p_total), fmt(pot.p_dot), marks.get(k, "")]
        )


def cmd_simulate(args) -> int:
    spec = parse_network(args.network)
    p = _load_powers(spec, args.p_vector)
    events = [parse_event(e) for e in args.event or []]
    eq = solve_power_flow(spec, p)
    start = equilibrium_state(spec, eq)
    traj = integrate(spec, start, eq.p, args.t_end, events=events)
    with _output(args.out) as fh:
        csv.writer(fh).writerows(trajectory_rows(spec, traj))
    unstable = traj.verdict in (TrajectoryVerdict.LEFT_TRANSIENT_DOMAIN, TrajectoryVerdict.DIVERGED)
    return EXIT_VERDICT if unstable else EXIT_OK


def cmd_fuzz(args) -> int:
    if args.network:
        report = verify_certificate(parse_network(args.network), args.events, args.seed, strict=False)
    else:
        report = fuzz_random_networks(args.random_specs, args.nodes, args.events, args.seed, strict=False)
    with _output(args.out) as fh:
        fh.write(f"# runs={report.runs} violations={len(report.violations)}\n")
        fh.write(f"# max_potential_increase={fmt(report.max_potential_increase)}\n")
        fh.write(f"# max_decay_mismatch={fmt(report.max_decay_mismatch)}\n")
        for verdict, count in sorted(report.verdict_counts.items()):
            fh.write(f"# {verdict}={count}\n")
        writer = csv.writer(fh)
        writer.writerow(["load", "p_before", "p_after", "verdict", "potential_increase", "reason"])
        for v in report.violations:
            writer.writerow([
                v.event.load, fmt(v.event.p_before), fmt(v.event.p_after),
                v.verdict.value, fmt(v.potential_increase), v.reason,
            ])
    return EXIT_OK if report.passed else EXIT_VERDICT


def cmd_check(args) -> int:
    spec = parse_network(args.network, check=False)
    violations = validate(spec)
    with _output(args.out) as fh:
        for v in violations:
            fh.write(f"{v}\n")
        if not violations:
            fh.write("ok\n")
    return EXIT_VERDICT if blocking(violations) else EXIT_OK


# ==============================================
# Parser
# ==============================================

def _add_design_globals(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--v0", type=float, default=None if required else 1.0, required=required)
    p.add_argument("--r-max", type=float, default=None if required else 1.0, required=required)
    p.add_argument("--tau-max", type=float, default=None if required else 1.0, required=required)
    p.add_argument("--vtr", type=float, default=None if required else 0.66, required=required)
    p.add_argument("--vmin", type=float, default=None, required=required)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dc-certify",
        description="Transient stability certificates for DC microgrids with constant-power loads",
    )
    parser.add_argument("--log-level", default=settings.log_level)
    parser.add_argument("--json-logs", action="store_true", default=settings.log_json_format)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str, network: Optional[str] = "required"):
        p = sub.add_parser(name, help=help_text)
        if network == "required":
            p.add_argument("network")
        elif network == "optional":
            p.add_argument("network", nargs="?")
        p.add_argument("--out", default=None, help="output file (relative to DCCERT_OUTPUT_DIR)")
        p.set_defaults(handler=handler)
        return p

    p = command("equilibrium", cmd_equilibrium, "solve the power flow")
    p.add_argument("--p-vector")

    p = command("nose", cmd_nose, "two-bus nose curve", network=None)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--v0", type=float, default=1.0)
    p.add_argument("--n", type=int, default=101)

    command("certify", cmd_certify, "certify installed capacitors")

    p = command("design-curves", cmd_design_curves, "normalized bounds versus switching magnitude", network="optional")
    _add_design_globals(p, required=False)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--p-max", type=float, default=None)
    p.add_argument("--overshoot", type=float, default=None, help="sweep past p_crit, in units of P0")

    p = command("design", cmd_design, "size capacitors for given load limits", network=None)
    _add_design_globals(p, required=True)
    p.add_argument("--p-max", type=float, required=True)
    p.add_argument("--loads", required=True, help="comma-separated p_k^max")
    p.add_argument("--margin", type=float, default=None)

    p = command("simulate", cmd_simulate, "simulate switching events from equilibrium")
    p.add_argument("--p-vector")
    p.add_argument("--event", action="append", help="load:p_before:p_after:t")
    p.add_argument("--t-end", type=float, required=True)

    p = command("fuzz", cmd_fuzz, "randomized switching on certified networks", network="optional")
    p.add_argument("--events", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-specs", type=int, default=10)
    p.add_argument("--nodes", type=int, default=6)

    command("check", cmd_check, "validate a network file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.json_logs)
    set_run_context(uuid.uuid4().hex[:8])
    try:
        return args.handler(args)
    except CertifierError as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValidationError as exc:
        print(f"error: invalid settings or input: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        clear_run_context()


if __name__ == "__main__":
    sys.exit(main())
