"""
Certifier Exceptions

Structured errors raised by the numerical services. Each error carries a
machine-readable code and a details dict so the CLI can render it with
context and pick the exit code.

Violations found by `validate` and Uncertifiable bounds are data, not
exceptions, and never pass through here.
"""

import enum
from typing import Any, Dict, List, Optional


class ErrorCode(str, enum.Enum):
    """Error classification used by the CLI renderer"""
    DOMAIN = "domain_error"
    INFEASIBLE_POWER = "infeasible_power"
    NON_CONVERGENCE = "non_convergence"
    NOT_AT_EQUILIBRIUM = "not_at_equilibrium"
    STEP_SIZE_UNDERFLOW = "step_size_underflow"
    CERTIFICATE_VIOLATION = "certificate_violation"
    PARSE = "parse_error"
    VALIDATION = "validation_error"


class CertifierError(Exception):
    """Base class for all certifier errors"""

    code: ErrorCode = ErrorCode.DOMAIN

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        return f"[{self.code.value}] {self.message}"


class DomainError(CertifierError):
    """Argument outside the mathematical domain of an operation"""
    code = ErrorCode.DOMAIN


class InfeasiblePower(CertifierError):
    """Requested loading exceeds the apex of the nose curve"""
    code = ErrorCode.INFEASIBLE_POWER

    def __init__(self, p: float, p0: float, message: Optional[str] = None):
        super().__init__(
            message or f"power {p:.6g} exceeds maximum loadability P0 = {p0:.6g}",
            {"p": p, "p0": p0},
        )
        self.p = p
        self.p0 = p0


class NonConvergence(CertifierError):
    """Newton iteration did not reach the residual tolerance"""
    code = ErrorCode.NON_CONVERGENCE

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"power flow did not converge after {iterations} iterations "
            f"(residual {residual:.3e})",
            {"iterations": iterations, "residual": residual},
        )
        self.iterations = iterations
        self.residual = residual


class NotAtEquilibrium(CertifierError):
    """An equilibrium-only identity was evaluated away from equilibrium"""
    code = ErrorCode.NOT_AT_EQUILIBRIUM

    def __init__(self, residual: float, tolerance: float):
        super().__init__(
            f"power flow residual {residual:.3e} exceeds tolerance {tolerance:.3e}",
            {"residual": residual, "tolerance": tolerance},
        )
        self.residual = residual


class StepSizeUnderflow(CertifierError):
    """The adaptive integrator could not satisfy its tolerances"""
    code = ErrorCode.STEP_SIZE_UNDERFLOW

    def __init__(self, time: float, message: str = ""):
        super().__init__(
            f"integrator step size underflow at t = {time:.6g}s {message}".strip(),
            {"time": time},
        )
        self.time = time


class CertificateViolation(CertifierError):
    """A certified network produced a trajectory contradicting its certificate"""
    code = ErrorCode.CERTIFICATE_VIOLATION

    def __init__(self, reason: str, event: Any = None, trajectory: Any = None):
        super().__init__(f"certificate violated: {reason}", {"event": repr(event)})
        self.reason = reason
        self.event = event
        self.trajectory = trajectory


class ParseError(CertifierError):
    """Malformed network file"""
    code = ErrorCode.PARSE

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}", {"line": line})
        self.line = line


class NetworkValidationError(CertifierError):
    """Network violates one or more modelling assumptions"""
    code = ErrorCode.VALIDATION

    def __init__(self, violations: List[Any], lines: Optional[List[Optional[int]]] = None):
        lines = list(lines) if lines is not None else [None] * len(violations)
        entries = [
            f"line {line}: {v}" if line is not None else str(v)
            for v, line in zip(violations, lines)
        ]
        super().__init__(
            f"{len(violations)} assumption violation(s): {'; '.join(entries)}",
            {"violations": [str(v) for v in violations], "lines": lines},
        )
        self.violations = violations
        self.lines = lines
