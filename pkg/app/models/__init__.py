# Models package
from .network import (
    Line,
    NetworkSpec,
    Node,
    NodeKind,
    Violation,
    ViolationKind,
    blocking,
    incidence_matrix,
    validate,
)
from .state import (
    Classification,
    PotentialSample,
    SwitchingEvent,
    SystemState,
    TrajectoryVerdict,
)
