"""
Network file format

Plain-text description of a network with three sections:

    [globals]
    v0 = 1.0
    r_max = 1.0
    ...
    [nodes]
    0 source
    1 load p_nominal=0.05 p_max=0.1 capacitance=0.6
    [edges]
    0 1 resistance=1.0 inductance=0.5

`#` starts a comment. Unknown keys are rejected. Quantities are SI.
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..models.network import Line, NetworkSpec, Node, NodeKind, Violation, ViolationKind, blocking, validate
from ..utils.exceptions import NetworkValidationError, ParseError

SECTIONS = ("globals", "nodes", "edges")
GLOBAL_KEYS = ("v0", "r_max", "tau_max", "p_max", "v_min", "v_tr")

# Global key a network-wide violation is reported against
_GLOBAL_ANCHORS = {
    ViolationKind.VOLTAGE_ORDERING: "v_tr",
    ViolationKind.RESISTANCE_BUDGET_EXCEEDED: "r_max",
    ViolationKind.LOADABILITY_EXCEEDS_P0: "p_max",
    ViolationKind.NOMINAL_LOADING_EXCEEDS_PMAX: "p_max",
}


class GlobalsSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    v0: float
    r_max: float
    tau_max: float
    p_max: float
    v_min: float
    v_tr: float


class NodeSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int = Field(ge=0)
    kind: NodeKind
    p_nominal: float = 0.0
    p_max: float = 0.0
    capacitance: float = 0.0

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind == NodeKind.SOURCE and (self.p_nominal or self.p_max or self.capacitance):
            raise ValueError("source nodes take no load parameters")
        return self

    def to_node(self) -> Node:
        return Node(self.id, self.kind, self.p_nominal, self.p_max, self.capacitance)


class LineSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    from_node: int
    to_node: int
    resistance: float
    inductance: float

    @field_validator("from_node", "to_node")
    @classmethod
    def check_endpoint(cls, v: int) -> int:
        if v < 0:
            raise ValueError("node ids are non-negative")
        return v

    def to_line(self) -> Line:
        return Line(self.from_node, self.to_node, self.resistance, self.inductance)


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    where = ".".join(str(p) for p in err.get("loc", ()))
    if err.get("type") == "missing":
        return f"missing key {where}"
    if err.get("type") == "extra_forbidden":
        return f"unknown key {where}"
    return f"{where}: {err.get('msg')}" if where else str(err.get("msg"))


def _key_values(tokens: List[str], line_no: int, positional: Tuple[str, ...]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key or not value:
            raise ParseError(line_no, f"expected key=value, got {tok!r}")
        if key in positional:
            raise ParseError(line_no, f"{key} is positional, not a key")
        if key in out:
            raise ParseError(line_no, f"key {key} given twice")
        out[key] = value
    return out


def _anchor(
    v: Violation,
    node_lines: Dict[int, int],
    edge_lines: List[int],
    globals_line: Dict[str, int],
    header_line: Dict[str, int],
) -> Optional[int]:
    """File line a violation points at"""
    if v.on_edge and v.element is not None and v.element < len(edge_lines):
        return edge_lines[v.element]
    if not v.on_edge and v.element in node_lines:
        return node_lines[v.element]
    key = _GLOBAL_ANCHORS.get(v.kind)
    return globals_line.get(key) if key else header_line.get("globals")


def loads_network(text: str, *, check: bool = True) -> NetworkSpec:
    """
    Parse a network document. With `check`, blocking assumption
    violations raise NetworkValidationError.
    """
    section: Optional[str] = None
    header_line: Dict[str, int] = {}
    globals_raw: Dict[str, str] = {}
    globals_line: Dict[str, int] = {}
    nodes: Dict[int, Tuple[int, NodeSchema]] = {}
    lines: List[LineSchema] = []
    edge_lines: List[int] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ParseError(line_no, f"malformed section header {body!r}")
            name = body[1:-1].strip().lower()
            if name not in SECTIONS:
                raise ParseError(line_no, f"unknown section [{name}]")
            if name in header_line:
                raise ParseError(line_no, f"section [{name}] repeated")
            section = name
            header_line[name] = line_no
            continue
        if section is None:
            raise ParseError(line_no, "content before the first section header")

        if section == "globals":
            key, sep, value = body.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ParseError(line_no, f"expected key = value, got {body!r}")
            if key not in GLOBAL_KEYS:
                raise ParseError(line_no, f"unknown key {key}")
            if key in globals_raw:
                raise ParseError(line_no, f"key {key} given twice")
            globals_raw[key] = value
            globals_line[key] = line_no

        elif section == "nodes":
            tokens = body.split()
            if len(tokens) < 2:
                raise ParseError(line_no, "node lines read: <id> <kind> [key=value ...]")
            fields = _key_values(tokens[2:], line_no, ("id", "kind"))
            try:
                node = NodeSchema(id=tokens[0], kind=tokens[1], **fields)
            except ValidationError as exc:
                raise ParseError(line_no, _first_error(exc)) from exc
            if node.id in nodes:
                raise ParseError(line_no, f"duplicate node id {node.id} (first declared on line {nodes[node.id][0]})")
            nodes[node.id] = (line_no, node)

        else:
            tokens = body.split()
            if len(tokens) < 2:
                raise ParseError(line_no, "edge lines read: <from> <to> resistance=.. inductance=..")
            fields = _key_values(tokens[2:], line_no, ("from_node", "to_node"))
            try:
                lines.append(LineSchema(from_node=tokens[0], to_node=tokens[1], **fields))
                edge_lines.append(line_no)
            except ValidationError as exc:
                raise ParseError(line_no, _first_error(exc)) from exc

    try:
        glob = GlobalsSchema(**globals_raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = str(err["loc"][0]) if err.get("loc") else ""
        raise ParseError(globals_line.get(key, header_line.get("globals", 0)), _first_error(exc)) from exc

    spec = NetworkSpec(
        nodes=tuple(nodes[k][1].to_node() for k in sorted(nodes)),
        edges=tuple(s.to_line() for s in lines),
        **glob.model_dump(),
    )
    if check:
        hard = blocking(validate(spec))
        if hard:
            node_lines = {node_id: entry[0] for node_id, entry in nodes.items()}
            raise NetworkValidationError(
                hard, [_anchor(v, node_lines, edge_lines, globals_line, header_line) for v in hard]
            )
    return spec


def parse_network(path: Union[str, Path], *, check: bool = True) -> NetworkSpec:
    """Read and parse a network file"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(0, f"cannot read {path}: {exc.strerror or exc}") from exc
    return loads_network(text, check=check)


def dump_network(spec: NetworkSpec) -> str:
    """Serialize so that `loads_network(dump_network(spec)) == spec`"""
    out = ["[globals]"]
    out += [f"{key} = {getattr(spec, key)!r}" for key in GLOBAL_KEYS]
    out.append("")
    out.append("[nodes]")
    for node in spec.nodes:
        if node.is_source:
            out.append(f"{node.id} source")
        else:
            out.append(
                f"{node.id} load p_nominal={node.p_nominal!r} p_max={node.p_max!r} "
                f"capacitance={node.capacitance!r}"
            )
    out.append("")
    out.append("[edges]")
    for line in spec.edges:
        out.append(
            f"{line.from_node} {line.to_node} resistance={line.resistance!r} inductance={line.inductance!r}"
        )
    return "\n".join(out) + "\n"
