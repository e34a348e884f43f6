"""Function block network model and its XML interchange subset.

Two document kinds are understood:

* ``FBType`` documents (``.fbt.xml``) declaring one block interface.
* ``Application`` documents (``.app.xml``) holding an ``FBNetwork`` of
  instances plus event and data connections in ``INSTANCE.PORT`` form.

Everything else in the full standard (adapters, resources, ECC XML) is
rejected rather than ignored.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from xml.parsers import expat
from xml.sax.saxutils import quoteattr


class DataType(enum.Enum):
    REAL = "REAL"
    INT = "INT"
    BOOL = "BOOL"
    STRING = "STRING"

    def default(self):
        return {"REAL": 0.0, "INT": 0, "BOOL": False, "STRING": ""}[self.value]

    def accepts(self, value) -> bool:
        if self is DataType.BOOL:
            return isinstance(value, bool)
        if isinstance(value, bool):
            return False
        if self is DataType.REAL:
            return isinstance(value, (int, float))
        if self is DataType.INT:
            return isinstance(value, int)
        return isinstance(value, str)

    def coerce(self, value):
        """Return ``value`` in canonical Python form, or raise ``TypeError``."""
        if not self.accepts(value):
            raise TypeError(f"{value!r} is not a {self.value}")
        return float(value) if self is DataType.REAL else value


def parse_literal(dtype: DataType, text: str):
    """Convert an XML literal to a Python value of ``dtype``."""
    if dtype is DataType.REAL:
        return float(text)
    if dtype is DataType.INT:
        return int(text)
    if dtype is DataType.BOOL:
        lowered = text.strip().lower()
        if lowered in ("true", "1"):
            return True
        if lowered in ("false", "0"):
            return False
        raise ValueError(f"bad BOOL literal {text!r}")
    return text


class PortKind(enum.Enum):
    EVENT_INPUT = "EventInput"
    EVENT_OUTPUT = "EventOutput"
    DATA_INPUT = "DataInput"
    DATA_OUTPUT = "DataOutput"

    @property
    def is_event(self) -> bool:
        return self in (PortKind.EVENT_INPUT, PortKind.EVENT_OUTPUT)

    @property
    def is_output(self) -> bool:
        return self in (PortKind.EVENT_OUTPUT, PortKind.DATA_OUTPUT)


class ConnectionKind(enum.Enum):
    EVENT = "Event"
    DATA = "Data"


@dataclass(frozen=True)
class PortRef:
    instance: str
    port: str
    kind: PortKind

    def __str__(self) -> str:
        return f"{self.instance}.{self.port}"


@dataclass(frozen=True)
class FbType:
    name: str
    behavior_key: str
    event_inputs: tuple[str, ...] = ()
    event_outputs: tuple[str, ...] = ()
    data_inputs: tuple[tuple[str, DataType], ...] = ()
    data_outputs: tuple[tuple[str, DataType], ...] = ()
    source_period_ms: int | None = None

    def port_kind(self, port: str) -> PortKind | None:
        if port in self.event_inputs:
            return PortKind.EVENT_INPUT
        if port in self.event_outputs:
            return PortKind.EVENT_OUTPUT
        if any(name == port for name, _ in self.data_inputs):
            return PortKind.DATA_INPUT
        if any(name == port for name, _ in self.data_outputs):
            return PortKind.DATA_OUTPUT
        return None

    def data_type(self, port: str) -> DataType | None:
        for name, dtype in self.data_inputs + self.data_outputs:
            if name == port:
                return dtype
        return None

    @property
    def is_source(self) -> bool:
        return self.source_period_ms is not None


@dataclass(frozen=True)
class FbInstance:
    name: str
    type_name: str
    # literal text as written in the document; typed on use
    parameters: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Connection:
    source: PortRef
    destination: PortRef
    kind: ConnectionKind

    def __str__(self) -> str:
        return f"{self.source}->{self.destination}"


@dataclass(frozen=True)
class Application:
    name: str
    instances: tuple[FbInstance, ...]
    connections: tuple[Connection, ...]
    type_library: dict[str, FbType]

    def instance(self, name: str) -> FbInstance:
        for inst in self.instances:
            if inst.name == name:
                return inst
        raise KeyError(name)

    def type_of(self, instance_name: str) -> FbType:
        return self.type_library[self.instance(instance_name).type_name]

    def resolve(self, text: str, kind: PortKind) -> PortRef:
        instance, _, port = text.partition(".")
        return PortRef(instance, port, kind)


# -- errors -----------------------------------------------------------------


class ParseError(Exception):
    def __init__(self, message: str, line: int | None = None, element: str | None = None):
        self.message = message
        self.line = line
        self.element = element
        where = []
        if line is not None:
            where.append(f"line {line}")
        if element:
            where.append(f"<{element}>")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass(frozen=True)
class Issue:
    """One violated application invariant."""

    instance: str
    port: str
    detail: str = ""

    def __str__(self) -> str:
        target = f"{self.instance}.{self.port}" if self.port else self.instance
        return f"{type(self).__name__}: {target}" + (f" ({self.detail})" if self.detail else "")


class DanglingReference(Issue):
    pass


class KindMismatch(Issue):
    pass


class TypeMismatch(Issue):
    pass


class MultipleDrivers(Issue):
    pass


class UnknownParameter(Issue):
    pass


class BadParameterValue(Issue):
    pass


class UnknownType(Issue):
    pass


class DuplicateInstance(Issue):
    pass


class DuplicateConnection(Issue):
    pass


class ValidationError(Exception):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


# -- XML reading --------------------------------------------------------------


@dataclass
class _Node:
    tag: str
    attrib: dict[str, str]
    line: int
    children: list[_Node] = field(default_factory=list)


def _read_xml(text: str) -> _Node:
    parser = expat.ParserCreate()
    stack: list[_Node] = []
    roots: list[_Node] = []

    def start(tag, attrs):
        node = _Node(tag, dict(attrs), parser.CurrentLineNumber)
        (stack[-1].children if stack else roots).append(node)
        stack.append(node)

    def end(tag):
        stack.pop()

    def chars(data):
        if data.strip():
            raise ParseError(f"unexpected text {data.strip()!r}", parser.CurrentLineNumber,
                             stack[-1].tag if stack else None)

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(text, True)
    except expat.ExpatError as exc:
        raise ParseError(expat.ErrorString(exc.code), exc.lineno) from None
    return roots[0]


def _check(node: _Node, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> None:
    for name in node.attrib:
        if name not in required and name not in optional:
            raise ParseError(f"unknown attribute {name!r}", node.line, node.tag)
    for name in required:
        if not node.attrib.get(name):
            raise ParseError(f"missing attribute {name!r}", node.line, node.tag)


def _only_children(node: _Node, allowed: tuple[str, ...]) -> None:
    for child in node.children:
        if child.tag not in allowed:
            raise ParseError(f"unknown element {child.tag!r}", child.line, child.tag)


# -- FBType -------------------------------------------------------------------


def parse_fb_type(xml_text: str) -> FbType:
    root = _read_xml(xml_text)
    if root.tag != "FBType":
        raise ParseError(f"expected <FBType>, got <{root.tag}>", root.line, root.tag)
    _check(root, ("Name", "Behavior"), ("SourcePeriod", "Comment"))
    _only_children(root, ("InterfaceList",))
    sections: dict[str, list] = {
        "EventInputs": [], "EventOutputs": [], "InputVars": [], "OutputVars": [],
    }
    seen: set[str] = set()
    for iface in root.children:
        _check(iface, ())
        _only_children(iface, tuple(sections))
        for section in iface.children:
            _check(section, ())
            is_event = section.tag.startswith("Event")
            _only_children(section, ("Event",) if is_event else ("VarDeclaration",))
            for decl in section.children:
                if is_event:
                    _check(decl, ("Name",), ("Comment",))
                    entry = decl.attrib["Name"]
                else:
                    _check(decl, ("Name", "Type"), ("Comment",))
                    try:
                        dtype = DataType(decl.attrib["Type"])
                    except ValueError:
                        raise ParseError(f"bad data type {decl.attrib['Type']!r}",
                                         decl.line, decl.tag) from None
                    entry = (decl.attrib["Name"], dtype)
                name = decl.attrib["Name"]
                if name in seen:
                    raise ParseError(f"duplicate port {name!r}", decl.line, decl.tag)
                seen.add(name)
                sections[section.tag].append(entry)

    period = None
    if "SourcePeriod" in root.attrib:
        try:
            period = int(root.attrib["SourcePeriod"])
        except ValueError:
            period = 0
        if period <= 0:
            raise ParseError("SourcePeriod must be a positive integer", root.line, root.tag)
        if sections["EventInputs"]:
            raise ParseError("SourcePeriod is only allowed on blocks without event inputs",
                             root.line, root.tag)
    return FbType(
        name=root.attrib["Name"],
        behavior_key=root.attrib["Behavior"],
        event_inputs=tuple(sections["EventInputs"]),
        event_outputs=tuple(sections["EventOutputs"]),
        data_inputs=tuple(sections["InputVars"]),
        data_outputs=tuple(sections["OutputVars"]),
        source_period_ms=period,
    )


def serialize_fb_type(fbt: FbType) -> str:
    period = f" SourcePeriod=\"{fbt.source_period_ms}\"" if fbt.source_period_ms else ""
    lines = [f"<FBType Name={quoteattr(fbt.name)} Behavior={quoteattr(fbt.behavior_key)}{period}>",
             "  <InterfaceList>"]
    for tag, names in (("EventInputs", fbt.event_inputs), ("EventOutputs", fbt.event_outputs)):
        if names:
            lines.append(f"    <{tag}>")
            lines += [f"      <Event Name={quoteattr(n)}/>" for n in names]
            lines.append(f"    </{tag}>")
    for tag, decls in (("InputVars", fbt.data_inputs), ("OutputVars", fbt.data_outputs)):
        if decls:
            lines.append(f"    <{tag}>")
            lines += [f"      <VarDeclaration Name={quoteattr(n)} Type=\"{t.value}\"/>"
                      for n, t in decls]
            lines.append(f"    </{tag}>")
    lines += ["  </InterfaceList>", "</FBType>", ""]
    return "\n".join(lines)


# -- Application --------------------------------------------------------------


def _port_text(node: _Node, attr: str) -> tuple[str, str]:
    text = node.attrib[attr]
    instance, dot, port = text.partition(".")
    if not dot or not instance or not port:
        raise ParseError(f"{attr} must be INSTANCE.PORT, got {text!r}", node.line, node.tag)
    return instance, port


def parse_application(xml_text: str, type_library: dict[str, FbType]) -> Application:
    """Parse and validate; raises ``ValidationError`` carrying every issue found."""
    root = _read_xml(xml_text)
    if root.tag != "Application":
        raise ParseError(f"expected <Application>, got <{root.tag}>", root.line, root.tag)
    _check(root, ("Name",), ("Comment",))
    _only_children(root, ("FBNetwork",))
    if len(root.children) != 1:
        raise ParseError("exactly one <FBNetwork> required", root.line, root.tag)
    network = root.children[0]
    _check(network, ())
    _only_children(network, ("FB", "EventConnections", "DataConnections"))

    instances = []
    connections = []
    for child in network.children:
        if child.tag == "FB":
            _check(child, ("Name", "Type"), ("Comment",))
            _only_children(child, ("Parameter",))
            params = {}
            for p in child.children:
                _check(p, ("Name",), ("Value",))
                params[p.attrib["Name"]] = p.attrib.get("Value", "")
            instances.append(FbInstance(child.attrib["Name"], child.attrib["Type"], params))
            continue
        _check(child, ())
        _only_children(child, ("Connection",))
        if child.tag == "EventConnections":
            kind, src_kind, dst_kind = ConnectionKind.EVENT, PortKind.EVENT_OUTPUT, PortKind.EVENT_INPUT
        else:
            kind, src_kind, dst_kind = ConnectionKind.DATA, PortKind.DATA_OUTPUT, PortKind.DATA_INPUT
        for conn in child.children:
            _check(conn, ("Source", "Destination"), ("Comment",))
            connections.append(Connection(PortRef(*_port_text(conn, "Source"), src_kind),
                                          PortRef(*_port_text(conn, "Destination"), dst_kind),
                                          kind))

    app = Application(root.attrib["Name"], tuple(instances), tuple(connections),
                      dict(type_library))
    issues = validate(app)
    if issues:
        raise ValidationError(issues)
    return app


def serialize_application(app: Application) -> str:
    lines = [f"<Application Name={quoteattr(app.name)}>", "  <FBNetwork>"]
    for inst in app.instances:
        head = f"    <FB Name={quoteattr(inst.name)} Type={quoteattr(inst.type_name)}"
        if not inst.parameters:
            lines.append(head + "/>")
            continue
        lines.append(head + ">")
        lines += [f"      <Parameter Name={quoteattr(k)} Value={quoteattr(v)}/>"
                  for k, v in inst.parameters.items()]
        lines.append("    </FB>")
    for tag, kind in (("EventConnections", ConnectionKind.EVENT), ("DataConnections", ConnectionKind.DATA)):
        conns = [c for c in app.connections if c.kind is kind]
        if conns:
            lines.append(f"    <{tag}>")
            lines += [f"      <Connection Source=\"{c.source}\" Destination=\"{c.destination}\"/>"
                      for c in conns]
            lines.append(f"    </{tag}>")
    lines += ["  </FBNetwork>", "</Application>", ""]
    return "\n".join(lines)


def validate(app: Application) -> list[Issue]:
    """All invariant violations, ordered by instance name then port name."""
    issues: list[Issue] = []
    types: dict[str, FbType] = {}
    seen: set[str] = set()
    for inst in app.instances:
        if inst.name in seen:
            issues.append(DuplicateInstance(inst.name, ""))
            continue
        seen.add(inst.name)
        fbt = app.type_library.get(inst.type_name)
        if fbt is None:
            issues.append(UnknownType(inst.name, "", inst.type_name))
            continue
        types[inst.name] = fbt
        for pname, literal in inst.parameters.items():
            if fbt.port_kind(pname) is not PortKind.DATA_INPUT:
                issues.append(UnknownParameter(inst.name, pname))
                continue
            try:
                parse_literal(fbt.data_type(pname), literal)
            except ValueError:
                issues.append(BadParameterValue(inst.name, pname, repr(literal)))

    def check_end(ref: PortRef) -> DataType | None | bool:
        if ref.instance not in seen:
            issues.append(DanglingReference(ref.instance, ref.port, "no such instance"))
            return False
        fbt = types.get(ref.instance)
        if fbt is None:
            return False  # already reported as UnknownType
        actual = fbt.port_kind(ref.port)
        if actual is None:
            issues.append(DanglingReference(ref.instance, ref.port, "no such port"))
            return False
        if actual is not ref.kind:
            issues.append(KindMismatch(ref.instance, ref.port,
                                       f"expected {ref.kind.value}, is {actual.value}"))
            return False
        return fbt.data_type(ref.port)

    drivers: dict[tuple[str, str], int] = {}
    unique: set[Connection] = set()
    for conn in app.connections:
        if conn in unique:
            issues.append(DuplicateConnection(conn.destination.instance, conn.destination.port,
                                              str(conn)))
        unique.add(conn)
        src = check_end(conn.source)
        dst = check_end(conn.destination)
        if conn.kind is ConnectionKind.DATA:
            key = (conn.destination.instance, conn.destination.port)
            drivers[key] = drivers.get(key, 0) + 1
            if src and dst and src is not dst:
                issues.append(TypeMismatch(conn.destination.instance, conn.destination.port,
                                           f"{conn.source} is {src.value}, input is {dst.value}"))
    for (inst, port), count in drivers.items():
        if count > 1:
            issues.append(MultipleDrivers(inst, port, f"{count} incoming connections"))

    return sorted(issues, key=lambda i: (i.instance, i.port, type(i).__name__, i.detail))
