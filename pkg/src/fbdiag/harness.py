"""Diagnostic Points and diagnostic packages.

A Diagnostic Point (DP) is spliced into one data connection together with
its paired event connection, or into a bare event connection. It records
every crossing, can block propagation (gate closed) and can inject test
values downstream whatever the gate state.

The DP sits on the connection itself and acts synchronously when the
event crosses, so an open DP adds no extra step to the event queue and the
application-level trace is unchanged by instrumentation.
"""

from __future__ import annotations

import enum
import queue
from dataclasses import dataclass, field
from xml.sax.saxutils import quoteattr

from .fbnetwork import (
    Application,
    Connection,
    ConnectionKind,
    DataType,
    Issue,
    ParseError,
    PortKind,
    ValidationError,
    _check,
    _only_children,
    _read_xml,
)
from .runtime import Probe, Runtime, TimeInPastError, TraceEvent, TypeMismatchError, format_value

DEFAULT_TOLERANCE = 1e-9
DEFAULT_WINDOW_MS = 1000


class HarnessError(Exception):
    pass


class AlreadyInstrumented(HarnessError):
    pass


class UnknownConnection(HarnessError):
    pass


class Gate(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


class DiagnosticPoint(Probe):
    def __init__(self, rt: Runtime, dp_id: int, event_conn: Connection | None,
                 data_conn: Connection | None):
        self.runtime = rt
        self.id = dp_id
        self.event_conn = event_conn
        self.data_conn = data_conn
        self.gate = Gate.OPEN
        self.capture_log: list[TraceEvent] = []
        self.channel: queue.SimpleQueue[TraceEvent] = queue.SimpleQueue()
        self.held = rt.upstream_value(data_conn) if data_conn else None
        self.data_type: DataType | None = (
            rt.type_of(data_conn.source.instance).data_type(data_conn.source.port)
            if data_conn else None)

    def __repr__(self) -> str:
        return f"DP{self.id}({self.location}, {self.gate.value})"

    @property
    def location(self) -> str:
        return " + ".join(str(c) for c in (self.data_conn, self.event_conn) if c)

    @property
    def connections(self) -> tuple[Connection, ...]:
        return tuple(c for c in (self.event_conn, self.data_conn) if c)

    @property
    def upstream(self) -> str:
        return self.connections[0].source.instance

    @property
    def downstream(self) -> str:
        return self.connections[0].destination.instance

    def _capture(self, entry: TraceEvent) -> None:
        self.capture_log.append(entry)
        self.channel.put(entry)

    def _entry(self, time: int, value, injected: bool = False) -> TraceEvent:
        if self.data_conn is not None:
            return TraceEvent(time, self.data_conn.source, value, injected)
        return TraceEvent(time, self.event_conn.source, None, injected)

    # runtime hooks

    def on_event(self, conn: Connection, time: int) -> bool:
        upstream = self.runtime.upstream_value(self.data_conn) if self.data_conn else None
        self._capture(self._entry(time, upstream))
        if self.gate is Gate.CLOSED:
            return False
        if self.data_conn is not None:
            self.held = upstream
        return True

    def pull(self, conn: Connection, time: int, upstream, paired: bool):
        if paired:
            return self.held
        if self.gate is Gate.CLOSED:
            return self.held
        if self.event_conn is None:
            # data-only DP: every pull is a crossing
            self._capture(self._entry(time, upstream))
        self.held = upstream
        return upstream


def rewire(rt: Runtime, conn: Connection, dp_id: int,
           event_conn: Connection | None = None) -> DiagnosticPoint:
    """Splice DP ``dp_id`` into ``conn`` (plus ``event_conn`` when paired)."""
    if conn.kind is ConnectionKind.EVENT:
        if event_conn is not None:
            raise HarnessError("an event connection cannot carry a paired event connection")
        data_conn, event_conn = None, conn
    else:
        data_conn = conn
    for c in (data_conn, event_conn):
        if c is None:
            continue
        if c not in rt.app.connections:
            raise UnknownConnection(str(c))
        if c in rt.probes:
            raise AlreadyInstrumented(str(c))
    if event_conn is not None and data_conn is not None:
        if event_conn.kind is not ConnectionKind.EVENT:
            raise HarnessError(f"{event_conn} is not an event connection")
        if event_conn.destination.instance != data_conn.destination.instance:
            raise HarnessError("paired connections must end at the same instance")
    dp = DiagnosticPoint(rt, dp_id, event_conn, data_conn)
    for c in dp.connections:
        rt.probes[c] = dp
    return dp


def gate_close(dp: DiagnosticPoint) -> None:
    dp.gate = Gate.CLOSED


def gate_open(dp: DiagnosticPoint) -> None:
    dp.gate = Gate.OPEN


def trigger(dp: DiagnosticPoint, value=None, fire_event: bool = True, at: int | None = None) -> None:
    """Inject ``value`` (and the paired event) downstream of ``dp`` at ``at``."""
    rt = dp.runtime
    at = rt.now if at is None else at
    if at < rt.now:
        raise TimeInPastError(f"{at} < {rt.now}")
    if dp.data_conn is None:
        if value is not None:
            raise TypeMismatchError(f"DP{dp.id} carries no data")
    elif value is not None:
        try:
            value = dp.data_type.coerce(value)
        except TypeError as exc:
            raise TypeMismatchError(f"DP{dp.id}: {exc}") from None

    def act(time: int) -> None:
        if value is not None:
            dp.held = value
        dp._capture(dp._entry(time, value, injected=True))
        if fire_event and dp.event_conn is not None:
            rt.deliver(dp.event_conn, time)

    rt.schedule(at, act)


def read(dp: DiagnosticPoint) -> list[TraceEvent]:
    """Drain the entries captured since the previous read."""
    out = []
    while True:
        try:
            out.append(dp.channel.get_nowait())
        except queue.Empty:
            return out


def format_captures(entries) -> str:
    return "".join(f"{e.time}\t{e.port}\t{format_value(e.payload)}\t{'I' if e.injected else '-'}\n"
                   for e in entries)


# -- diagnostic packages --------------------------------------------------------


@dataclass(frozen=True)
class ValueExpectation:
    expected: str
    tolerance: float = DEFAULT_TOLERANCE
    window_ms: int = DEFAULT_WINDOW_MS


@dataclass(frozen=True)
class EventExpectation:
    port: str
    window_ms: int = DEFAULT_WINDOW_MS


@dataclass(frozen=True)
class NoOutputExpectation:
    window_ms: int = DEFAULT_WINDOW_MS


Expectation = ValueExpectation | EventExpectation | NoOutputExpectation


@dataclass(frozen=True)
class TestCase:
    __test__ = False

    name: str
    inject_at: int | None  # None: observe only, nothing injected
    inject_value: str | None
    fire_event: bool
    expect_at: int
    expectation: Expectation


@dataclass(frozen=True)
class PlannedDP:
    """``port`` is on the package's own block; ``event`` pairs an event port on the same side."""

    dp_id: int
    port: str
    event: str | None = None


@dataclass(frozen=True)
class DiagnosticPackage:
    fb_type_name: str
    dp_plan: tuple[PlannedDP, ...]
    tests: tuple[TestCase, ...] = field(default_factory=tuple)


class UndeclaredDP(Issue):
    pass


class EmptyPackage(Issue):
    pass


class UntestedDP(Issue):
    pass


class BadTest(Issue):
    pass


def _int_attr(node, name: str) -> int:
    try:
        return int(node.attrib[name])
    except ValueError:
        raise ParseError(f"{name} must be an integer", node.line, node.tag) from None


def load_package(file_text: str) -> DiagnosticPackage:
    root = _read_xml(file_text)
    if root.tag != "DiagnosticPackage":
        raise ParseError(f"expected <DiagnosticPackage>, got <{root.tag}>", root.line, root.tag)
    _check(root, ("FBType",), ("Comment",))
    _only_children(root, ("DP", "Test"))
    fb = root.attrib["FBType"]
    plan, tests = [], []
    for node in root.children:
        if node.tag == "DP":
            _check(node, ("Id", "Port"), ("Event", "Comment"))
            plan.append(PlannedDP(_int_attr(node, "Id"), node.attrib["Port"],
                                  node.attrib.get("Event")))
            continue
        _check(node, ("Name", "Expect"),
               ("Inject", "Value", "Fire", "Expected", "Tolerance", "Event", "NoOutputMs",
                "WindowMs", "Comment"))
        kinds = [k for k in ("Expected", "Event", "NoOutputMs") if k in node.attrib]
        if len(kinds) != 1:
            raise ParseError("a test needs exactly one of Expected, Event, NoOutputMs",
                             node.line, node.tag)
        window = _int_attr(node, "WindowMs") if "WindowMs" in node.attrib else DEFAULT_WINDOW_MS
        if kinds[0] == "Expected":
            try:
                tol = float(node.attrib.get("Tolerance", DEFAULT_TOLERANCE))
            except ValueError:
                raise ParseError("bad Tolerance", node.line, node.tag) from None
            if tol < 0:
                raise ParseError("Tolerance must be >= 0", node.line, node.tag)
            expectation = ValueExpectation(node.attrib["Expected"], tol, window)
        elif kinds[0] == "Event":
            expectation = EventExpectation(node.attrib["Event"], window)
        else:
            expectation = NoOutputExpectation(_int_attr(node, "NoOutputMs"))
        fire = node.attrib.get("Fire", "true").lower()
        if fire not in ("true", "false"):
            raise ParseError("Fire must be true or false", node.line, node.tag)
        tests.append(TestCase(
            name=node.attrib["Name"],
            inject_at=_int_attr(node, "Inject") if "Inject" in node.attrib else None,
            inject_value=node.attrib.get("Value"),
            fire_event=fire == "true",
            expect_at=_int_attr(node, "Expect"),
            expectation=expectation,
        ))
    package = DiagnosticPackage(fb, tuple(plan), tuple(tests))
    issues = check_package(package)
    if issues:
        raise ValidationError(issues)
    return package


def serialize_package(package: DiagnosticPackage) -> str:
    lines = [f"<DiagnosticPackage FBType={quoteattr(package.fb_type_name)}>"]
    for p in package.dp_plan:
        event = f" Event={quoteattr(p.event)}" if p.event else ""
        lines.append(f"  <DP Id=\"{p.dp_id}\" Port={quoteattr(p.port)}{event}/>")
    for t in package.tests:
        attrs = [("Name", t.name)]
        if t.inject_at is not None:
            attrs.append(("Inject", str(t.inject_at)))
        if t.inject_value is not None:
            attrs.append(("Value", t.inject_value))
        if not t.fire_event:
            attrs.append(("Fire", "false"))
        attrs.append(("Expect", str(t.expect_at)))
        exp = t.expectation
        if isinstance(exp, ValueExpectation):
            attrs.append(("Expected", exp.expected))
            if exp.tolerance != DEFAULT_TOLERANCE:
                attrs.append(("Tolerance", repr(exp.tolerance)))
        elif isinstance(exp, EventExpectation):
            attrs.append(("Event", exp.port))
        else:
            attrs.append(("NoOutputMs", str(exp.window_ms)))
        if not isinstance(exp, NoOutputExpectation) and exp.window_ms != DEFAULT_WINDOW_MS:
            attrs.append(("WindowMs", str(exp.window_ms)))
        lines.append("  <Test " + " ".join(f"{k}={quoteattr(v)}" for k, v in attrs) + "/>")
    lines += ["</DiagnosticPackage>", ""]
    return "\n".join(lines)


def check_package(package: DiagnosticPackage) -> list[Issue]:
    fb = package.fb_type_name
    planned = {p.dp_id for p in package.dp_plan}
    issues: list[Issue] = []
    if len(planned) != len(package.dp_plan):
        issues.append(BadTest(fb, "", "duplicate DP id in plan"))
    if not package.tests:
        issues.append(EmptyPackage(fb, "", "at least one pathway test required"))
    used: set[int] = set()
    for test in package.tests:
        for dp_id in (test.inject_at, test.expect_at):
            if dp_id is not None and dp_id not in planned:
                issues.append(UndeclaredDP(fb, test.name, f"DP{dp_id} not planned"))
            used.add(dp_id)
        if test.inject_at is not None and test.inject_at == test.expect_at:
            issues.append(BadTest(fb, test.name, "inject and expect DPs must differ"))
    for dp_id in sorted(planned - used):
        issues.append(UntestedDP(fb, f"DP{dp_id}", "no test exercises this pathway"))
    return issues


# -- harness installation -------------------------------------------------------


def resolve_plan(app: Application, packages: dict[str, DiagnosticPackage]):
    """Map every planned DP to ``(data_conn, event_conn)`` in ``app``.

    Returns ``{dp_id: (data_conn | None, event_conn | None)}`` in id order.
    """
    resolved: dict[int, tuple] = {}
    issues: list[Issue] = []
    for inst in app.instances:
        package = packages.get(inst.type_name)
        if package is None:
            continue
        fbt = app.type_library[inst.type_name]
        for planned in package.dp_plan:
            try:
                pair = _resolve_one(app, inst.name, fbt, planned)
            except LookupError as exc:
                issues.append(UnknownConnectionIssue(inst.name, planned.port, str(exc)))
                continue
            previous = resolved.get(planned.dp_id)
            if previous is not None and previous != pair:
                issues.append(UnknownConnectionIssue(inst.name, planned.port,
                                                     f"DP{planned.dp_id} planned twice"))
                continue
            resolved[planned.dp_id] = pair
    seen: dict[Connection, int] = {}
    for dp_id, pair in resolved.items():
        for conn in pair:
            if conn is None:
                continue
            if conn in seen and seen[conn] != dp_id:
                issues.append(UnknownConnectionIssue(conn.destination.instance, conn.destination.port,
                                                     f"DP{dp_id} and DP{seen[conn]} share {conn}"))
            seen[conn] = dp_id
    if issues:
        raise ValidationError(issues)
    return dict(sorted(resolved.items()))


class UnknownConnectionIssue(Issue):
    pass


def _resolve_one(app: Application, name: str, fbt, planned: PlannedDP):
    kind = fbt.port_kind(planned.port)
    if kind is None:
        raise LookupError(f"{fbt.name} has no port {planned.port}")

    def conns(port, port_kind):
        if port_kind.is_output:
            return [c for c in app.connections
                    if c.source.instance == name and c.source.port == port]
        return [c for c in app.connections
                if c.destination.instance == name and c.destination.port == port]

    found = conns(planned.port, kind)
    if len(found) != 1:
        raise LookupError(f"{name}.{planned.port} has {len(found)} connections, need exactly 1")
    main = found[0]
    if kind.is_event:
        if planned.event:
            raise LookupError("Event is only valid with a data port")
        return (None, main)
    if not planned.event:
        return (main, None)
    ekind = fbt.port_kind(planned.event)
    want = PortKind.EVENT_OUTPUT if kind.is_output else PortKind.EVENT_INPUT
    if ekind is not want:
        raise LookupError(f"{planned.event} is not an event port on the same side as {planned.port}")
    events = [c for c in conns(planned.event, ekind)
              if c.source.instance == main.source.instance
              and c.destination.instance == main.destination.instance]
    if len(events) != 1:
        raise LookupError(f"cannot pair {planned.port} with a unique {planned.event} connection")
    return (main, events[0])


@dataclass
class Harness:
    dps: dict[int, DiagnosticPoint]

    def __getitem__(self, dp_id: int) -> DiagnosticPoint:
        return self.dps[dp_id]

    def __iter__(self):
        return iter(self.dps.values())

    def drain(self) -> None:
        for dp in self:
            read(dp)


def install_harness(rt: Runtime, packages: dict[str, DiagnosticPackage]) -> Harness:
    """Insert every DP named by the packages (one ``rewire`` per DP)."""
    dps = {}
    for dp_id, (data_conn, event_conn) in resolve_plan(rt.app, packages).items():
        if data_conn is not None:
            dps[dp_id] = rewire(rt, data_conn, dp_id, event_conn)
        else:
            dps[dp_id] = rewire(rt, event_conn, dp_id)
    return Harness(dps)
