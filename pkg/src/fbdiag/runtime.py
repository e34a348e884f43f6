"""Deterministic discrete-event execution of an ``Application``.

Time is a logical millisecond counter. Events propagate with zero delay
inside one instant; a FIFO sequence number breaks ties so the processing
order is total and reproducible from the seed.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .fbnetwork import (
    Application,
    Connection,
    ConnectionKind,
    DataType,
    FbType,
    PortKind,
    PortRef,
    ValidationError,
    parse_literal,
    validate,
)


class SimulationError(Exception):
    pass


class MissingBehaviorError(SimulationError):
    pass


class UnknownPortError(SimulationError):
    pass


class TimeInPastError(SimulationError):
    pass


class TypeMismatchError(SimulationError):
    pass


class UnknownTargetError(SimulationError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    time: int
    port: PortRef
    payload: Any = None
    injected: bool = False


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def format_trace(events) -> str:
    """Canonical one-line-per-record serialization."""
    return "".join(f"{e.time}\t{e.port}\t{format_value(e.payload)}\n" for e in events)


@dataclass
class Invocation:
    """Everything a behavior sees when it fires."""

    instance: str
    fb_type: FbType
    event: str | None  # None for periodic source firings
    inputs: dict[str, Any]
    params: dict[str, Any]
    memory: dict[str, Any]
    time: int
    rng: random.Random


@dataclass
class Output:
    data: dict[str, Any] = field(default_factory=dict)
    events: tuple[str, ...] = ()


Behavior = Callable[[Invocation], Output]
Wrapper = Callable[[Behavior], Behavior]


@dataclass
class BehaviorRegistry:
    behaviors: dict[str, Behavior] = field(default_factory=dict)
    sources: dict[str, Behavior] = field(default_factory=dict)
    # per-instance decorators, applied innermost first (fault injection)
    instance_wrappers: dict[str, tuple[Wrapper, ...]] = field(default_factory=dict)

    def copy(self) -> BehaviorRegistry:
        return BehaviorRegistry(dict(self.behaviors), dict(self.sources),
                                dict(self.instance_wrappers))

    def wrap_instance(self, instance: str, wrapper: Wrapper) -> BehaviorRegistry:
        new = self.copy()
        new.instance_wrappers[instance] = self.instance_wrappers.get(instance, ()) + (wrapper,)
        return new


class Probe:
    """Hook interface for connection interceptors (see ``harness``)."""

    def on_event(self, conn: Connection, time: int) -> bool:
        return True

    def pull(self, conn: Connection, time: int, upstream, paired: bool):
        return upstream


class Runtime:
    def __init__(self, app: Application, registry: BehaviorRegistry, seed: int):
        self.app = app
        self.seed = seed
        self.now = 0
        self.rng = random.Random(seed)
        self.trace: list[TraceEvent] = []
        self.probes: dict[Connection, Probe] = {}

        self._queue: list = []
        self._seq = itertools.count()
        self._types = {inst.name: app.type_library[inst.type_name] for inst in app.instances}
        self._fanout: dict[tuple[str, str], list[Connection]] = {}
        self._drivers: dict[tuple[str, str], Connection] = {}
        for conn in app.connections:
            key = (conn.source.instance, conn.source.port)
            if conn.kind is ConnectionKind.EVENT:
                self._fanout.setdefault(key, []).append(conn)
            else:
                self._drivers[(conn.destination.instance, conn.destination.port)] = conn

        self.outputs: dict[tuple[str, str], Any] = {}
        self.latches: dict[tuple[str, str], Any] = {}
        self.memory: dict[str, dict] = {}
        self.params: dict[str, dict] = {}
        self._behaviors: dict[str, Behavior] = {}
        for inst in app.instances:
            fbt = self._types[inst.name]
            table = registry.sources if fbt.is_source else registry.behaviors
            if fbt.behavior_key not in table:
                raise MissingBehaviorError(fbt.behavior_key)
            behavior = table[fbt.behavior_key]
            for wrap in registry.instance_wrappers.get(inst.name, ()):
                behavior = wrap(behavior)
            self._behaviors[inst.name] = behavior
            params = {k: parse_literal(fbt.data_type(k), v) for k, v in inst.parameters.items()}
            self.params[inst.name] = params
            self.memory[inst.name] = {}
            for name, dtype in fbt.data_inputs:
                self.latches[(inst.name, name)] = params.get(name, dtype.default())
            for name, dtype in fbt.data_outputs:
                self.outputs[(inst.name, name)] = dtype.default()
            if fbt.is_source:
                self._push(fbt.source_period_ms, ("source", inst.name))
        unknown = set(registry.instance_wrappers) - set(self._types)
        if unknown:
            raise UnknownTargetError(", ".join(sorted(unknown)))

    # -- public surface -----------------------------------------------------

    def port(self, instance: str, port: str) -> PortRef:
        fbt = self._types.get(instance)
        kind = fbt.port_kind(port) if fbt else None
        if kind is None:
            raise UnknownPortError(f"{instance}.{port}")
        return PortRef(instance, port, kind)

    def type_of(self, instance: str) -> FbType:
        return self._types[instance]

    def inject_event(self, port: PortRef, at: int) -> None:
        port = self._checked(port)
        if not port.kind.is_event:
            raise UnknownPortError(f"{port} is not an event port")
        self._at(at, ("emit", port) if port.kind.is_output else ("fire", port, None))

    def set_data(self, port: PortRef, value) -> None:
        port = self._checked(port)
        if port.kind.is_event:
            raise UnknownPortError(f"{port} is not a data port")
        dtype = self._types[port.instance].data_type(port.port)
        try:
            value = dtype.coerce(value)
        except TypeError as exc:
            raise TypeMismatchError(f"{port}: {exc}") from None
        table = self.outputs if port.kind.is_output else self.latches
        table[(port.instance, port.port)] = value

    def schedule(self, at: int, action: Callable[[int], None]) -> None:
        """Run ``action(time)`` on the logical thread at ``at``."""
        self._at(at, ("call", action))

    def run_until(self, t: int) -> list[TraceEvent]:
        if t < self.now:
            raise TimeInPastError(f"{t} < {self.now}")
        start = len(self.trace)
        while self._queue and self._queue[0][0] <= t:
            time, _, item = heapq.heappop(self._queue)
            self.now = time
            self._process(time, item)
        self.now = t
        return self.trace[start:]

    @property
    def pending(self) -> list[tuple[int, tuple]]:
        return [(time, item) for time, _, item in sorted(self._queue)]

    def deliver(self, conn: Connection, time: int) -> None:
        """Hand an event to a destination, bypassing any probe on ``conn``."""
        self._fire(conn.destination, time, via=conn)

    def upstream_value(self, conn: Connection):
        return self.outputs[(conn.source.instance, conn.source.port)]

    # -- internals ------------------------------------------------------------

    def _checked(self, port: PortRef) -> PortRef:
        actual = self.port(port.instance, port.port)
        if actual.kind is not port.kind:
            raise UnknownPortError(f"{port} is a {actual.kind.value}")
        return actual

    def _at(self, at: int, item) -> None:
        if at < self.now:
            raise TimeInPastError(f"{at} < {self.now}")
        self._push(at, item)

    def _push(self, at: int, item) -> None:
        heapq.heappush(self._queue, (at, next(self._seq), item))

    def _record(self, time, port, payload=None) -> None:
        self.trace.append(TraceEvent(time, port, payload))

    def _process(self, time: int, item) -> None:
        tag = item[0]
        if tag == "source":
            name = item[1]
            self._invoke(name, None, {}, time)
            self._push(time + self._types[name].source_period_ms, item)
        elif tag == "deliver":
            conn = item[1]
            probe = self.probes.get(conn)
            if probe is None or probe.on_event(conn, time):
                self._fire(conn.destination, time, via=conn)
        elif tag == "fire":
            self._fire(item[1], time, via=item[2])
        elif tag == "emit":
            self._emit(item[1], time)
        elif tag == "call":
            item[1](time)

    def _fire(self, dest: PortRef, time: int, via: Connection | None) -> None:
        name = dest.instance
        fbt = self._types[name]
        self._record(time, dest)
        inputs = {}
        for port, _ in fbt.data_inputs:
            conn = self._drivers.get((name, port))
            if conn is not None:
                value = self.upstream_value(conn)
                probe = self.probes.get(conn)
                if probe is not None:
                    paired = via is not None and getattr(probe, "event_conn", None) == via
                    value = probe.pull(conn, time, value, paired)
                self.latches[(name, port)] = value
                self._record(time, PortRef(name, port, PortKind.DATA_INPUT), value)
            inputs[port] = self.latches[(name, port)]
        self._invoke(name, dest.port, inputs, time)

    def _invoke(self, name: str, event: str | None, inputs: dict, time: int) -> None:
        fbt = self._types[name]
        call = Invocation(name, fbt, event, inputs, self.params[name], self.memory[name],
                          time, self.rng)
        out = self._behaviors[name](call)
        for port, value in out.data.items():
            dtype = fbt.data_type(port)
            if dtype is None or fbt.port_kind(port) is not PortKind.DATA_OUTPUT:
                raise UnknownPortError(f"{name}.{port} is not a data output")
            value = dtype.coerce(value)
            self.outputs[(name, port)] = value
            self._record(time, PortRef(name, port, PortKind.DATA_OUTPUT), value)
        for event_out in out.events:
            if fbt.port_kind(event_out) is not PortKind.EVENT_OUTPUT:
                raise UnknownPortError(f"{name}.{event_out} is not an event output")
            self._emit(PortRef(name, event_out, PortKind.EVENT_OUTPUT), time)

    def _emit(self, port: PortRef, time: int) -> None:
        self._record(time, port)
        for conn in self._fanout.get((port.instance, port.port), ()):
            self._push(time, ("deliver", conn))


def instantiate(app: Application, registry: BehaviorRegistry, seed: int) -> Runtime:
    issues = validate(app)
    if issues:
        raise ValidationError(issues)
    return Runtime(app, registry, seed)


def data_type_of(rt: Runtime, ref: PortRef) -> DataType | None:
    return rt.type_of(ref.instance).data_type(ref.port)
