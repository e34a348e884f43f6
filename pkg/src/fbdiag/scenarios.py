"""HVAC room-controller fixture and seeded fault injection."""

from __future__ import annotations

import bisect
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from xml.sax.saxutils import quoteattr

from .agent import NormalBehaviorProfile, PeriodicSignal, RateLimit, StimulusResponse, Subsystem
from .fbnetwork import (
    Application,
    DataType,
    FbType,
    ParseError,
    PortKind,
    PortRef,
    _check,
    _only_children,
    _read_xml,
    parse_application,
    parse_fb_type,
)
from .harness import DiagnosticPackage, load_package
from .runtime import Behavior, BehaviorRegistry, Invocation, Output, UnknownTargetError

ABSOLUTE_ZERO_F = -459.67
CORRUPT_RANGE = (-50.0, 150.0)
SETPOINT_STEP = 0.5


def f_to_c(fahrenheit: float) -> float:
    return (fahrenheit - 32.0) * 5.0 / 9.0


def c_to_f(celsius: float) -> float:
    return celsius * 9.0 / 5.0 + 32.0


@dataclass(frozen=True)
class TempProfile:
    """Piecewise-linear ambient temperature (Fahrenheit) over logical time."""

    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.points:
            raise ValueError("profile needs at least one point")
        times = [t for t, _ in self.points]
        if times != sorted(times) or len(set(times)) != len(times):
            raise ValueError("profile times must be strictly increasing")

    @classmethod
    def constant(cls, fahrenheit: float) -> TempProfile:
        return cls(((0, fahrenheit),))

    def __call__(self, t: int) -> float:
        times = [p[0] for p in self.points]
        i = bisect.bisect_right(times, t)
        if i == 0:
            return self.points[0][1]
        if i == len(self.points):
            return self.points[-1][1]
        (t0, v0), (t1, v1) = self.points[i - 1], self.points[i]
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)


DEFAULT_AMBIENT = TempProfile.constant(72.0)


# -- behaviors ------------------------------------------------------------------


def _switches(call: Invocation) -> Output:
    return Output()


def _f_to_c(call: Invocation) -> Output:
    fahrenheit = call.inputs["F"]
    if fahrenheit <= ABSOLUTE_ZERO_F:
        return Output(events=("ERROR",))
    return Output({"C": f_to_c(fahrenheit)}, ("CNF",))


def _zone_controller(call: Invocation) -> Output:
    mem = call.memory
    mem.setdefault("setpoint", call.inputs["SP_INIT"])
    if call.event == "TEMP_CHANGED":
        return Output({"ZONE_TEMP": call.inputs["TEMP"]}, ("ZONE_UPDATE",))
    if call.event in ("CMD_UP", "CMD_DOWN"):
        mem["setpoint"] += SETPOINT_STEP if call.event == "CMD_UP" else -SETPOINT_STEP
        return Output({"SETPOINT": mem["setpoint"]}, ("SETPOINT_CHANGED",))
    # TEMP_ERROR holds the last zone temperature; ACK needs no action
    return Output()


def _hvac_main_stub(call: Invocation) -> Output:
    return Output(events=("ACK",))


def temperature_sensor(profile: TempProfile) -> Behavior:
    def source(call: Invocation) -> Output:
        return Output({"TEMP": profile(call.time)}, ("TEMP_CHANGED",))
    return source


def room_controller_registry(ambient: TempProfile = DEFAULT_AMBIENT) -> BehaviorRegistry:
    return BehaviorRegistry(
        behaviors={
            "switches": _switches,
            "f_to_c": _f_to_c,
            "zone_controller": _zone_controller,
            "hvac_main_stub": _hvac_main_stub,
        },
        sources={"temperature_sensor": temperature_sensor(ambient)},
    )


# -- fixture loading ---------------------------------------------------------------


FIXTURE = "room_controller"


def fixture_dir(name: str = FIXTURE):
    return resources.files("fbdiag") / "fixtures" / name


def load_types(directory) -> dict[str, FbType]:
    types = {}
    for entry in sorted(directory.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".fbt.xml"):
            fbt = parse_fb_type(entry.read_text(encoding="utf-8"))
            types[fbt.name] = fbt
    return types


def load_packages(directory) -> dict[str, DiagnosticPackage]:
    packages = {}
    for entry in sorted(directory.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".dpkg.xml"):
            try:
                pkg = load_package(entry.read_text(encoding="utf-8"))
            except ParseError as exc:
                raise ParseError(f"{entry.name}: {exc.message}", exc.line, exc.element) from None
            packages[pkg.fb_type_name] = pkg
    return packages


def build_room_controller(ambient: TempProfile = DEFAULT_AMBIENT):
    """Return ``(application, registry, packages)`` for the room controller."""
    root = fixture_dir()
    types = load_types(root)
    app = parse_application((root / "room_controller.app.xml").read_text(encoding="utf-8"), types)
    return app, room_controller_registry(ambient), load_packages(root)


def room_controller_profile() -> NormalBehaviorProfile:
    """Expected behaviour of a healthy room controller, in DP terms."""
    return NormalBehaviorProfile(
        periodic_signals=(PeriodicSignal(1, 500, 100, "temperature"),),
        rate_limits=(RateLimit(6, 0.3, "temperature", setpoint_dp=7),),
        stimulus_response=tuple(
            StimulusResponse(PortRef("Z_SWITCHES", cmd, PortKind.EVENT_OUTPUT), 7, 1000, "temperature")
            for cmd in ("CMD_UP", "CMD_DOWN")),
        subsystems=(Subsystem("temperature", "Z_TEMPERATURE", "Z_CONTROLLER"),),
    )


# -- faults -------------------------------------------------------------------------


@dataclass(frozen=True)
class AlgorithmRandomInRange:
    low: float
    high: float
    probability: float = 0.5
    input_port: str | None = None
    output_port: str | None = None

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("low must be below high")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")


@dataclass(frozen=True)
class StuckSensor:
    value: float
    output_port: str | None = None


@dataclass(frozen=True)
class DeadSource:
    after_ms: int = 0


@dataclass(frozen=True)
class OutputOffset:
    delta: float
    output_port: str | None = None


FaultKind = AlgorithmRandomInRange | StuckSensor | DeadSource | OutputOffset


@dataclass(frozen=True)
class FaultScenario:
    name: str
    target: str
    kind: FaultKind


def _first_real(ports, override):
    if override:
        return override
    for name, dtype in ports:
        if dtype is DataType.REAL:
            return name
    raise UnknownTargetError("target has no REAL port")


def _wrapper(kind: FaultKind):
    def wrap(inner: Behavior) -> Behavior:
        def faulty(call: Invocation) -> Output:
            out = inner(call)
            if isinstance(kind, DeadSource):
                return Output() if call.time >= kind.after_ms else out
            port = _first_real(call.fb_type.data_outputs, kind.output_port)
            if port not in out.data:
                return out
            data = dict(out.data)
            if isinstance(kind, StuckSensor):
                data[port] = kind.value
            elif isinstance(kind, OutputOffset):
                data[port] = data[port] + kind.delta
            else:
                watched = call.inputs.get(_first_real(call.fb_type.data_inputs, kind.input_port))
                if watched is None or not kind.low <= watched <= kind.high:
                    return out
                if kind.probability <= 0.0:
                    return out
                if kind.probability < 1.0 and call.rng.random() >= kind.probability:
                    return out
                data[port] = call.rng.uniform(*CORRUPT_RANGE)
            return Output(data, out.events)
        return faulty
    return wrap


def apply_fault(registry: BehaviorRegistry, scenario: FaultScenario,
                app: Application | None = None) -> BehaviorRegistry:
    """Wrap the target instance's behavior; topology is never touched."""
    if app is not None and scenario.target not in {i.name for i in app.instances}:
        raise UnknownTargetError(scenario.target)
    return registry.wrap_instance(scenario.target, _wrapper(scenario.kind))


_KIND_ATTRS = {
    "AlgorithmRandomInRange": (AlgorithmRandomInRange, {"Low": ("low", float), "High": ("high", float),
                                                       "Probability": ("probability", float),
                                                       "InputPort": ("input_port", str),
                                                       "OutputPort": ("output_port", str)}),
    "StuckSensor": (StuckSensor, {"Value": ("value", float), "OutputPort": ("output_port", str)}),
    "DeadSource": (DeadSource, {"AfterMs": ("after_ms", int)}),
    "OutputOffset": (OutputOffset, {"Delta": ("delta", float), "OutputPort": ("output_port", str)}),
}


def load_scenario(xml_text: str) -> FaultScenario:
    root = _read_xml(xml_text)
    if root.tag != "FaultScenario":
        raise ParseError(f"expected <FaultScenario>, got <{root.tag}>", root.line, root.tag)
    _check(root, ("Name", "Target"), ("Comment",))
    _only_children(root, tuple(_KIND_ATTRS))
    if len(root.children) != 1:
        raise ParseError("exactly one fault kind required", root.line, root.tag)
    node = root.children[0]
    cls, attrs = _KIND_ATTRS[node.tag]
    required = {"AlgorithmRandomInRange": ("Low", "High"), "StuckSensor": ("Value",),
                "OutputOffset": ("Delta",)}.get(node.tag, ())
    _check(node, required, tuple(a for a in attrs if a not in required))
    kwargs = {}
    for attr, text in node.attrib.items():
        field_name, conv = attrs[attr]
        try:
            kwargs[field_name] = conv(text)
        except ValueError:
            raise ParseError(f"bad value for {attr}: {text!r}", node.line, node.tag) from None
    try:
        kind = cls(**kwargs)
    except ValueError as exc:
        raise ParseError(str(exc), node.line, node.tag) from None
    return FaultScenario(root.attrib["Name"], root.attrib["Target"], kind)


def serialize_scenario(scenario: FaultScenario) -> str:
    tag = type(scenario.kind).__name__
    fields = {f: a for a, (f, _) in _KIND_ATTRS[tag][1].items()}
    attrs = []
    for f in dataclasses.fields(scenario.kind):
        value = getattr(scenario.kind, f.name)
        if value is not None and value != f.default:
            attrs.append(f" {fields[f.name]}={quoteattr(str(value))}")
    return (f"<FaultScenario Name={quoteattr(scenario.name)} Target={quoteattr(scenario.target)}>\n"
            f"  <{tag}{''.join(attrs)}/>\n</FaultScenario>\n")


def builtin_scenarios() -> dict[str, FaultScenario]:
    """Named fault scenarios shipped with the fixture."""
    directory = fixture_dir() / "scenarios"
    out = {}
    for entry in sorted(directory.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".scn.xml"):
            scn = load_scenario(entry.read_text(encoding="utf-8"))
            out[scn.name] = scn
    return out


@dataclass
class SweepCase:
    target: str
    scenario: FaultScenario
    expected_possible: tuple[str, ...] = field(default_factory=tuple)


def hard_fault_sweep() -> list[SweepCase]:
    """One deterministic fault per block on the temperature data path."""
    scn = builtin_scenarios()
    return [
        SweepCase("Z_TEMPERATURE", scn["dead-sensor"]),
        SweepCase("F_TO_C_CONV", scn["conv-hard"], ("Z_TEMPERATURE",)),
        SweepCase("Z_CONTROLLER", scn["controller-hard"], ("Z_TEMPERATURE",)),
    ]
