"""The three belief structures an agent holds.

* interaction beliefs: static skills, always true
* the system belief graph: the application as a directed graph of
  ``(fb1, trigger, fb2)`` transitions
* dynamic diagnostics beliefs: one fault opinion per testable block, with
  three-valued veracity and pass/fail evidence
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field

from .fbnetwork import Application, ConnectionKind, DataType


class Veracity(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    UNDETERMINED = "undetermined"


class FaultCode(enum.Enum):
    F0_NONE = "F0_NONE"
    F1_ALGORITHM = "F1_ALGORITHM"
    F2_NO_RESPONSE = "F2_NO_RESPONSE"
    F3_OUT_OF_TOLERANCE = "F3_OUT_OF_TOLERANCE"
    F4_SENSOR_SUSPECTED = "F4_SENSOR_SUSPECTED"
    F5_EVENT_PATH_BROKEN = "F5_EVENT_PATH_BROKEN"


class Outcome(enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    # observation could not confirm or refute; never updates a belief
    INCONCLUSIVE = "inconclusive"


class BeliefError(Exception):
    pass


class UnknownSubject(BeliefError):
    pass


class UnknownNode(BeliefError):
    pass


class NoPath(BeliefError):
    pass


# -- interaction beliefs --------------------------------------------------------


@dataclass(frozen=True)
class InteractionBelief:
    agent_name: str
    method: str
    parameters: tuple[str, ...]
    veracity: Veracity = Veracity.TRUE

    def __post_init__(self):
        if self.veracity is not Veracity.TRUE:
            raise ValueError("interaction beliefs are static skills and always true")

    @property
    def signature(self) -> str:
        return f"{self.agent_name}.{self.method}({', '.join(self.parameters)})"


SKILLS = (
    ("say", ("agent", "message")),
    ("hear", ()),
    ("rewire", ("connection", "dp_id")),
    ("gateClose", ("dp",)),
    ("gateOpen", ("dp",)),
    ("trigger", ("dp", "value", "fire_event", "at")),
    ("read", ("dp",)),
)


def interaction_beliefs(agent_name: str, skills=SKILLS) -> tuple[InteractionBelief, ...]:
    return tuple(InteractionBelief(agent_name, m, p) for m, p in skills)


# -- system beliefs -------------------------------------------------------------


@dataclass(frozen=True)
class Trigger:
    """Port whose output fires the transition, plus an optional value guard."""

    port: str
    kind: ConnectionKind
    guard: str | None = None


@dataclass
class SystemBelief:
    fb1: str
    trg: Trigger
    fb2: str
    target_port: str
    veracity: Veracity = Veracity.TRUE

    @property
    def name(self) -> str:
        return self.trg.port


@dataclass
class NodeInfo:
    instance: str
    type_name: str
    event_inputs: tuple[str, ...]
    event_outputs: tuple[str, ...]
    data_inputs: tuple[tuple[str, DataType], ...]
    data_outputs: tuple[tuple[str, DataType], ...]
    parameters: dict[str, str]
    dp_ids: list[int] = field(default_factory=list)

    def data_type(self, port: str) -> DataType | None:
        return dict(self.data_inputs + self.data_outputs).get(port)


@dataclass
class SystemBeliefGraph:
    nodes: dict[str, NodeInfo]
    edges: list[SystemBelief]

    def note_dp(self, instance: str, dp_id: int) -> None:
        ids = self.nodes[instance].dp_ids
        if dp_id not in ids:
            ids.append(dp_id)
            ids.sort()

    def structure(self):
        """Comparable, veracity-free view of the graph."""
        return ([(n.instance, n.type_name, n.event_inputs, n.event_outputs, n.data_inputs,
                  n.data_outputs, tuple(sorted(n.parameters.items())))
                 for n in self.nodes.values()],
                [(e.fb1, e.trg, e.fb2, e.target_port) for e in self.edges])


def graph_from_application(app: Application) -> SystemBeliefGraph:
    nodes = {}
    for inst in app.instances:
        fbt = app.type_library[inst.type_name]
        nodes[inst.name] = NodeInfo(inst.name, fbt.name, fbt.event_inputs, fbt.event_outputs,
                                    fbt.data_inputs, fbt.data_outputs, dict(inst.parameters))
    edges = [SystemBelief(c.source.instance, Trigger(c.source.port, c.kind),
                          c.destination.instance, c.destination.port)
             for c in app.connections]
    return SystemBeliefGraph(nodes, edges)


def downstream(g: SystemBeliefGraph, fb: str) -> list[SystemBelief]:
    if fb not in g.nodes:
        raise UnknownNode(fb)
    return [e for e in g.edges if e.fb1 == fb]


def data_path(g: SystemBeliefGraph, start: str, end: str) -> list[str]:
    """Nodes lying on any data path from ``start`` to ``end``, topologically ordered."""
    for name in (start, end):
        if name not in g.nodes:
            raise UnknownNode(name)
    succ: dict[str, set[str]] = {n: set() for n in g.nodes}
    pred: dict[str, set[str]] = {n: set() for n in g.nodes}
    for e in g.edges:
        if e.trg.kind is ConnectionKind.DATA:
            succ[e.fb1].add(e.fb2)
            pred[e.fb2].add(e.fb1)

    def reach(origin, nbrs):
        seen, stack = {origin}, [origin]
        while stack:
            for nxt in nbrs[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    members = reach(start, succ) & reach(end, pred)
    if end not in members:
        raise NoPath(f"{start} -> {end}")
    indegree = {n: len(pred[n] & members) for n in members}
    indegree[start] = 0  # cycles through start are cut here
    ready = [n for n in members if indegree[n] == 0]
    heapq.heapify(ready)
    order: list[str] = []
    remaining = set(members)
    while remaining:
        if not ready:
            # cycle: release the alphabetically first blocked node
            heapq.heappush(ready, min(remaining))
        node = heapq.heappop(ready)
        if node not in remaining:
            continue
        remaining.discard(node)
        order.append(node)
        for nxt in sorted(succ[node] & remaining):
            indegree[nxt] -= 1
            if indegree[nxt] <= 0:
                heapq.heappush(ready, nxt)
    return order


# -- dynamic diagnostics beliefs -------------------------------------------------


@dataclass
class DynamicBelief:
    subject: str
    fault_code: FaultCode = FaultCode.F0_NONE
    veracity: Veracity = Veracity.UNDETERMINED
    pass_count: int = 0
    fail_count: int = 0

    def as_record(self) -> dict:
        return {"subject": self.subject, "veracity": self.veracity.value,
                "fault_code": self.fault_code.value,
                "pass": self.pass_count, "fail": self.fail_count}


@dataclass(frozen=True)
class Transition:
    time: int
    subject: str
    before: Veracity
    after: Veracity


class BeliefStore:
    def __init__(self, name: str = "dynamic"):
        self.name = name
        self._beliefs: dict[str, DynamicBelief] = {}
        self.transitions: list[Transition] = []

    def establish(self, subject: str) -> DynamicBelief:
        return self._beliefs.setdefault(subject, DynamicBelief(subject))

    def __contains__(self, subject: str) -> bool:
        return subject in self._beliefs

    def __getitem__(self, subject: str) -> DynamicBelief:
        try:
            return self._beliefs[subject]
        except KeyError:
            raise UnknownSubject(subject) from None

    def __iter__(self):
        return iter(sorted(self._beliefs.values(), key=lambda b: b.subject))

    def __len__(self) -> int:
        return len(self._beliefs)

    def snapshot(self) -> list[dict]:
        return [b.as_record() for b in self]


def update_veracity(store: BeliefStore, subject: str, fault_code: FaultCode, outcome: Outcome,
                    time: int = 0) -> DynamicBelief:
    """Fold one test outcome into ``subject``'s belief. False is sticky."""
    belief = store[subject]
    before = belief.veracity
    if outcome is Outcome.FAIL:
        belief.fail_count += 1
        if belief.veracity is not Veracity.FALSE:
            belief.veracity = Veracity.FALSE
            belief.fault_code = fault_code
    elif outcome is Outcome.PASS:
        belief.pass_count += 1
        if belief.fail_count == 0:
            belief.veracity = Veracity.TRUE
    else:
        raise ValueError(f"{outcome} does not update beliefs")
    if belief.veracity is not before:
        store.transitions.append(Transition(time, subject, before, belief.veracity))
    return belief


def format_snapshot(store: BeliefStore) -> str:
    return "".join(f"{b.subject}\t{b.veracity.value}\t{b.fault_code.value}\t"
                   f"{b.pass_count}\t{b.fail_count}\n" for b in store)
