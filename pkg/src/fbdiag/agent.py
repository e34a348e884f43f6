"""Sequential BDI-style diagnostic agent.

One agent walks Monitor -> Diagnose -> Analyse -> Report; a coordinator
agent on the same team receives notices and session reports and correlates
reports across sessions.
"""

from __future__ import annotations

import enum
import queue
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any

from .beliefs import (
    BeliefStore,
    FaultCode,
    Outcome,
    Veracity,
    data_path,
    graph_from_application,
    interaction_beliefs,
    update_veracity,
)
from .fbnetwork import Application, PortRef, parse_literal
from .harness import (
    DiagnosticPackage,
    EventExpectation,
    Harness,
    NoOutputExpectation,
    TestCase,
    ValueExpectation,
    gate_close,
    gate_open,
    read,
    resolve_plan,
    rewire,
    trigger,
)
from .runtime import BehaviorRegistry, Runtime, TraceEvent, format_value, instantiate

FORMAT_VERSION = 1
MONITOR_INTERVAL_MS = 100
RATE_EPSILON = 1e-9


class AgentError(Exception):
    pass


class UnknownAgent(AgentError):
    pass


class NoViolation(AgentError):
    pass


class MissingPackage(AgentError):
    pass


class MissingSkill(AgentError):
    pass


class EmptyReportList(AgentError):
    pass


class GoalKind(enum.Enum):
    MONITOR = "Monitor"
    DIAGNOSE = "Diagnose"
    ANALYSE = "Analyse"
    REPORT = "Report"


class GoalStatus(enum.Enum):
    PENDING = "Pending"
    ACTIVE = "Active"
    ACHIEVED = "Achieved"
    ABANDONED = "Abandoned"


@dataclass
class Goal:
    kind: GoalKind
    target: str | None = None
    status: GoalStatus = GoalStatus.PENDING

    @property
    def label(self) -> str:
        return f"{self.kind.value}({self.target})" if self.target else self.kind.value


@dataclass(frozen=True)
class GoalRecord:
    time: int
    agent: str
    goal: str
    status: GoalStatus


def format_goal_log(records) -> str:
    return "".join(f"{r.time}\t{r.agent}\t{r.goal}\t{r.status.value}\n" for r in records)


# -- normal behaviour profile ---------------------------------------------------


@dataclass(frozen=True)
class Subsystem:
    name: str
    source: str
    sink: str


@dataclass(frozen=True)
class PeriodicSignal:
    dp_id: int
    period_ms: int
    tolerance_ms: int
    subsystem: str


@dataclass(frozen=True)
class RateLimit:
    """``|last - first|`` over a trailing window may not exceed the limit.

    The full ``max_delta_per_min`` is only allowed while a setpoint change
    (seen at ``setpoint_dp``) is in flight; otherwise ``quiescent_bound``
    applies.
    """

    dp_id: int
    max_delta_per_min: float
    subsystem: str
    setpoint_dp: int | None = None
    quiescent_bound: float = 0.05
    settle_band: float = 0.1
    window_ms: int = 60_000


@dataclass(frozen=True)
class StimulusResponse:
    stimulus: PortRef
    response_dp: int
    deadline_ms: int
    subsystem: str


@dataclass(frozen=True)
class NormalBehaviorProfile:
    periodic_signals: tuple[PeriodicSignal, ...] = ()
    rate_limits: tuple[RateLimit, ...] = ()
    stimulus_response: tuple[StimulusResponse, ...] = ()
    subsystems: tuple[Subsystem, ...] = ()
    interval_ms: int = MONITOR_INTERVAL_MS

    def __post_init__(self):
        for p in self.periodic_signals:
            if p.period_ms <= 0 or p.tolerance_ms <= 0:
                raise ValueError("periods and tolerances must be positive")
        for s in self.stimulus_response:
            if s.deadline_ms <= 0:
                raise ValueError("deadlines must be positive")
        if self.interval_ms <= 0:
            raise ValueError("monitoring interval must be positive")

    def subsystem(self, name: str) -> Subsystem:
        for s in self.subsystems:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True)
class Violation:
    kind: str
    dp_id: int
    time: int
    subject: str
    fault_code: FaultCode
    subsystem: str
    detail: str = ""

    def as_record(self) -> dict:
        return {"kind": self.kind, "dp": self.dp_id, "time_ms": self.time,
                "subject": self.subject, "fault_code": self.fault_code.value,
                "subsystem": self.subsystem, "detail": self.detail}


class _MonitorState:
    def __init__(self, profile: NormalBehaviorProfile, start: int):
        self.last_seen = {c: start for c in profile.periodic_signals}
        self.windows = {c: deque() for c in profile.rate_limits}
        # (start, end or None, target setpoint) per rate clause
        self.flights = {c: [] for c in profile.rate_limits}
        self.stimuli = {c: deque() for c in profile.stimulus_response}
        self.responses = {c: deque() for c in profile.stimulus_response}


# -- messaging -------------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    sender: str
    recipient: str
    body: Any
    time: int = 0


class Team:
    def __init__(self, coordinator: Agent | None = None):
        self.members: dict[str, Agent] = {}
        self.coordinator = coordinator
        if coordinator is not None:
            self.add(coordinator)

    def add(self, agent: Agent) -> Agent:
        self.members[agent.name] = agent
        agent.team = self
        return agent


def say(sender: Agent, to: str, message, time: int = 0) -> None:
    sender.use("say")
    team = sender.team
    if team is None or to not in team.members:
        raise UnknownAgent(to)
    team.members[to].inbox.put(Message(sender.name, to, message, time))


def hear(agent: Agent) -> Message:
    """Oldest pending message; raises ``queue.Empty`` when there is none."""
    agent.use("hear")
    return agent.inbox.get_nowait()


# -- the agent ------------------------------------------------------------------------


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    subject: str
    test: str
    outcome: Outcome
    fault_code: FaultCode | None
    observed: str
    time: int

    def as_record(self) -> dict:
        return {"subject": self.subject, "test": self.test, "outcome": self.outcome.value,
                "fault_code": self.fault_code.value if self.fault_code else None,
                "observed": self.observed, "time_ms": self.time}


class Classification(enum.Enum):
    HARD = "Hard"
    INTERMITTENT = "Intermittent"
    POSSIBLE = "Possible"
    CLEAR = "Clear"


@dataclass(frozen=True)
class DiagnosisEntry:
    subject: str
    fault_code: FaultCode
    classification: Classification


class Agent:
    def __init__(self, name: str, skills=None):
        self.name = name
        self.skills = interaction_beliefs(name) if skills is None else tuple(skills)
        self.inbox: queue.SimpleQueue[Message] = queue.SimpleQueue()
        self.team: Team | None = None
        self.runtime: Runtime | None = None
        self.graph = None
        self.harness: Harness | None = None
        self.profile: NormalBehaviorProfile | None = None
        self.beliefs = BeliefStore("dynamic")
        self.primary = BeliefStore("primary")
        self.goals: list[Goal] = []
        self.goal_log: list[GoalRecord] = []
        self.violations: list[Violation] = []
        self.outcomes: list[TestOutcome] = []
        self.diagnosis: list[DiagnosisEntry] | None = None
        self.skill_log: list[str] = []
        self._monitor: _MonitorState | None = None

    def __repr__(self) -> str:
        return f"Agent({self.name!r})"

    # skills and goals

    def use(self, skill: str) -> None:
        if not any(b.method == skill for b in self.skills):
            raise MissingSkill(f"{self.name} has no skill {skill!r}")
        self.skill_log.append(skill)

    @property
    def now(self) -> int:
        return self.runtime.now if self.runtime else 0

    @property
    def active(self) -> Goal | None:
        for g in self.goals:
            if g.status is GoalStatus.ACTIVE:
                return g
        return None

    def _log(self, goal: Goal) -> None:
        self.goal_log.append(GoalRecord(self.now, self.name, goal.label, goal.status))

    def activate(self, goal: Goal) -> Goal:
        if self.active is not None:
            raise AgentError(f"{self.active.label} is still active")
        goal.status = GoalStatus.ACTIVE
        self.goals.append(goal)
        self._log(goal)
        return goal

    def finish(self, status: GoalStatus) -> Goal:
        goal = self.active
        if goal is None:
            raise AgentError("no active goal")
        goal.status = status
        self._log(goal)
        return goal

    def last_finished(self) -> Goal | None:
        done = [g for g in self.goals if g.status in (GoalStatus.ACHIEVED, GoalStatus.ABANDONED)]
        return done[-1] if done else None

    # harness skills

    def attach(self, rt: Runtime, packages: dict[str, DiagnosticPackage],
               profile: NormalBehaviorProfile) -> None:
        """Build beliefs about ``rt``'s application and splice in every planned DP."""
        self.runtime = rt
        self.profile = profile
        self.graph = graph_from_application(rt.app)
        dps = {}
        for dp_id, (data_conn, event_conn) in resolve_plan(rt.app, packages).items():
            self.use("rewire")
            dp = (rewire(rt, data_conn, dp_id, event_conn) if data_conn
                  else rewire(rt, event_conn, dp_id))
            dps[dp_id] = dp
            self.graph.note_dp(dp.upstream, dp_id)
            self.graph.note_dp(dp.downstream, dp_id)
        self.harness = Harness(dps)
        for inst in rt.app.instances:
            if inst.type_name in packages:
                self.beliefs.establish(inst.name)
        for subject in self._clause_subjects():
            self.primary.establish(subject)

    def read(self, dp_id: int) -> list[TraceEvent]:
        self.use("read")
        return read(self.harness[dp_id])

    def gate_close(self, dp_id: int) -> None:
        self.use("gateClose")
        gate_close(self.harness[dp_id])

    def gate_open(self, dp_id: int) -> None:
        self.use("gateOpen")
        gate_open(self.harness[dp_id])

    def trigger(self, dp_id: int, value, fire_event: bool, at: int) -> None:
        self.use("trigger")
        trigger(self.harness[dp_id], value, fire_event, at)

    def drain(self) -> None:
        for dp_id in self.harness.dps:
            self.read(dp_id)

    def _clause_subjects(self) -> list[str]:
        p = self.profile
        dps = [c.dp_id for c in p.periodic_signals] + [c.dp_id for c in p.rate_limits] + \
              [c.response_dp for c in p.stimulus_response]
        return sorted({self.harness[d].upstream for d in dps})

    def subject_of(self, dp_id: int) -> str:
        return self.harness[dp_id].upstream


# -- Monitor ---------------------------------------------------------------------------


def monitor_step(agent: Agent, rt: Runtime, profile: NormalBehaviorProfile,
                 until: int | None = None) -> list[Violation]:
    """Advance one monitoring interval, re-evaluate every primary belief."""
    if agent._monitor is None:
        agent._monitor = _MonitorState(profile, rt.now)
    state = agent._monitor
    end = rt.now + profile.interval_ms
    if until is not None:
        end = min(end, until)
    rt.run_until(end)
    now = rt.now
    fresh = {dp_id: [e for e in agent.read(dp_id) if not e.injected] for dp_id in agent.harness.dps}
    found: list[Violation] = []

    for clause in profile.periodic_signals:
        subject = agent.subject_of(clause.dp_id)
        for e in fresh[clause.dp_id]:
            gap = e.time - state.last_seen[clause]
            if abs(gap - clause.period_ms) > clause.tolerance_ms:
                found.append(Violation("PeriodicSignalIrregular", clause.dp_id, e.time, subject,
                                       FaultCode.F3_OUT_OF_TOLERANCE, clause.subsystem,
                                       f"interval {gap} ms"))
            state.last_seen[clause] = e.time
        deadline = state.last_seen[clause] + clause.period_ms + clause.tolerance_ms
        if now >= deadline:
            found.append(Violation("PeriodicSignalMissing", clause.dp_id, deadline, subject,
                                   FaultCode.F2_NO_RESPONSE, clause.subsystem,
                                   f"nothing since {state.last_seen[clause]} ms"))
            state.last_seen[clause] = deadline - clause.tolerance_ms

    for clause in profile.rate_limits:
        found += _check_rate(agent, clause, state, fresh, now)

    for clause in profile.stimulus_response:
        stim_dps = [dp.id for dp in agent.harness
                    if dp.event_conn is not None and dp.event_conn.source == clause.stimulus]
        for dp_id in stim_dps:
            state.stimuli[clause].extend(e.time for e in fresh[dp_id])
        state.responses[clause].extend(e.time for e in fresh[clause.response_dp])
        pending, responses = state.stimuli[clause], state.responses[clause]
        while pending:
            ts = pending[0]
            while responses and responses[0] < ts:
                responses.popleft()
            if responses and responses[0] <= ts + clause.deadline_ms:
                responses.popleft()
                pending.popleft()
            elif now >= ts + clause.deadline_ms:
                pending.popleft()
                found.append(Violation("StimulusResponseMissing", clause.response_dp,
                                       ts + clause.deadline_ms,
                                       agent.subject_of(clause.response_dp),
                                       FaultCode.F2_NO_RESPONSE, clause.subsystem,
                                       f"{clause.stimulus} at {ts} ms"))
            else:
                break

    found.sort(key=lambda v: (v.time, v.dp_id, v.kind))
    violated = {}
    for v in found:
        violated.setdefault(v.subject, v.fault_code)
    for belief in list(agent.primary):
        if belief.subject in violated:
            update_veracity(agent.primary, belief.subject, violated[belief.subject], Outcome.FAIL, now)
        else:
            update_veracity(agent.primary, belief.subject, FaultCode.F0_NONE, Outcome.PASS, now)
    agent.violations.extend(found)
    return found


def _check_rate(agent, clause: RateLimit, state: _MonitorState, fresh, now) -> list[Violation]:
    window, flights = state.windows[clause], state.flights[clause]
    merged = [(e.time, 0, e.payload) for e in fresh.get(clause.setpoint_dp, ())
              if e.payload is not None] if clause.setpoint_dp is not None else []
    merged += [(e.time, 1, e.payload) for e in fresh[clause.dp_id] if e.payload is not None]
    for time, which, value in sorted(merged, key=lambda m: (m[0], m[1])):
        if which == 0:
            if flights and flights[-1][1] is None:
                flights[-1] = (flights[-1][0], time, flights[-1][2])
            flights.append((time, None, value))
            continue
        window.append((time, value))
        if flights and flights[-1][1] is None and abs(value - flights[-1][2]) <= clause.settle_band:
            flights[-1] = (flights[-1][0], time, flights[-1][2])
    horizon = now - clause.window_ms
    while window and window[0][0] <= horizon:
        window.popleft()
    while flights and flights[0][1] is not None and flights[0][1] <= horizon:
        flights.pop(0)
    if len(window) < 2:
        return []
    in_flight = bool(flights)
    bound = clause.max_delta_per_min * clause.window_ms / 60_000 if in_flight else clause.quiescent_bound
    drift = abs(window[-1][1] - window[0][1])
    if drift <= bound + RATE_EPSILON:
        return []
    detail = (f"drift {drift:.6g} over {window[-1][0] - window[0][0]} ms, limit {bound:.6g}"
              + (" (setpoint change in flight)" if in_flight else ""))
    last = window[-1][0]
    window.clear()
    return [Violation("RateLimitExceeded", clause.dp_id, last, agent.subject_of(clause.dp_id),
                      FaultCode.F3_OUT_OF_TOLERANCE, clause.subsystem, detail)]


def reinforce_monitored(agent: Agent) -> None:
    """A clean Monitor goal vouches for every block on each monitored path."""
    for sub in agent.profile.subsystems:
        for fb in data_path(agent.graph, sub.source, sub.sink):
            if fb in agent.beliefs:
                update_veracity(agent.beliefs, fb, FaultCode.F0_NONE, Outcome.PASS, agent.now)


# -- Diagnose ----------------------------------------------------------------------------


def escalate(agent: Agent) -> Goal:
    if not any(b.veracity is Veracity.FALSE for b in agent.primary):
        raise NoViolation(agent.name)
    target = agent.violations[-1].subsystem if agent.violations else agent.profile.subsystems[0].name
    agent.finish(GoalStatus.ABANDONED)
    goal = agent.activate(Goal(GoalKind.DIAGNOSE, target))
    team = agent.team
    if team is not None and team.coordinator is not None and team.coordinator is not agent:
        say(agent, team.coordinator.name,
            {"kind": "abandon-monitor", "goal": goal.label,
             "violations": [v.as_record() for v in agent.violations]},
            agent.now)
    return goal


def isolation_gates(agent: Agent, path: list[str]) -> list[int]:
    """DPs whose connections cross the boundary of the isolated region.

    The region is the path minus its source block, so the source is
    disconnected, lateral inputs are cut and downstream consumers blocked.
    """
    region = set(path[1:])
    return [dp.id for dp in agent.harness
            if any((c.source.instance in region) != (c.destination.instance in region)
                   for c in dp.connections)]


def diagnose(agent: Agent, rt: Runtime, packages: dict[str, DiagnosticPackage]) -> list[TestOutcome]:
    goal = agent.active
    if goal is None or goal.kind is not GoalKind.DIAGNOSE:
        raise AgentError("Diagnose goal is not active")
    sub = agent.profile.subsystem(goal.target)
    path = data_path(agent.graph, sub.source, sub.sink)
    for fb in path:
        if agent.graph.nodes[fb].type_name not in packages:
            raise MissingPackage(agent.graph.nodes[fb].type_name)
    for dp_id in isolation_gates(agent, path):
        agent.gate_close(dp_id)
    results = []
    # every block on the path is tested, even after a failure
    for fb in path:
        for test in packages[agent.graph.nodes[fb].type_name].tests:
            result = run_test(agent, rt, fb, test)
            results.append(result)
            if result.outcome is not Outcome.INCONCLUSIVE:
                update_veracity(agent.beliefs, fb, result.fault_code or FaultCode.F0_NONE,
                                result.outcome, rt.now)
    agent.outcomes.extend(results)
    agent.finish(GoalStatus.ACHIEVED)
    return results


def _event_matches(dp, name: str) -> bool:
    return any(name in (c.source.port, c.destination.port) for c in dp.connections)


def run_test(agent: Agent, rt: Runtime, subject: str, test: TestCase) -> TestOutcome:
    agent.drain()
    start = rt.now
    if test.inject_at is not None:
        dp = agent.harness[test.inject_at]
        value = None
        if test.inject_value is not None and dp.data_type is not None:
            value = parse_literal(dp.data_type, test.inject_value)
        agent.trigger(test.inject_at, value, test.fire_event, start)
    exp = test.expectation
    rt.run_until(start + exp.window_ms)
    expect_dp = agent.harness[test.expect_at]
    seen = [e for e in agent.read(test.expect_at) if not e.injected]
    observed = ",".join(format_value(e.payload) or str(e.port) for e in seen) or "-"

    outcome, code = Outcome.PASS, None
    if isinstance(exp, ValueExpectation):
        values = [e.payload for e in seen if e.payload is not None]
        expected = parse_literal(expect_dp.data_type, exp.expected)
        if not values:
            outcome, code = Outcome.FAIL, FaultCode.F2_NO_RESPONSE
        elif abs(values[0] - expected) > exp.tolerance:
            outcome, code = Outcome.FAIL, FaultCode.F1_ALGORITHM
    elif isinstance(exp, EventExpectation):
        hit = bool(seen) and _event_matches(expect_dp, exp.port)
        if test.inject_at is None:
            # an observation cannot verify an uncontrolled input, only refute liveness
            outcome = Outcome.INCONCLUSIVE if hit else Outcome.FAIL
            code = None if hit else FaultCode.F2_NO_RESPONSE
        elif not hit:
            outcome, code = Outcome.FAIL, FaultCode.F5_EVENT_PATH_BROKEN
            for edge in agent.graph.edges:
                if any(edge.fb1 == c.source.instance and edge.name == c.source.port
                       for c in expect_dp.connections if c == expect_dp.event_conn):
                    edge.veracity = Veracity.FALSE
    elif isinstance(exp, NoOutputExpectation):
        if seen:
            outcome, code = Outcome.FAIL, FaultCode.F1_ALGORITHM
    return TestOutcome(subject, test.name, outcome, code, observed, rt.now)


# -- Analyse / Report ---------------------------------------------------------------------


def undetermined_code(agent: Agent, subject: str) -> FaultCode:
    """Untestable sources stand for a physical sensor; anything else has no hypothesis."""
    node = agent.graph.nodes[subject]
    return FaultCode.F4_SENSOR_SUSPECTED if not node.event_inputs else FaultCode.F0_NONE


def analyse(agent: Agent) -> list[DiagnosisEntry]:
    entries = []
    for belief in agent.beliefs:
        if belief.veracity is Veracity.FALSE:
            entries.append(DiagnosisEntry(belief.subject, belief.fault_code, Classification.HARD))
        elif belief.veracity is Veracity.UNDETERMINED:
            entries.append(DiagnosisEntry(belief.subject, undetermined_code(agent, belief.subject),
                                          Classification.POSSIBLE))
    agent.diagnosis = entries
    return entries


@dataclass
class SessionReport:
    session_id: int
    seed: int
    beliefs: list[dict]
    primary_beliefs: list[dict]
    broken_transitions: list[dict]
    violations: list[dict]
    outcomes: list[dict]
    diagnosis: list[dict]
    goal_log: list[dict]
    transitions: list[dict]
    end_time_ms: int

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": "session", **self.__dict__}

    @classmethod
    def from_dict(cls, data: dict) -> SessionReport:
        fields = {k: v for k, v in data.items() if k not in ("format_version", "kind")}
        return cls(**fields)

    def veracity(self, subject: str) -> Veracity:
        for b in self.beliefs:
            if b["subject"] == subject:
                return Veracity(b["veracity"])
        raise KeyError(subject)


def report(agent: Agent, session_id: int = 0, seed: int = 0) -> SessionReport:
    if agent.diagnosis is None:
        analyse(agent)
    transitions = [{"store": store.name, "time_ms": t.time, "subject": t.subject,
                    "from": t.before.value, "to": t.after.value}
                   for store in (agent.primary, agent.beliefs) for t in store.transitions]
    return SessionReport(
        session_id=session_id,
        seed=seed,
        beliefs=agent.beliefs.snapshot(),
        primary_beliefs=agent.primary.snapshot(),
        broken_transitions=[{"fb1": e.fb1, "trigger": e.name, "fb2": e.fb2}
                            for e in agent.graph.edges if e.veracity is Veracity.FALSE],
        violations=[v.as_record() for v in agent.violations],
        outcomes=[o.as_record() for o in agent.outcomes],
        diagnosis=[{"subject": d.subject, "fault_code": d.fault_code.value,
                    "classification": d.classification.value} for d in agent.diagnosis],
        goal_log=[{"time_ms": r.time, "agent": r.agent, "goal": r.goal, "status": r.status.value}
                  for r in agent.goal_log],
        transitions=transitions,
        end_time_ms=agent.now,
    )


@dataclass
class SubjectVerdict:
    classification: Classification
    fault_code: FaultCode
    sessions_failed: int
    sessions_run: int
    pass_total: int
    fail_total: int

    def as_record(self) -> dict:
        return {"classification": self.classification.value, "fault_code": self.fault_code.value,
                "sessions_failed": self.sessions_failed, "sessions_run": self.sessions_run,
                "pass_total": self.pass_total, "fail_total": self.fail_total}


SEVERITY = [Classification.HARD, Classification.INTERMITTENT, Classification.POSSIBLE,
            Classification.CLEAR]


@dataclass
class ConsolidatedDiagnosis:
    subjects: dict[str, SubjectVerdict]
    seeds: list[int] = field(default_factory=list)

    @property
    def all_clear(self) -> bool:
        return all(v.classification is Classification.CLEAR for v in self.subjects.values())

    def faults(self) -> list[tuple[str, SubjectVerdict]]:
        return [(s, v) for s, v in self.ordered() if v.classification is not Classification.CLEAR]

    def ordered(self) -> list[tuple[str, SubjectVerdict]]:
        return sorted(self.subjects.items(), key=lambda kv: (SEVERITY.index(kv[1].classification), kv[0]))

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": "consolidated",
                "sessions": len(self.seeds), "seeds": list(self.seeds),
                "subjects": {s: v.as_record() for s, v in sorted(self.subjects.items())}}

    @classmethod
    def from_dict(cls, data: dict) -> ConsolidatedDiagnosis:
        if data.get("kind") != "consolidated" or data.get("format_version") != FORMAT_VERSION:
            raise ValueError("not a consolidated diagnosis report")
        subjects = {}
        for name, rec in data["subjects"].items():
            subjects[name] = SubjectVerdict(Classification(rec["classification"]),
                                            FaultCode(rec["fault_code"]), int(rec["sessions_failed"]),
                                            int(rec["sessions_run"]), int(rec["pass_total"]),
                                            int(rec["fail_total"]))
        return cls(subjects, list(data["seeds"]))


def correlate(reports: list[SessionReport]) -> ConsolidatedDiagnosis:
    """Hard if False in every session, Intermittent if in some, Possible if ever unverified."""
    if not reports:
        raise EmptyReportList()
    per_subject: dict[str, list[tuple[dict, dict | None]]] = {}
    for rep in reports:
        diag = {d["subject"]: d for d in rep.diagnosis}
        for b in rep.beliefs:
            per_subject.setdefault(b["subject"], []).append((b, diag.get(b["subject"])))
    subjects = {}
    for name, rows in per_subject.items():
        veracities = [Veracity(b["veracity"]) for b, _ in rows]
        failed = veracities.count(Veracity.FALSE)
        if failed == len(rows):
            cls = Classification.HARD
        elif failed:
            cls = Classification.INTERMITTENT
        elif all(v is Veracity.TRUE for v in veracities):
            cls = Classification.CLEAR
        else:
            cls = Classification.POSSIBLE
        if failed:
            codes = Counter(b["fault_code"] for b, _ in rows if b["veracity"] == Veracity.FALSE.value)
            order = [c.value for c in FaultCode]
            code = FaultCode(min(codes, key=lambda c: (-codes[c], order.index(c))))
        elif cls is Classification.POSSIBLE:
            code = next((FaultCode(d["fault_code"]) for _, d in rows if d), FaultCode.F0_NONE)
        else:
            code = FaultCode.F0_NONE
        subjects[name] = SubjectVerdict(cls, code, failed, len(rows),
                                        sum(b["pass"] for b, _ in rows),
                                        sum(b["fail"] for b, _ in rows))
    return ConsolidatedDiagnosis(subjects, [r.seed for r in reports])


# -- one complete session -----------------------------------------------------------------


@dataclass
class SessionResult:
    report: SessionReport
    agent: Agent
    coordinator: Agent
    runtime: Runtime


def run_session(app: Application, registry: BehaviorRegistry,
                packages: dict[str, DiagnosticPackage], profile: NormalBehaviorProfile, *,
                seed: int, horizon_ms: int, session_id: int = 0, stimuli=(),
                loop_after_report: bool = False) -> SessionResult:
    """Monitor until a violation or the horizon, then Diagnose, Analyse and Report."""
    rt = instantiate(app, registry, seed)
    for at, port in stimuli:
        rt.inject_event(port, at)
    coordinator = Agent("coordinator")
    team = Team(coordinator)
    agent = team.add(Agent("diagnoser"))
    agent.attach(rt, packages, profile)

    final = None
    while True:
        agent.activate(Goal(GoalKind.MONITOR))
        agent._monitor = None
        violations: list[Violation] = []
        while rt.now < horizon_ms and not violations:
            violations = monitor_step(agent, rt, profile, until=horizon_ms)
        if not violations:
            agent.finish(GoalStatus.ACHIEVED)
            reinforce_monitored(agent)
            agent.diagnosis = None
            final = report(agent, session_id, seed)
            break
        escalate(agent)
        diagnose(agent, rt, packages)
        agent.activate(Goal(GoalKind.ANALYSE))
        analyse(agent)
        agent.finish(GoalStatus.ACHIEVED)
        agent.activate(Goal(GoalKind.REPORT))
        agent.finish(GoalStatus.ACHIEVED)
        final = report(agent, session_id, seed)
        say(agent, coordinator.name, {"kind": "report", "report": final}, rt.now)
        if not loop_after_report or rt.now >= horizon_ms:
            break
        for dp_id in agent.harness.dps:
            agent.gate_open(dp_id)
        agent.drain()
    return SessionResult(final, agent, coordinator, rt)
