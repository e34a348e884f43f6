import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbdiag.fbnetwork import PortKind, PortRef, ValidationError
from fbdiag.harness import (
    AlreadyInstrumented,
    EmptyPackage,
    EventExpectation,
    Gate,
    UndeclaredDP,
    UnknownConnection,
    ValueExpectation,
    check_package,
    format_captures,
    gate_close,
    gate_open,
    install_harness,
    load_package,
    read,
    resolve_plan,
    rewire,
    trigger,
)
from fbdiag.runtime import TypeMismatchError, format_trace, instantiate


def switch(port):
    return PortRef("Z_SWITCHES", port, PortKind.EVENT_OUTPUT)


def run(app, registry, seed, schedule, horizon, packages=None):
    rt = instantiate(app, registry, seed)
    h = install_harness(rt, packages) if packages else None
    for at, port in schedule:
        rt.inject_event(port, at)
    rt.run_until(horizon)
    return rt, h


def test_plan_resolves_seven_dps(app, packages):
    plan = resolve_plan(app, packages)
    assert sorted(plan) == [1, 2, 3, 4, 5, 6, 7]
    data, event = plan[1]
    assert str(data) == "Z_TEMPERATURE.TEMP->F_TO_C_CONV.F"
    assert str(event) == "Z_TEMPERATURE.TEMP_CHANGED->F_TO_C_CONV.CONV"
    assert plan[3][0] is None and str(plan[3][1]) == "F_TO_C_CONV.ERROR->Z_CONTROLLER.TEMP_ERROR"


def test_single_dp_leaves_trace_unchanged(app, registry):
    plain, _ = run(app, registry, 3, [], 5000)
    rt = instantiate(app, registry, 3)
    conn = next(c for c in app.connections if str(c) == "Z_TEMPERATURE.TEMP->F_TO_C_CONV.F")
    dp = rewire(rt, conn, 1)
    rt.run_until(5000)
    assert format_trace(rt.trace) == format_trace(plain.trace)
    assert len(dp.capture_log) == 10
    with pytest.raises(AlreadyInstrumented):
        rewire(rt, conn, 9)


def test_unknown_connection(app, registry):
    other, _ = run(app, registry, 0, [], 0)
    conn = app.connections[0]
    rt = instantiate(app, registry, 0)
    from dataclasses import replace
    bogus = replace(conn, destination=replace(conn.destination, instance="ELSEWHERE"))
    with pytest.raises(UnknownConnection):
        rewire(rt, bogus, 1)


def test_full_harness_two_seconds(app, registry, packages):
    rt, h = run(app, registry, 0, [], 2000, packages)
    assert len(list(h)) == 7
    first = read(h[1])
    assert [e.time for e in first] == [500, 1000, 1500, 2000]
    assert all(e.payload == 72.0 for e in first)
    assert read(h[1]) == []


def test_gating_switches_isolates_controller(app, registry, packages):
    rt = instantiate(app, registry, 0)
    h = install_harness(rt, packages)
    gate_close(h[4])
    gate_close(h[5])
    rt.inject_event(switch("CMD_UP"), 100)
    rt.inject_event(switch("CMD_DOWN"), 200)
    rt.run_until(300)
    assert not [e for e in rt.trace if e.port.instance == "Z_CONTROLLER"]
    assert [e.time for e in read(h[4])] == [100]  # capture continues while blocked
    gate_open(h[4])
    rt.inject_event(switch("CMD_UP"), 400)
    rt.run_until(400)
    arrivals = [e.time for e in rt.trace if e.port == PortRef("Z_CONTROLLER", "CMD_UP", PortKind.EVENT_INPUT)]
    assert arrivals == [400]  # the earlier drop is not replayed


def test_gating_outputs_blocks_hvac(app, registry, packages):
    rt = instantiate(app, registry, 0)
    h = install_harness(rt, packages)
    gate_close(h[6])
    gate_close(h[7])
    rt.inject_event(switch("CMD_UP"), 100)
    rt.run_until(3000)
    assert not [e for e in rt.trace if e.port.instance == "HVAC_MAIN_STUB"]
    assert len(read(h[6])) == 6 and len(read(h[7])) == 1


def test_trigger_freezing_point(app, registry, packages):
    rt = instantiate(app, registry, 0)
    h = install_harness(rt, packages)
    gate_close(h[1])
    trigger(h[1], 32.0, True, 50)
    rt.run_until(100)
    (entry,) = [e for e in read(h[2]) if not e.injected]
    assert entry.payload == 0.0 and entry.time == 50
    injected = read(h[1])
    assert [e.injected for e in injected] == [True]
    assert "I" in format_captures(injected)


def test_trigger_absolute_zero_raises_error(app, registry, packages):
    rt = instantiate(app, registry, 0)
    h = install_harness(rt, packages)
    gate_close(h[1])
    trigger(h[1], -459.67, True, 50)
    rt.run_until(100)
    assert [e.time for e in read(h[3])] == [50]
    assert read(h[2]) == []


def test_trigger_type_mismatch(app, registry, packages):
    rt = instantiate(app, registry, 0)
    h = install_harness(rt, packages)
    with pytest.raises(TypeMismatchError):
        trigger(h[1], "hot", True, 0)
    with pytest.raises(TypeMismatchError):
        trigger(h[4], 1.0, True, 0)


@given(st.sampled_from([1, 2, 6]), st.floats(-400, 400), st.booleans())
@settings(max_examples=20, deadline=None)
def test_trigger_ignores_gate(app, registry, packages, dp_id, value, closed):
    rt = instantiate(app, registry, 0)
    h = install_harness(rt, packages)
    if closed:
        gate_close(h[dp_id])
    dp = h[dp_id]
    trigger(dp, value, True, 10)
    rt.run_until(10)
    dest = dp.data_conn.destination
    latched = [e.payload for e in rt.trace if e.port == dest]
    assert latched[0] == value


schedule = st.lists(st.tuples(st.integers(0, 30_000), st.sampled_from(["CMD_UP", "CMD_DOWN"])),
                    max_size=6)


@given(st.integers(0, 2**31), schedule)
@settings(max_examples=20, deadline=None)
def test_transparency(app, registry, packages, seed, sched):
    stim = [(t, switch(p)) for t, p in sched]
    plain, _ = run(app, registry, seed, stim, 30_000)
    wired, h = run(app, registry, seed, stim, 30_000, packages)
    assert format_trace(wired.trace) == format_trace(plain.trace)
    assert all(g.gate is Gate.OPEN for g in h)


@given(st.integers(0, 2**31), schedule)
@settings(max_examples=15, deadline=None)
def test_capture_completeness(app, registry, packages, seed, sched):
    stim = [(t, switch(p)) for t, p in sched]
    rt, h = run(app, registry, seed, stim, 30_000, packages)
    for dp in h:
        crossing = dp.event_conn or dp.data_conn
        arrivals = [e for e in rt.trace if e.port == crossing.destination]
        assert len(dp.capture_log) == len(arrivals)
        if dp.data_conn is not None:
            # the latch recorded right after each paired arrival
            latched, armed = [], dp.event_conn is None
            for e in rt.trace:
                if dp.event_conn is not None and e.port == dp.event_conn.destination:
                    armed = True
                elif armed and e.port == dp.data_conn.destination:
                    latched.append(e.payload)
                    armed = dp.event_conn is None
            assert [e.payload for e in dp.capture_log] == latched


@given(st.integers(0, 2**31), st.sampled_from([1, 2, 4, 6]))
@settings(max_examples=15, deadline=None)
def test_closed_gate_isolates_downstream(app, registry, packages, seed, dp_id):
    rt = instantiate(app, registry, seed)
    h = install_harness(rt, packages)
    gate_close(h[dp_id])
    rt.inject_event(switch("CMD_UP"), 250)
    rt.run_until(5000)
    dest = h[dp_id].connections[0].destination
    assert not [e for e in rt.trace if e.port == dest]


PKG = """<DiagnosticPackage FBType="F_TO_C_CONV">
  <DP Id="1" Port="F" Event="CONV"/>
  <DP Id="2" Port="C" Event="CNF"/>
  {tests}
</DiagnosticPackage>"""


def test_shipped_converter_package(packages):
    pkg = packages["F_TO_C_CONV"]
    values = {t.inject_value for t in pkg.tests}
    assert {"32.0", "212.0", "98.6", "75.0", "-459.67"} <= values
    errors = [t for t in pkg.tests if isinstance(t.expectation, EventExpectation)]
    assert errors and errors[0].expectation.port == "ERROR" and errors[0].expect_at == 3
    nominal = [t for t in pkg.tests if isinstance(t.expectation, ValueExpectation)]
    assert all(t.expectation.tolerance == 1e-9 for t in nominal)
    assert check_package(pkg) == []


def test_undeclared_dp():
    text = PKG.format(tests='<Test Name="t" Inject="1" Value="1" Expect="9" Expected="1"/>')
    with pytest.raises(ValidationError) as info:
        load_package(text)
    assert any(isinstance(i, UndeclaredDP) for i in info.value.issues)


def test_empty_package():
    with pytest.raises(ValidationError) as info:
        load_package(PKG.format(tests=""))
    assert any(isinstance(i, EmptyPackage) for i in info.value.issues)
