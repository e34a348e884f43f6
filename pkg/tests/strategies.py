"""Hypothesis strategies for well-formed function block networks."""

from hypothesis import strategies as st

from fbdiag.fbnetwork import Application, Connection, ConnectionKind, DataType, FbInstance, FbType, PortKind, PortRef

DTYPES = list(DataType)
names = st.from_regex(r"[A-Z][A-Z0-9_]{0,6}", fullmatch=True)


@st.composite
def fb_types(draw, name):
    ports = draw(st.lists(names, min_size=2, max_size=8, unique=True))
    split = sorted(draw(st.lists(st.integers(0, len(ports)), min_size=3, max_size=3)))
    ei, eo, di, do = (ports[:split[0]], ports[split[0]:split[1]],
                      ports[split[1]:split[2]], ports[split[2]:])
    return FbType(name, "noop", tuple(ei), tuple(eo),
                  tuple((p, draw(st.sampled_from(DTYPES))) for p in di),
                  tuple((p, draw(st.sampled_from(DTYPES))) for p in do))


@st.composite
def networks(draw):
    type_names = draw(st.lists(names, min_size=1, max_size=3, unique=True))
    library = {n: draw(fb_types(n)) for n in type_names}
    inst_names = draw(st.lists(names, min_size=1, max_size=5, unique=True))
    instances = tuple(FbInstance(n, draw(st.sampled_from(type_names))) for n in inst_names)
    outs, ins = [], []
    for inst in instances:
        fbt = library[inst.type_name]
        outs += [(PortRef(inst.name, p, PortKind.EVENT_OUTPUT), None) for p in fbt.event_outputs]
        outs += [(PortRef(inst.name, p, PortKind.DATA_OUTPUT), t) for p, t in fbt.data_outputs]
        ins += [(PortRef(inst.name, p, PortKind.EVENT_INPUT), None) for p in fbt.event_inputs]
        ins += [(PortRef(inst.name, p, PortKind.DATA_INPUT), t) for p, t in fbt.data_inputs]
    conns = []
    for dst, dtype in ins:
        candidates = [s for s, t in outs if s.kind.is_event == dst.kind.is_event and t == dtype]
        if candidates and draw(st.booleans()):
            src = draw(st.sampled_from(candidates))
            kind = ConnectionKind.EVENT if dst.kind.is_event else ConnectionKind.DATA
            conns.append(Connection(src, dst, kind))
    conns.sort(key=lambda c: c.kind is ConnectionKind.DATA)  # serializer order
    return Application("GEN", instances, tuple(conns), library)
