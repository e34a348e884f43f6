"""``fbdiag run`` and ``fbdiag explain``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .agent import (
    Classification,
    ConsolidatedDiagnosis,
    correlate,
    format_goal_log,
    run_session,
)
from .fbnetwork import ParseError, PortRef, ValidationError, parse_application
from .harness import check_package
from .runtime import SimulationError, format_trace
from .scenarios import (
    DEFAULT_AMBIENT,
    FaultScenario,
    apply_fault,
    build_room_controller,
    builtin_scenarios,
    load_packages,
    load_scenario,
    load_types,
    room_controller_profile,
    room_controller_registry,
)

EXIT_CLEAR, EXIT_FAULTS, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


@dataclass
class SessionConfig:
    out: Path
    app: Path | None = None
    types: Path | None = None
    packages: Path | None = None
    scenario: str | None = None
    overrides: dict[str, str] = field(default_factory=dict)
    sessions: int = 1
    horizon_ms: int = 600_000
    seed: int = 0
    loop_after_report: bool = False
    parallel: int = 1
    stimuli: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        if self.sessions < 1:
            raise ConfigError("--sessions must be at least 1")
        if self.horizon_ms <= 0:
            raise ConfigError("--horizon-ms must be positive")
        if self.parallel < 1:
            raise ConfigError("--parallel must be at least 1")


def _dump(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _scenario(cfg: SessionConfig) -> FaultScenario | None:
    if cfg.scenario is None:
        if cfg.overrides:
            raise ConfigError("--set needs --scenario")
        return None
    if cfg.scenario.endswith(".xml"):
        scn = load_scenario(Path(cfg.scenario).read_text(encoding="utf-8"))
    else:
        known = builtin_scenarios()
        if cfg.scenario not in known:
            raise ConfigError(f"unknown scenario {cfg.scenario!r}; known: {', '.join(sorted(known))}")
        scn = known[cfg.scenario]
    if cfg.overrides:
        names = {f.name for f in dataclasses.fields(scn.kind)}
        changes = {}
        for key, text in cfg.overrides.items():
            if key not in names:
                raise ConfigError(f"{type(scn.kind).__name__} has no field {key!r}")
            current = getattr(scn.kind, key)
            conv = type(current) if current is not None else str
            try:
                changes[key] = conv(text)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {text!r}") from None
        try:
            scn = dataclasses.replace(scn, kind=dataclasses.replace(scn.kind, **changes))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return scn


def _load(cfg: SessionConfig):
    app, registry, packages = build_room_controller()
    if cfg.app or cfg.types or cfg.packages:
        if not (cfg.app and cfg.types and cfg.packages):
            raise ConfigError("--app, --types and --packages go together")
        types = load_types(cfg.types)
        app = parse_application(cfg.app.read_text(encoding="utf-8"), types)
        packages = load_packages(cfg.packages)
        registry = room_controller_registry(DEFAULT_AMBIENT)
    issues = [i for pkg in packages.values() for i in check_package(pkg)]
    if issues:
        raise ValidationError(issues)
    scn = _scenario(cfg)
    if scn is not None:
        registry = apply_fault(registry, scn, app)
    stimuli = []
    for at, text in cfg.stimuli:
        inst, _, port = text.partition(".")
        try:
            kind = app.type_of(inst).port_kind(port)
        except KeyError:
            kind = None
        if kind is None:
            raise ConfigError(f"unknown stimulus port {text!r}")
        stimuli.append((at, PortRef(inst, port, kind)))
    return app, registry, packages, stimuli


def run(cfg: SessionConfig) -> int:
    app, registry, packages, stimuli = _load(cfg)
    profile = room_controller_profile()

    def one(index: int):
        return run_session(app, registry, packages, profile, seed=cfg.seed + index,
                           horizon_ms=cfg.horizon_ms, session_id=index, stimuli=stimuli,
                           loop_after_report=cfg.loop_after_report)

    if cfg.parallel > 1:
        with ThreadPoolExecutor(cfg.parallel) as pool:
            results = list(pool.map(one, range(cfg.sessions)))
    else:
        results = [one(i) for i in range(cfg.sessions)]

    cfg.out.mkdir(parents=True, exist_ok=True)
    for i, res in enumerate(results):
        stem = cfg.out / f"session-{i:03d}"
        stem.with_suffix(".json").write_text(_dump(res.report.to_dict()), encoding="utf-8")
        Path(f"{stem}.goals.tsv").write_text(format_goal_log(res.agent.goal_log), encoding="utf-8")
        Path(f"{stem}.trace.tsv").write_text(format_trace(res.runtime.trace), encoding="utf-8")
    consolidated = correlate([r.report for r in results])
    (cfg.out / "consolidated.json").write_text(_dump(consolidated.to_dict()), encoding="utf-8")
    print(summarize(consolidated), end="")
    return EXIT_CLEAR if consolidated.all_clear else EXIT_FAULTS


def summarize(diag: ConsolidatedDiagnosis) -> str:
    lines = []
    if not diag.faults():
        lines.append(f"all clear ({len(diag.seeds)} session(s))")
    for subject, v in diag.ordered():
        code = "" if v.classification is Classification.CLEAR else f" {v.fault_code.value}"
        lines.append(f"{v.classification.value:<12} {subject:<16} failed {v.sessions_failed}/"
                     f"{v.sessions_run}  pass {v.pass_total}  fail {v.fail_total}{code}")
    return "\n".join(lines) + "\n"


def explain(path: Path) -> int:
    try:
        diag = ConsolidatedDiagnosis.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: cannot read report {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(summarize(diag), end="")
    return EXIT_CLEAR


def _stimulus(text: str) -> tuple[int, str]:
    at, sep, port = text.partition(":")
    if not sep or "." not in port:
        raise argparse.ArgumentTypeError("expected TIME_MS:INSTANCE.PORT")
    try:
        return int(at), port
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad time {at!r}") from None


def _assignment(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError("expected FIELD=VALUE")
    return key, value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbdiag", description="Agent-based fault diagnosis "
                                     "for event-driven function block applications.")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run monitor/diagnose sessions")
    r.add_argument("--app", type=Path, help="application XML (default: built-in room controller)")
    r.add_argument("--types", type=Path, help="directory of *.fbt.xml")
    r.add_argument("--packages", type=Path, help="directory of *.dpkg.xml")
    r.add_argument("--scenario", help="built-in scenario name or a .scn.xml file")
    r.add_argument("--set", dest="overrides", type=_assignment, action="append", default=[],
                   metavar="FIELD=VALUE", help="override a fault parameter, e.g. probability=0.3")
    r.add_argument("--sessions", type=int, default=1)
    r.add_argument("--horizon-ms", type=int, default=600_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", type=Path, default=Path("fbdiag-out"))
    r.add_argument("--loop-after-report", action="store_true",
                   help="resume monitoring after each report until the horizon")
    r.add_argument("--parallel", type=int, default=1, metavar="N")
    r.add_argument("--stimulus", type=_stimulus, action="append", default=[],
                   metavar="TIME_MS:INSTANCE.PORT", help="inject an event, e.g. 5000:Z_SWITCHES.CMD_UP")

    e = sub.add_parser("explain", help="summarize a consolidated report")
    e.add_argument("report", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "explain":
        return explain(args.report)
    try:
        cfg = SessionConfig(out=args.out, app=args.app, types=args.types, packages=args.packages,
                            scenario=args.scenario, overrides=dict(args.overrides),
                            sessions=args.sessions, horizon_ms=args.horizon_ms, seed=args.seed,
                            loop_after_report=args.loop_after_report, parallel=args.parallel,
                            stimuli=tuple(args.stimulus))
        return run(cfg)
    except ValidationError as exc:
        for issue in exc.issues:
            print(f"error: {issue}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, SimulationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
