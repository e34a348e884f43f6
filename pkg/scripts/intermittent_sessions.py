"""Repeat diagnosis sessions against the intermittent converter fault and correlate them."""

import argparse

from fbdiag.agent import correlate, run_session
from fbdiag.cli import summarize
from fbdiag.scenarios import (
    AlgorithmRandomInRange,
    FaultScenario,
    apply_fault,
    build_room_controller,
    room_controller_profile,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--sessions", type=int, default=10)
    parser.add_argument("--probability", type=float, default=0.5)
    parser.add_argument("--horizon-ms", type=int, default=600_000)
    args = parser.parse_args()

    app, registry, packages = build_room_controller()
    fault = FaultScenario("intermittent", "F_TO_C_CONV", AlgorithmRandomInRange(70, 80, args.probability))
    broken = apply_fault(registry, fault, app)
    reports = []
    for i in range(args.sessions):
        seed = args.seed + i
        rep = run_session(app, broken, packages, room_controller_profile(), seed=seed,
                          horizon_ms=args.horizon_ms, session_id=i).report
        reports.append(rep)
        probe = next(o for o in rep.outcomes if o["test"] == "room")
        print(f"seed {seed:>4}: escalated at {rep.violations[0]['time_ms']:>6} ms, "
              f"75F probe {probe['outcome']:<4} observed {probe['observed']:<12} "
              f"F_TO_C_CONV {rep.veracity('F_TO_C_CONV').value}")
    print()
    print(summarize(correlate(reports)), end="")


if __name__ == "__main__":
    main()
