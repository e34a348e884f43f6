"""Inject one deterministic fault per block on the temperature path and tabulate the diagnosis."""

import argparse

from fbdiag.agent import correlate, run_session
from fbdiag.scenarios import apply_fault, build_room_controller, hard_fault_sweep, room_controller_profile


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--horizon-ms", type=int, default=600_000)
    args = parser.parse_args()

    app, registry, packages = build_room_controller()
    profile = room_controller_profile()
    ok = 0
    cases = hard_fault_sweep()
    for case in cases:
        broken = apply_fault(registry, case.scenario, app)
        result = run_session(app, broken, packages, profile, seed=args.seed, horizon_ms=args.horizon_ms)
        diag = correlate([result.report])
        first = result.report.violations[0] if result.report.violations else None
        verdicts = {s: v.classification.value for s, v in diag.subjects.items()}
        expected = {s: "Hard" if s == case.target else
                    "Possible" if s in case.expected_possible else "Clear" for s in verdicts}
        hit = verdicts == expected
        ok += hit
        trigger = f"{first['kind']}@{first['time_ms']}ms" if first else "no violation"
        print(f"{case.scenario.name:<16} target={case.target:<14} {trigger:<28} "
              + " ".join(f"{s}={c}" for s, c in sorted(verdicts.items()))
              + ("" if hit else "  <-- unexpected"))
    print(f"{ok}/{len(cases)} sweep cases isolated correctly")
    return 0 if ok == len(cases) else 1


if __name__ == "__main__":
    raise SystemExit(main())
