"""Compare instrumented and plain traces over random seeds and switch schedules."""

import argparse
import random
import time

from fbdiag.fbnetwork import PortKind, PortRef
from fbdiag.harness import install_harness
from fbdiag.runtime import format_trace, instantiate
from fbdiag.scenarios import build_room_controller


def trace(app, registry, packages, seed, schedule, horizon):
    rt = instantiate(app, registry, seed)
    if packages:
        install_harness(rt, packages)
    for at, port in schedule:
        rt.inject_event(port, at)
    rt.run_until(horizon)
    return format_trace(rt.trace)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--schedules", type=int, default=5)
    parser.add_argument("--horizon-ms", type=int, default=60_000)
    parser.add_argument("--rng", type=int, default=61499, help="seed for drawing seeds and schedules")
    args = parser.parse_args()

    app, registry, packages = build_room_controller()
    rng = random.Random(args.rng)
    seeds = [rng.randrange(2**32) for _ in range(args.seeds)]
    schedules = [sorted((rng.randrange(args.horizon_ms),
                         PortRef("Z_SWITCHES", rng.choice(["CMD_UP", "CMD_DOWN"]), PortKind.EVENT_OUTPUT))
                        for _ in range(rng.randint(1, 12))) for _ in range(args.schedules)]
    start = time.perf_counter()
    same = total = 0
    for seed in seeds:
        for sched in schedules:
            total += 1
            same += trace(app, registry, None, seed, sched, args.horizon_ms) == \
                trace(app, registry, packages, seed, sched, args.horizon_ms)
    elapsed = time.perf_counter() - start
    print(f"{same}/{total} instrumented traces byte-identical ({elapsed:.2f} s)")
    return 0 if same == total else 1


if __name__ == "__main__":
    raise SystemExit(main())
