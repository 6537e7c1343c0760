"""Mean position error and escape versus feedback latency, per compensation mode.

Writes ``latency,mode,mean_abs_error,escaped,escape_time`` rows to stdout or
``-o``.  The learned mode trains on a small simulated campaign first.
"""

import argparse
import csv
import sys
from dataclasses import replace

from driftlab.control import LoopConfig, NoCompensation, OracleFeedforward, SvrFeedforward, run_closed_loop
from driftlab.flightsim import SimConfig, WindConfig, campaign, simulate
from driftlab.svr import train
from driftlab.telemetry import clean, concat_datasets, derive_velocities


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--duration", type=float, default=60.0)
    ap.add_argument("--max-latency", type=float, default=1.5)
    ap.add_argument("--wind", type=float, nargs=2, default=(20.0, 10.0))
    ap.add_argument("-o", "--output", default=None)
    args = ap.parse_args()

    runs = campaign(args.seed, duration=60.0)
    pair = train(concat_datasets([derive_velocities(clean(simulate(c).log)) for c, _ in runs]))
    sim = SimConfig(seed=args.seed, duration=args.duration, wind=WindConfig(mean=tuple(args.wind), fluctuation=0.0))
    modes = {"off": NoCompensation(), "oracle": OracleFeedforward(), "svr": SvrFeedforward(pair)}

    out = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["latency", "mode", "mean_abs_error", "escaped", "escape_time"])
    for d in range(int(round(args.max_latency * sim.rate)) + 1):
        lat = d / sim.rate
        for name, comp in modes.items():
            tr = run_closed_loop(sim, replace(LoopConfig(compensation=comp), latency=lat))
            w.writerow([f"{lat:.4f}", name, f"{tr.mean_abs_error:.6g}", int(tr.escaped),
                        "" if tr.escape_time is None else f"{tr.escape_time:.4f}"])
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
