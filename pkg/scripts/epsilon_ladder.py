"""Support-vector count, training time and held-out skill across epsilon and C.

Trains on the calm runs plus one windy run of a simulated campaign and scores
on the remaining windy runs.  Output is CSV on stdout.
"""

import argparse
import csv
import sys
import time

from driftlab.evalreport import ByRun, evaluate, split_runs
from driftlab.flightsim import campaign, simulate
from driftlab.svr import train
from driftlab.telemetry import clean, concat_datasets, derive_velocities


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=2010)
    ap.add_argument("--epsilon", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])
    ap.add_argument("-C", type=float, nargs="+", default=[1.0, 10.0, 100.0])
    args = ap.parse_args()

    runs = campaign(args.seed, duration=60.0)
    data = [derive_velocities(clean(simulate(c).log)) for c, _ in runs]
    windy = [k for k, (_, w) in enumerate(runs) if w]
    train_runs, test_runs = split_runs(data, ByRun(tuple(windy[1:])))
    train_ds = concat_datasets(train_runs)
    test_ds = concat_datasets(test_runs)

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["C", "epsilon", "sv_x", "sv_y", "seconds", "skill_x", "skill_y"])
    for C in args.C:
        for eps in args.epsilon:
            t0 = time.perf_counter()
            pair = train(train_ds, C=C, epsilon=eps)
            dt = time.perf_counter() - t0
            rep = evaluate(pair, test_ds)
            w.writerow([C, eps, pair.model_x.n_support, pair.model_y.n_support, f"{dt:.2f}",
                        f"{rep.skill_x:.4f}", f"{rep.skill_y:.4f}"])
            sys.stdout.flush()


if __name__ == "__main__":
    main()
