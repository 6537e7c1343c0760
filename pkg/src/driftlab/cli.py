"""``driftlab`` command-line entry point.

Exit codes: 0 success, 1 domain error (one line on stderr), 2 usage error.
Every subcommand accepts ``--config FILE`` holding ``key = value`` lines whose
keys are the long option names (dashes or underscores); command-line flags
override the file and the file overrides built-in defaults.  The resolved
configuration is echoed to stderr before the command runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import control, evalreport, flightsim, normdiag, svr, telemetry
from .errors import DriftLabError, InsufficientRuns

log = logging.getLogger("driftlab")


class UsageError(Exception):
    pass


def _floats(text: str, n: int) -> tuple[float, ...]:
    parts = [float(s) for s in text.split(",")]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return tuple(parts)


def _pair(text: str) -> tuple[float, float]:
    return _floats(text, 2)


def _split(text: str) -> evalreport.SplitPolicy:
    try:
        return evalreport.parse_split(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_clean_flags(p):
    p.add_argument("--stale-threshold", type=float, default=telemetry.DEFAULT_STALE_THRESHOLD,
                   help="drop frames whose wii_age exceeds this many seconds")
    p.add_argument("--staleness-max", type=float, default=telemetry.DEFAULT_STALENESS_MAX,
                   help="drop frames whose wii_staleness exceeds this count")


def _add_train_flags(p):
    p.add_argument("--kernel", choices=("linear", "rbf"), default="rbf")
    p.add_argument("--gamma", type=float, default=None, help="RBF gamma (default 1/feature-dim)")
    p.add_argument("-C", dest="C", type=float, default=svr.DEFAULT_C)
    p.add_argument("--epsilon", type=float, default=svr.DEFAULT_EPSILON, help="tube half-width, px/s")
    p.add_argument("--tol", type=float, default=svr.DEFAULT_TOL, help="KKT tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftlab", description="MAV drift-prediction laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path, default=None, help="key = value overlay file")
        return p

    p = cmd("simulate", "generate a synthetic telemetry log")
    p.add_argument("--preset", choices=("paper-mix",), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=120.0)
    p.add_argument("--rate", type=float, default=15.0)
    p.add_argument("--regime-mix", type=lambda s: _floats(s, 3), default=(1.0, 0.0, 0.0),
                   help="hover,directional,gust fractions")
    p.add_argument("--wind", type=_pair, default=flightsim.WindConfig().mean, help="mean wind x,y (px/s^2)")
    p.add_argument("--gust-amplitude", type=float, default=flightsim.WindConfig().gust_amplitude)
    p.add_argument("--gust-period", type=float, default=flightsim.WindConfig().gust_period)
    p.add_argument("--dup-prob", type=float, default=0.0)
    p.add_argument("--stale-prob", type=float, default=0.0)
    p.add_argument("--noise-free", action="store_true", help="disable sensor and tracker noise")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--truth", type=Path, default=None, help="sidecar truth CSV (default: <output>.truth.csv)")

    p = cmd("clean", "remove duplicate and stale records")
    p.add_argument("-i", "--input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    _add_clean_flags(p)

    p = cmd("train", "train the per-axis SVR pair")
    p.add_argument("-i", "--input", type=Path, action="append", help="log file (repeatable, one per run)")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--split", type=_split, default=None, help="train only on the training part")
    _add_train_flags(p)
    _add_clean_flags(p)

    p = cmd("predict", "predict drift velocity for every record of a log")
    p.add_argument("-m", "--model", type=Path)
    p.add_argument("-i", "--input", type=Path)
    p.add_argument("-o", "--output", type=Path, default=None, help="CSV path (default stdout)")

    p = cmd("eval", "evaluate drift prediction against the no-drift baseline")
    p.add_argument("-m", "--model", type=Path, default=None, help="trained model; omit to train on the split")
    p.add_argument("-i", "--input", type=Path, action="append")
    p.add_argument("--split", type=_split, default=None, help="by-run[=I,J] (0-based) or fraction=F")
    p.add_argument("-o", "--output", type=Path, default=None,
                   help="output prefix: writes PREFIX.json, PREFIX_actual.csv, PREFIX_predicted.csv")
    _add_train_flags(p)
    _add_clean_flags(p)

    p = cmd("loop", "closed-loop PD simulation with optional drift feedforward")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--rate", type=float, default=15.0)
    p.add_argument("--wind", type=_pair, default=(20.0, 10.0), help="constant wind x,y (px/s^2)")
    p.add_argument("--fluctuation", type=float, default=0.0)
    p.add_argument("--latency", type=float, default=0.0, help="seconds, multiple of 1/rate")
    p.add_argument("--compensation", choices=("off", "svr", "oracle"), default="off")
    p.add_argument("-m", "--model", type=Path, default=None, help="SVR model for --compensation svr")
    p.add_argument("--kp", type=float, default=4.0)
    p.add_argument("--kd", type=float, default=2.0)
    p.add_argument("--command-limit", type=float, default=control.PdGains().command_limit)
    p.add_argument("--k-ff", type=float, default=control.DEFAULT_K_FF)
    p.add_argument("--initial-offset", type=_pair, default=(30.0, 0.0))
    p.add_argument("--sweep", type=float, default=None, metavar="MAX",
                   help="also sweep latency up to MAX seconds and report the escape threshold")
    p.add_argument("-o", "--output", type=Path, default=None, help="loop trace CSV")

    p = cmd("spectrum", "singular values before and after normalization")
    p.add_argument("-i", "--input", type=Path, action="append")
    p.add_argument("-o", "--output", type=Path, default=None,
                   help="output prefix: writes PREFIX_raw.csv and PREFIX_normalized.csv")
    _add_clean_flags(p)
    return parser


# ----------------------------------------------------------- config overlay

_META = {"command", "config"}


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _convert(action: argparse.Action, raw: str):
    if isinstance(action, argparse._StoreTrueAction):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"config key {action.dest!r}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    conv = action.type or str
    try:
        if isinstance(action, argparse._AppendAction):
            return [conv(s.strip()) for s in raw.split(";") if s.strip()]
        value = conv(raw.strip())
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise UsageError(f"config key {action.dest!r}: {exc}") from None
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"config key {action.dest!r}: {value!r} not in {sorted(action.choices)}")
    return value


def load_config_file(path: Path, sub: argparse.ArgumentParser) -> dict:
    actions = {}
    for a in sub._actions:
        if a.dest in _META or a.dest == "help":
            continue
        actions[a.dest] = a
        for opt in a.option_strings:
            actions[opt.lstrip("-").replace("-", "_")] = a
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        action = actions.get(key.replace("-", "_"))
        if action is None:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[action.dest] = _convert(action, raw)
    return values


def _show(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_show(x) for x in v)
    if isinstance(v, (evalreport.ByRun, evalreport.ByFraction)):
        return repr(v)
    return str(v)


REQUIRED = {
    "simulate": ("output",), "clean": ("input", "output"), "train": ("input", "output"),
    "predict": ("model", "input"), "eval": ("input",), "loop": (), "spectrum": ("input",),
}


def _explicit_keys(argv: Sequence[str], command: str) -> set[str]:
    """Destinations given on the command line (as opposed to defaults)."""
    parser = build_parser()
    for a in _subparser(parser, command)._actions:
        a.default = argparse.SUPPRESS
    return set(vars(parser.parse_args(argv))) - _META


def _resolve(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = _subparser(parser, args.command)
        try:
            overlay = load_config_file(args.config, sub)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        explicit = _explicit_keys(argv, args.command)
        for key, value in overlay.items():
            if key not in explicit:
                setattr(args, key, value)
    for key in REQUIRED[args.command]:
        if getattr(args, key) is None:
            raise UsageError(f"{args.command}: --{key} is required (flag or config key)")
    return args


def _echo_config(args: argparse.Namespace) -> None:
    lines = [f"# driftlab {args.command}"]
    for k in sorted(vars(args)):
        if k in _META:
            continue
        lines.append(f"{k} = {_show(getattr(args, k))}")
    print("\n".join(lines), file=sys.stderr)


# ---------------------------------------------------------------- commands


def _datasets(paths, args) -> list[telemetry.RegressionDataset]:
    return telemetry.dataset_from_logs(
        (telemetry.read_log(p) for p in paths),
        stale_threshold=args.stale_threshold, staleness_max=args.staleness_max,
    )


def _kernel(args, dim: int) -> svr.KernelSpec:
    if args.kernel == "linear":
        return svr.KernelSpec("linear")
    return svr.KernelSpec("rbf", args.gamma if args.gamma is not None else 1.0 / dim)


def _train(args, ds: telemetry.RegressionDataset) -> svr.SvrPair:
    return svr.train(ds, _kernel(args, ds.features.shape[1]), C=args.C, epsilon=args.epsilon, tol=args.tol)


def cmd_simulate(args) -> None:
    if args.preset == "paper-mix":
        cfg = flightsim.paper_mix_preset(seed=args.seed, rate=args.rate)
    else:
        mix = flightsim.RegimeMix(*args.regime_mix)
        cfg = flightsim.SimConfig(seed=args.seed, duration=args.duration, rate=args.rate, regime_mix=mix)
    cfg = replace(
        cfg,
        wind=replace(cfg.wind, mean=tuple(args.wind), gust_amplitude=args.gust_amplitude,
                     gust_period=args.gust_period),
        network=flightsim.NetworkFaults(args.dup_prob, args.stale_prob),
    )
    if args.noise_free:
        cfg = replace(cfg, sensors=cfg.sensors.without_noise(), tracker_noise=0.0)
    trace = flightsim.simulate(cfg)
    telemetry.save_log(trace.log, args.output)
    truth_path = args.truth or args.output.with_suffix(".truth.csv")
    truth_path.write_text(trace.truth.to_csv())
    log.info("wrote %d records to %s (truth: %s)", len(trace.log), args.output, truth_path)


def cmd_clean(args) -> None:
    raw = telemetry.read_log(args.input)
    out = telemetry.clean(raw, args.stale_threshold, args.staleness_max)
    telemetry.save_log(out, args.output)
    log.info("kept %d of %d records", len(out), len(raw))


def cmd_train(args) -> None:
    runs = _datasets(args.input, args)
    if args.split is not None:
        ds, _ = evalreport.train_test_split(runs, args.split)
    else:
        ds = telemetry.concat_datasets(runs)
    pair = _train(args, ds)
    args.output.write_bytes(svr.save_model(pair))
    log.info("model: %d / %d support vectors", pair.model_x.n_support, pair.model_y.n_support)


def cmd_predict(args) -> None:
    pair = svr.load_model(args.model.read_bytes())
    flight = telemetry.read_log(args.input)
    if len(flight) == 0:
        pred = np.zeros((0, 2))
    else:
        pred = svr.predict_many(pair, np.array([r.onboard for r in flight.records]))
    lines = ["time,vx_hat,vy_hat"]
    for rec, (vx, vy) in zip(flight.records, pred):
        lines.append(f"{rec.time!r},{float(vx)!r},{float(vy)!r}")
    text = "\n".join(lines) + "\n"
    if args.output is None:
        sys.stdout.write(text)
    else:
        args.output.write_text(text)


def cmd_eval(args) -> None:
    runs = _datasets(args.input, args)
    if args.model is None:
        if args.split is None:
            raise InsufficientRuns("eval without --model needs --split to hold out test data")
        train_ds, test = evalreport.train_test_split(runs, args.split)
        pair = _train(args, train_ds)
    else:
        pair = svr.load_model(args.model.read_bytes())
        if args.split is not None:
            _, test = evalreport.train_test_split(runs, args.split)
        else:
            test = telemetry.concat_datasets(runs)
    report = evalreport.evaluate(pair, test)
    sys.stdout.write(report.to_json())
    if args.output is not None:
        prefix = str(args.output)
        Path(prefix + ".json").write_text(report.to_json())
        Path(prefix + "_actual.csv").write_text(report.polyline_csv("actual"))
        Path(prefix + "_predicted.csv").write_text(report.polyline_csv("predicted"))


def cmd_loop(args) -> None:
    sim = flightsim.SimConfig(
        seed=args.seed, duration=args.duration, rate=args.rate,
        wind=flightsim.WindConfig(mean=tuple(args.wind), fluctuation=args.fluctuation),
    )
    if args.compensation == "svr":
        if args.model is None:
            raise UsageError("--compensation svr needs --model")
        comp = control.SvrFeedforward(svr.load_model(args.model.read_bytes()))
    elif args.compensation == "oracle":
        comp = control.OracleFeedforward()
    else:
        comp = control.NoCompensation()
    gains = control.PdGains((args.kp, args.kp), (args.kd, args.kd), args.command_limit)
    loop = control.LoopConfig(gains=gains, latency=args.latency, compensation=comp,
                              initial_offset=tuple(args.initial_offset), k_ff=args.k_ff)
    trace = control.run_closed_loop(sim, loop)
    summary = {
        "mean_abs_error": trace.mean_abs_error,
        "steady_state_error": trace.steady_state_error(),
        "escaped": trace.escaped,
        "escape_time": trace.escape_time,
    }
    if args.sweep is not None:
        summary["instability_latency"] = control.find_instability_threshold(sim, loop, args.sweep)
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.output is not None:
        args.output.write_text(trace.to_csv())


def cmd_spectrum(args) -> None:
    ds = telemetry.concat_datasets(_datasets(args.input, args))
    rep = normdiag.spectrum(ds.features)
    summary = {
        "rows": len(ds),
        "effective_rank_raw": rep.effective_rank_raw,
        "effective_rank_normalized": rep.effective_rank_normalized,
        "note": "raw spectrum is of the uncentered feature matrix",
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.output is not None:
        prefix = str(args.output)
        Path(prefix + "_raw.csv").write_text(rep.to_csv("raw"))
        Path(prefix + "_normalized.csv").write_text(rep.to_csv("normalized"))


COMMANDS = {
    "simulate": cmd_simulate, "clean": cmd_clean, "train": cmd_train, "predict": cmd_predict,
    "eval": cmd_eval, "loop": cmd_loop, "spectrum": cmd_spectrum,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = getattr(logging, os.environ.get("DRIFTLAB_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _resolve(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"driftlab: usage error: {exc}", file=sys.stderr)
        return 2
    _echo_config(args)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"driftlab: usage error: {exc}", file=sys.stderr)
        return 2
    except (DriftLabError, OSError, ValueError) as exc:
        print(f"driftlab: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
