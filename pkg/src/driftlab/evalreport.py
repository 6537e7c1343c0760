"""Drift-prediction evaluation against the no-drift baseline."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, InsufficientData, InsufficientRuns
from .svr import SvrPair, predict_many
from .telemetry import RegressionDataset, concat_datasets


def rmse(pred: np.ndarray, actual: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(actual)) ** 2)))


def skill(model_rmse: float, null_rmse: float) -> float:
    """1 - rmse/null_rmse, defined as 0 when the baseline error is 0."""
    return 0.0 if null_rmse == 0 else 1.0 - model_rmse / null_rmse


def integrate_trapezoid(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cumulative trapezoidal integral starting from 0 at t[0]."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    steps = 0.5 * (v[1:] + v[:-1]) * np.diff(t)[:, None] if v.ndim == 2 else 0.5 * (v[1:] + v[:-1]) * np.diff(t)
    return np.concatenate([np.zeros((1,) + v.shape[1:]), np.cumsum(steps, axis=0)])


@dataclass(frozen=True, eq=False)
class EvalReport:
    rmse_x: float
    rmse_y: float
    null_rmse_x: float
    null_rmse_y: float
    skill_x: float
    skill_y: float
    times: np.ndarray
    integrated_actual: np.ndarray      # n x 2, px
    integrated_predicted: np.ndarray   # n x 2, px
    predicted: np.ndarray              # n x 2, px/s
    actual: np.ndarray                 # n x 2, px/s

    def summary(self) -> dict:
        return {
            "n": int(self.times.shape[0]),
            "rmse_x": self.rmse_x, "rmse_y": self.rmse_y,
            "null_rmse_x": self.null_rmse_x, "null_rmse_y": self.null_rmse_y,
            "skill_x": self.skill_x, "skill_y": self.skill_y,
            "endpoint_actual": [float(v) for v in self.integrated_actual[-1]],
            "endpoint_predicted": [float(v) for v in self.integrated_predicted[-1]],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def polyline_csv(self, which: str) -> str:
        """``time, px, py`` for ``which`` in {"actual", "predicted"}."""
        pts = {"actual": self.integrated_actual, "predicted": self.integrated_predicted}[which]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "px", "py"])
        for t, (x, y) in zip(self.times, pts):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])
        return buf.getvalue()


def report_from_predictions(times, predicted, actual) -> EvalReport:
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if actual.shape[0] == 0:
        raise EmptyDataset("nothing to evaluate")
    r = [rmse(predicted[:, k], actual[:, k]) for k in range(2)]
    null = [float(np.sqrt(np.mean(actual[:, k] ** 2))) for k in range(2)]
    return EvalReport(
        rmse_x=r[0], rmse_y=r[1], null_rmse_x=null[0], null_rmse_y=null[1],
        skill_x=skill(r[0], null[0]), skill_y=skill(r[1], null[1]),
        times=np.asarray(times, dtype=float),
        integrated_actual=integrate_trapezoid(times, actual),
        integrated_predicted=integrate_trapezoid(times, predicted),
        predicted=predicted, actual=actual,
    )


def evaluate(pair: SvrPair, test: RegressionDataset) -> EvalReport:
    if len(test) == 0:
        raise EmptyDataset("test dataset is empty")
    if test.features.shape[1] != pair.dim:
        raise DimensionMismatch(f"model expects {pair.dim} features, test set has {test.features.shape[1]}")
    return report_from_predictions(test.times, predict_many(pair, test.features), test.targets)


@dataclass(frozen=True)
class ByRun:
    """Hold out whole runs (0-based indices); default is the last run."""

    holdout: tuple[int, ...] = (-1,)


@dataclass(frozen=True)
class ByFraction:
    """Hold out the trailing ``fraction`` of every run (no shuffling)."""

    fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("fraction must lie strictly between 0 and 1")


SplitPolicy = Union[ByRun, ByFraction]


def split_runs(datasets: Sequence[RegressionDataset], policy: SplitPolicy
               ) -> tuple[list[RegressionDataset], list[RegressionDataset]]:
    """Like :func:`train_test_split` but keeps runs separate."""
    runs = list(datasets)
    if isinstance(policy, ByRun):
        if len(runs) < 2:
            raise InsufficientRuns(f"ByRun needs at least 2 runs, got {len(runs)}")
        held = {h % len(runs) for h in policy.holdout}
        if len(held) >= len(runs):
            raise InsufficientRuns("every run is held out; nothing left to train on")
        train = [d for k, d in enumerate(runs) if k not in held]
        test = [d for k, d in enumerate(runs) if k in held]
        return train, test
    if not runs:
        raise InsufficientRuns("no runs to split")
    train, test = [], []
    for d in runs:
        n_test = int(round(policy.fraction * len(d)))
        cut = len(d) - n_test
        if cut < 2 or n_test < 2:
            raise InsufficientData(f"run of {len(d)} rows too short for a {policy.fraction} split")
        train.append(d.subset(slice(0, cut)))
        test.append(d.subset(slice(cut, None)))
    return train, test


def train_test_split(datasets: Sequence[RegressionDataset], policy: SplitPolicy
                     ) -> tuple[RegressionDataset, RegressionDataset]:
    train, test = split_runs(datasets, policy)
    return concat_datasets(train), concat_datasets(test)


def parse_split(text: str) -> SplitPolicy:
    """``by-run``, ``by-run=2,3`` (0-based run indices) or ``fraction=F``."""
    text = text.strip()
    if text == "by-run":
        return ByRun()
    if text.startswith("by-run="):
        return ByRun(tuple(int(s) for s in text[len("by-run="):].split(",")))
    if text.startswith("fraction="):
        return ByFraction(float(text[len("fraction="):]))
    raise ValueError(f"unknown split policy {text!r}")
