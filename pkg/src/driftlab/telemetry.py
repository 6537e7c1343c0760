"""Telemetry log schema, CSV I/O, cleaning and regression-dataset assembly.

A log is a UTF-8 CSV with a mandatory header::

    time, regime, wii_x, wii_y, wii_xd, wii_yd, wii_age, wii_staleness, <60 onboard channels>

Missing tracker readings are written as six empty cells.  Floats are written
with ``repr`` so that ``parse_log(write_log(log)) == log`` holds exactly.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (
    HeaderMismatch,
    InsufficientData,
    MalformedRow,
    NonFiniteValue,
    NonMonotoneTime,
)

ONBOARD_CHANNELS: tuple[str, ...] = (
    "altitude", "roll", "pitch", "yaw", "vx", "vy", "vz",
    "acc_x", "acc_y", "acc_z", "controlState", "vbat", "vphi_trim",
    "vtheta_trim", "vstate", "vmisc", "vdelta_phi",
    "vdelta_theta", "vdelta_psi", "vbat_raw", "ref_theta",
    "ref_phi", "ref_theta_I", "ref_phi_I", "ref_pitch",
    "ref_roll", "ref_yaw", "ref_psi", "rc_ref_pitch",
    "rc_ref_roll", "rc_ref_yaw", "rc_ref_gaz", "rc_ref_ag",
    "euler_theta", "euler_phi", "pwm_motor1", "pwm_motor2",
    "pwm_motor3", "pwm_motor4", "pwm_sat_motor1",
    "pwm_sat_motor2", "pwm_sat_motor3",
    "pwm_sat_motor4", "pwm_u_pitch", "pwm_u_roll",
    "pwm_u_yaw", "pwm_yaw_u_I", "pwm_u_pitch_planif",
    "pwm_u_roll_planif", "pwm_u_yaw_planif",
    "pwm_current_motor1", "pwm_current_motor2",
    "pwm_current_motor3", "pwm_current_motor4",
    "gyros_offsetx", "gyros_offsety", "gyros_offsetz",
    "trim_angular_rates", "trim_theta", "trim_phi",
)
N_ONBOARD = len(ONBOARD_CHANNELS)
assert N_ONBOARD == 60

TRACKING_FIELDS: tuple[str, ...] = ("wii_x", "wii_y", "wii_xd", "wii_yd", "wii_age", "wii_staleness")
HEADER: tuple[str, ...] = ("time", "regime") + TRACKING_FIELDS + ONBOARD_CHANNELS

DEFAULT_STALE_THRESHOLD = 0.2
DEFAULT_STALENESS_MAX = 2


class Regime(str, enum.Enum):
    HOVER = "hover"
    DIRECTIONAL = "directional"
    GUST = "gust"


@dataclass(frozen=True)
class Tracking:
    """One Wii tracker reading (positions in pixels, rates in pixels/sec)."""

    wii_x: float
    wii_y: float
    wii_xd: float
    wii_yd: float
    wii_age: float
    wii_staleness: float

    def __post_init__(self):
        if self.wii_age < 0 or self.wii_staleness < 0:
            raise ValueError("wii_age and wii_staleness must be non-negative")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.wii_x, self.wii_y, self.wii_xd, self.wii_yd, self.wii_age, self.wii_staleness)


@dataclass(frozen=True)
class TelemetryRecord:
    time: float
    onboard: tuple[float, ...]
    tracking: Optional[Tracking] = None
    regime: Regime = Regime.HOVER

    def __post_init__(self):
        if len(self.onboard) != N_ONBOARD:
            raise ValueError(f"onboard vector must have {N_ONBOARD} channels, got {len(self.onboard)}")
        if not math.isfinite(self.time):
            raise ValueError("record time must be finite")


@dataclass(frozen=True)
class FlightLog:
    records: tuple[TelemetryRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.time < prev.time:
                raise NonMonotoneTime(f"record time {cur.time} precedes {prev.time}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def regimes(self) -> tuple[Regime, ...]:
        return tuple(r.regime for r in self.records)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    """Feature matrix with per-axis velocity targets (pixels/sec)."""

    features: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray
    times: np.ndarray
    norm: Optional["NormStats"] = None  # noqa: F821 -- from normdiag

    def __post_init__(self):
        for name in ("features", "target_x", "target_y", "times"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if n < 2:
            raise InsufficientData(f"a regression dataset needs at least 2 rows, got {n}")
        if not (len(self.target_x) == len(self.target_y) == len(self.times) == n):
            raise ValueError("targets and times must have one entry per feature row")
        for name in ("features", "target_x", "target_y", "times"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def targets(self) -> np.ndarray:
        """N x 2 array of (vx, vy)."""
        return np.column_stack([self.target_x, self.target_y])

    def subset(self, idx) -> "RegressionDataset":
        return RegressionDataset(
            self.features[idx], self.target_x[idx], self.target_y[idx], self.times[idx], self.norm
        )


def concat_datasets(datasets: Sequence[RegressionDataset]) -> RegressionDataset:
    """Stack runs into one dataset.

    Times are re-based so they keep increasing across run boundaries: each run
    starts one median sample interval after the previous run ends.
    """
    if not datasets:
        raise InsufficientData("no datasets to concatenate")
    times = []
    offset = 0.0
    for k, ds in enumerate(datasets):
        t = ds.times - ds.times[0]
        if k > 0:
            step = float(np.median(np.diff(ds.times))) if len(ds) > 1 else 1.0
            offset = times[-1][-1] + step
        times.append(t + offset)
    return RegressionDataset(
        np.vstack([d.features for d in datasets]),
        np.concatenate([d.target_x for d in datasets]),
        np.concatenate([d.target_y for d in datasets]),
        np.concatenate(times),
    )


# --------------------------------------------------------------------- CSV I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def write_log(log: FlightLog) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for rec in log.records:
        tracking = [_fmt(v) for v in rec.tracking.as_tuple()] if rec.tracking else [""] * 6
        w.writerow([_fmt(rec.time), rec.regime.value, *tracking, *map(_fmt, rec.onboard)])
    return buf.getvalue().encode("utf-8")


def _float(cell: str, row: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise MalformedRow(row, f"column {column!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise NonFiniteValue(row, column)
    return v


def parse_log(data: Union[bytes, str]) -> FlightLog:
    """Parse log-file content into a :class:`FlightLog`.

    ``row`` numbers in errors count data rows from 1 (the header is row 0).
    """
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise HeaderMismatch(0, HEADER[0], "<empty file>") from None
    header = [h.strip() for h in header]
    for j, expected in enumerate(HEADER):
        found = header[j] if j < len(header) else "<missing>"
        if found != expected:
            raise HeaderMismatch(j, expected, found)
    if len(header) > len(HEADER):
        raise HeaderMismatch(len(HEADER), "<end of header>", header[len(HEADER)])

    records = []
    for row_no, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(HEADER):
            raise MalformedRow(row_no, f"expected {len(HEADER)} columns, got {len(row)}")
        t = _float(row[0], row_no, "time")
        try:
            regime = Regime(row[1].strip())
        except ValueError:
            raise MalformedRow(row_no, f"unknown regime {row[1]!r}") from None
        cells = row[2:8]
        if all(c.strip() == "" for c in cells):
            tracking = None
        elif any(c.strip() == "" for c in cells):
            raise MalformedRow(row_no, "tracking fields must be all present or all empty")
        else:
            vals = [_float(c, row_no, name) for c, name in zip(cells, TRACKING_FIELDS)]
            if vals[4] < 0 or vals[5] < 0:
                raise MalformedRow(row_no, "wii_age and wii_staleness must be non-negative")
            tracking = Tracking(*vals)
        onboard = tuple(_float(c, row_no, name) for c, name in zip(row[8:], ONBOARD_CHANNELS))
        records.append(TelemetryRecord(t, onboard, tracking, regime))
    try:
        return FlightLog(tuple(records))
    except NonMonotoneTime as exc:
        raise NonMonotoneTime(f"log times must be non-decreasing: {exc}") from None


def read_log(path: Union[str, Path]) -> FlightLog:
    return parse_log(Path(path).read_bytes())


def save_log(log: FlightLog, path: Union[str, Path]) -> None:
    Path(path).write_bytes(write_log(log))


# -------------------------------------------------------------------- cleaning


def is_stale(rec: TelemetryRecord, stale_threshold: float, staleness_max: float) -> bool:
    t = rec.tracking
    return t is not None and (t.wii_age > stale_threshold or t.wii_staleness > staleness_max)


def clean(
    log: FlightLog,
    stale_threshold: float = DEFAULT_STALE_THRESHOLD,
    staleness_max: float = DEFAULT_STALENESS_MAX,
) -> FlightLog:
    """Drop stale tracker frames, then collapse consecutive duplicates.

    Two records are duplicates when their time and full tracker reading match,
    whatever their onboard channels say.  Stale frames go first so that a
    stale frame sitting between two copies cannot hide a duplicate (this is
    what makes the operation idempotent).
    """
    if not stale_threshold > 0:
        raise ValueError("stale_threshold must be positive")
    fresh = [r for r in log.records if not is_stale(r, stale_threshold, staleness_max)]
    out: list[TelemetryRecord] = []
    for rec in fresh:
        if out and out[-1].time == rec.time and out[-1].tracking == rec.tracking:
            continue
        out.append(rec)
    return FlightLog(tuple(out))


# ------------------------------------------------------------------ velocities


def finite_difference(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Central differences on non-uniform times, one-sided at the ends."""
    d = np.empty_like(p, dtype=float)
    d[1:-1] = (p[2:] - p[:-2]) / (t[2:] - t[:-2])
    d[0] = (p[1] - p[0]) / (t[1] - t[0])
    d[-1] = (p[-1] - p[-2]) / (t[-1] - t[-2])
    return d


def derive_velocities(log: FlightLog) -> RegressionDataset:
    """Build the regression dataset: onboard features -> tracker velocity."""
    usable = [r for r in log.records if r.tracking is not None]
    if len(usable) < 3:
        raise InsufficientData(f"need at least 3 records with tracking, got {len(usable)}")
    t = np.array([r.time for r in usable])
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        i = int(bad[0])
        raise NonMonotoneTime(
            f"times must be strictly increasing: t[{i}]={t[i]!r}, t[{i + 1}]={t[i + 1]!r} (run clean() first)"
        )
    px = np.array([r.tracking.wii_x for r in usable])
    py = np.array([r.tracking.wii_y for r in usable])
    features = np.array([r.onboard for r in usable])
    return RegressionDataset(features, finite_difference(t, px), finite_difference(t, py), t)


def dataset_from_logs(logs: Iterable[FlightLog], **clean_kw) -> list[RegressionDataset]:
    return [derive_velocities(clean(log, **clean_kw)) for log in logs]
