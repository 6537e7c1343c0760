"""PD hover control with optional drift feedforward and feedback latency.

The plant is the simulator's vehicle with the host controller added on top of
the onboard velocity hold::

    dv/dt = u - k_h v + a_wind + a_bias

Drift compensation subtracts ``k_ff * v_drift_hat`` from the PD command.  A
hovering vehicle drifts at ``(a_wind + a_bias) / k_h``, so with
``k_ff == k_h`` a perfect drift estimate cancels the disturbance exactly.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .errors import IncompatibleModel, InvalidLatency
from .flightsim import (
    FRAME_CENTER,
    SimConfig,
    _rng_streams,
    build_disturbance,
    regime_schedule,
)
from .svr import SvrPair, predict_many

DEFAULT_K_FF = 2.0


@dataclass(frozen=True)
class PdGains:
    kp: tuple[float, float] = (4.0, 4.0)
    kd: tuple[float, float] = (2.0, 2.0)
    command_limit: float = 1000.0   # px/s^2

    def __post_init__(self):
        if not self.command_limit > 0:
            raise ValueError("command_limit must be positive")
        if min(self.kp) < 0 or min(self.kd) < 0:
            raise ValueError("gains must be non-negative")


def pd_command(error, error_rate, gains: PdGains) -> np.ndarray:
    """u = clamp(-kp e - kd de/dt, +-limit), each axis independently."""
    u = -np.asarray(gains.kp) * np.asarray(error, dtype=float) - np.asarray(gains.kd) * np.asarray(error_rate, dtype=float)
    return np.clip(u, -gains.command_limit, gains.command_limit)


@dataclass(frozen=True)
class NoCompensation:
    pass


@dataclass(frozen=True, eq=False)
class SvrFeedforward:
    pair: SvrPair


@dataclass(frozen=True)
class OracleFeedforward:
    """Uses the true disturbance: v_drift = (a_wind + a_bias) / k_h."""


Compensation = Union[NoCompensation, SvrFeedforward, OracleFeedforward]


@dataclass(frozen=True)
class LoopConfig:
    gains: PdGains = PdGains()
    latency: float = 0.0
    compensation: Compensation = NoCompensation()
    setpoint: tuple[float, float] = FRAME_CENTER
    initial_offset: tuple[float, float] = (30.0, 0.0)
    k_ff: float = DEFAULT_K_FF
    escape_factor: float = 10.0


@dataclass(frozen=True, eq=False)
class LoopTrace:
    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    command: np.ndarray
    drift_hat: np.ndarray
    delayed: np.ndarray
    setpoint: np.ndarray
    escape_radius: float
    escaped: bool
    escape_time: Optional[float]

    def __len__(self) -> int:
        return self.time.shape[0]

    @property
    def error(self) -> np.ndarray:
        return self.position - self.setpoint

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean(np.linalg.norm(self.error, axis=1)))

    def steady_state_error(self, tail: float = 0.25) -> float:
        k = max(1, int(len(self) * tail))
        return float(np.mean(np.linalg.norm(self.error[-k:], axis=1)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "px", "py", "ux", "uy", "vxhat", "vyhat", "delayed_px", "delayed_py"])
        for k in range(len(self)):
            row = (self.time[k], *self.position[k], *self.command[k], *self.drift_hat[k], *self.delayed[k])
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def latency_steps(latency: float, rate: float) -> int:
    if latency < 0 or not math.isfinite(latency):
        raise InvalidLatency(f"latency must be a non-negative finite time, got {latency}")
    steps = latency * rate
    d = int(round(steps))
    if abs(steps - d) > 1e-9 * max(1.0, steps):
        raise InvalidLatency(f"latency {latency} s is not a multiple of the {1 / rate:.6g} s step")
    return d


def run_closed_loop(sim: SimConfig, loop: LoopConfig) -> LoopTrace:
    """Step the PD loop at ``sim.rate`` for ``sim.duration`` seconds.

    Observations pass through a pure delay of ``loop.latency``; until the
    buffer fills the controller sees the initial position.  The error rate is
    the backward difference of delayed observations.  The run stops early
    once the vehicle leaves ``escape_factor`` times the initial error radius
    (disabled when the initial offset is zero).
    """
    sim.validate()
    delay = latency_steps(loop.latency, sim.rate)
    comp = loop.compensation
    if isinstance(comp, SvrFeedforward) and comp.pair.dim != sim.sensors.coupling.shape[0]:
        raise IncompatibleModel(
            f"model expects {comp.pair.dim} features, simulator emits {sim.sensors.coupling.shape[0]}")

    n = sim.n_records
    S = sim.substeps
    dt = sim.dt
    h = dt / S
    k_h = sim.hover_damping
    rs, rw, _rc, rsens, rtrk, _rnet = _rng_streams(sim.seed)
    regimes = regime_schedule(sim, rs)
    dist = build_disturbance(sim, regimes, rw, n - 1)
    rec = np.arange(n) * S
    disturbance = dist.wind + dist.bias

    if isinstance(comp, SvrFeedforward):
        # No pilot commands in the loop: tilt-command latents are zero.
        latents = np.column_stack([dist.wind[rec], np.zeros((n, 2)), dist.battery[rec],
                                   np.full(n, sim.trim)])
        drift_hat = predict_many(comp.pair, sim.sensors.channels(latents, rsens))
    elif isinstance(comp, OracleFeedforward):
        drift_hat = disturbance[rec] / k_h if k_h > 0 else np.zeros((n, 2))
    else:
        drift_hat = np.zeros((n, 2))
    k_ff = 0.0 if isinstance(comp, NoCompensation) else min(loop.k_ff, 1.0 / dt)

    setpoint = np.asarray(loop.setpoint, dtype=float)
    offset = np.asarray(loop.initial_offset, dtype=float)
    r0 = float(np.linalg.norm(offset))
    radius = loop.escape_factor * r0 if r0 > 0 else math.inf
    noise = sim.tracker_noise * rtrk.standard_normal((n, 2)) if sim.tracker_noise > 0 else np.zeros((n, 2))

    p = setpoint + offset
    v = np.zeros(2)
    obs = deque([p + noise[0]] * (delay + 1), maxlen=delay + 1)
    prev_seen = obs[0]
    limit = loop.gains.command_limit
    times, pos, vel, cmd, seen_log = [], [], [], [], []
    escaped, escape_time = False, None
    for k in range(n):
        if k > 0:
            obs.append(p + noise[k])
        seen = obs[0]
        rate = (seen - prev_seen) / dt
        prev_seen = seen
        u = pd_command(seen - setpoint, rate, loop.gains)
        u = np.clip(u - k_ff * drift_hat[k], -limit, limit)
        times.append(k * dt)
        pos.append(p.copy())
        vel.append(v.copy())
        cmd.append(u)
        seen_log.append(seen.copy())
        if np.linalg.norm(p - setpoint) > radius:
            escaped, escape_time = True, k * dt
            break
        if k == n - 1:
            break
        base = rec[k]
        for s in range(S):
            v = (1.0 - h * k_h) * v + h * (u + disturbance[base + s])
            p = p + h * v
    m = len(times)
    return LoopTrace(np.array(times), np.array(pos), np.array(vel), np.array(cmd),
                     drift_hat[:m].copy(), np.array(seen_log), setpoint, radius, escaped, escape_time)


def find_instability_threshold(sim: SimConfig, loop: LoopConfig, max_latency: float = 3.0) -> Optional[float]:
    """Smallest latency (multiple of the step) at which the loop escapes."""
    for d in range(0, int(round(max_latency * sim.rate)) + 1):
        if run_closed_loop(sim, replace(loop, latency=d / sim.rate)).escaped:
            return d / sim.rate
    return None
