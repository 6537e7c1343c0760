"""Synthetic quadrotor drift simulator.

Planar double integrator per axis::

    dp/dt = v
    dv/dt = a_cmd + a_wind + a_bias,      a_cmd = -k_h (v - v_ref)

``a_cmd`` is the vehicle's own hover autopilot holding the pilot's velocity
reference ``v_ref`` (zero while hovering), so an uncommanded vehicle drifts at
roughly ``(a_wind + a_bias) / k_h``.  The pilot reference and the gust square
wave both pass through a first-order lag before acting on the vehicle.
Integration is semi-implicit Euler on a grid of ``substeps`` per record.

Onboard channels are affine in six latent states
``[wind_x, wind_y, tilt_cmd_x, tilt_cmd_y, battery_sag, trim]`` plus Gaussian
noise.  Velocity is not a latent: a regressor has to infer drift from the
wind and command signatures in the sensors.

Randomness comes from numpy's PCG64 generator seeded through ``SeedSequence``;
both are specified bit-for-bit by numpy, so traces are reproducible across
platforms for a given numpy major version.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidConfig
from .telemetry import (
    N_ONBOARD,
    ONBOARD_CHANNELS,
    FlightLog,
    Regime,
    TelemetryRecord,
    Tracking,
)

LATENTS = ("wind_x", "wind_y", "tilt_cmd_x", "tilt_cmd_y", "battery_sag", "trim")
N_LATENT = len(LATENTS)

PAPER_COUNTS = {Regime.HOVER: 11934, Regime.DIRECTIONAL: 1640, Regime.GUST: 417}
PAPER_TOTAL = sum(PAPER_COUNTS.values())  # 13,991

# Wii camera is 1024 x 768; start in the middle of the frame.
FRAME_CENTER = (512.0, 384.0)


@dataclass(frozen=True)
class RegimeMix:
    hover: float = 1.0
    directional: float = 0.0
    gust: float = 0.0

    def as_dict(self) -> dict[Regime, float]:
        return {Regime.HOVER: self.hover, Regime.DIRECTIONAL: self.directional, Regime.GUST: self.gust}


@dataclass(frozen=True)
class WindConfig:
    mean: tuple[float, float] = (20.0, 10.0)        # px/s^2
    gust_amplitude: float = 80.0                    # px/s^2
    gust_period: float = 2.0                        # s
    gust_direction: float = 20.0                    # degrees from +x
    gust_lag: float = 0.25                          # s, air-mass response
    fluctuation: float = 15.0                       # px/s^2, smooth turbulence amplitude


@dataclass(frozen=True)
class NetworkFaults:
    dup_prob: float = 0.0
    stale_prob: float = 0.0


@dataclass(frozen=True, eq=False)
class SensorModel:
    """onboard = offset + coupling @ latents + noise_std * N(0, 1)."""

    coupling: np.ndarray    # 60 x 6
    offset: np.ndarray      # 60
    noise_std: np.ndarray   # 60

    def __post_init__(self):
        for name in ("coupling", "offset", "noise_std"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def channels(self, latents: np.ndarray, rng: Optional[np.random.Generator]) -> np.ndarray:
        x = self.offset + latents @ self.coupling.T
        if rng is not None:
            x = x + self.noise_std * rng.standard_normal(x.shape)
        return x

    def without_noise(self) -> "SensorModel":
        return SensorModel(self.coupling, self.offset, np.zeros_like(self.noise_std))


# channel -> (offset, scale, latent loadings).  Loadings are in units of
# "channel scale per typical latent excursion"; typical excursions are below.
_LATENT_SCALE = np.array([20.0, 20.0, 30.0, 30.0, 0.2, 1.0])


def _group(name: str) -> dict[str, float]:
    wind_xy = ("roll", "pitch", "acc_x", "acc_y", "vx", "vy", "vdelta_phi", "vdelta_theta",
               "euler_theta", "euler_phi", "pwm_u_pitch", "pwm_u_roll", "ref_theta_I", "ref_phi_I",
               "gyros_offsetx", "gyros_offsety")
    command = ("ref_theta", "ref_phi", "ref_pitch", "ref_roll", "rc_ref_pitch", "rc_ref_roll",
               "pwm_u_pitch_planif", "pwm_u_roll_planif")
    battery = ("vbat", "vbat_raw", "altitude")
    trim = ("vphi_trim", "vtheta_trim", "trim_theta", "trim_phi", "trim_angular_rates")
    if name in wind_xy:
        return {"wind": 1.0, "command": 0.3}
    if name in command:
        return {"command": 1.0}
    if name.startswith(("pwm_motor", "pwm_sat_motor", "pwm_current_motor")):
        return {"wind": 0.8, "battery": 0.5}
    if name in battery:
        return {"battery": 1.0}
    if name in trim:
        return {"trim": 1.0}
    return {}


_SCALES = {
    "altitude": (800.0, 30.0), "vbat": (95.0, 3.0), "vbat_raw": (11500.0, 150.0),
    "controlState": (131072.0, 2.0), "yaw": (40000.0, 500.0), "vstate": (4.0, 0.5),
    "acc_z": (-1000.0, 15.0),
}


def default_sensor_model(seed: int = 2010, noise_frac: float = 0.3) -> SensorModel:
    """Fixed, seed-stable coupling of latents to the 60 named channels."""
    rng = np.random.Generator(np.random.PCG64(seed))
    coupling = np.zeros((N_ONBOARD, N_LATENT))
    offset = np.zeros(N_ONBOARD)
    noise = np.zeros(N_ONBOARD)
    for c, name in enumerate(ONBOARD_CHANNELS):
        off, scale = _SCALES.get(name, (float(rng.uniform(-200, 200)), float(rng.uniform(5, 50))))
        offset[c] = off
        groups = _group(name)
        load = np.zeros(N_LATENT)
        if "wind" in groups:
            load[0:2] = groups["wind"] * rng.normal(size=2)
        if "command" in groups:
            load[2:4] = groups["command"] * rng.normal(size=2)
        if "battery" in groups:
            load[4] = groups["battery"] * rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
        if "trim" in groups:
            load[5] = groups["trim"] * rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
        coupling[c] = scale * load / _LATENT_SCALE
        noise[c] = scale * (noise_frac if groups else 1.0)
    return SensorModel(coupling, offset, noise)


@dataclass(frozen=True, eq=False)
class SimConfig:
    seed: int = 0
    duration: float = 120.0                 # s
    rate: float = 15.0                      # Hz, tracker and telemetry rate
    regime_mix: RegimeMix = RegimeMix()
    wind: WindConfig = WindConfig()
    sensors: SensorModel = field(default_factory=default_sensor_model)
    network: NetworkFaults = NetworkFaults()
    hover_damping: float = 2.0              # 1/s, autopilot velocity-hold gain k_h
    command_speed: float = 30.0             # px/s, pilot reference magnitude
    command_hold: float = 3.0               # s between pilot reference changes
    command_lag: float = 0.25               # s
    segment_length: float = 20.0            # s, regime block size
    battery_start: float = 0.0
    battery_sag_rate: float = 1.0 / 600.0   # per second
    trim: float = 0.0
    bias_coupling: tuple[tuple[float, float], tuple[float, float]] = ((4.0, 2.0), (-2.0, 1.5))
    tracker_noise: float = 0.1              # px
    substeps: int = 16

    @property
    def n_records(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def dt(self) -> float:
        return 1.0 / self.rate

    @property
    def sensor_coupling(self) -> np.ndarray:
        return self.sensors.coupling

    @property
    def noise_std(self) -> np.ndarray:
        return self.sensors.noise_std

    def validate(self) -> None:
        mix = self.regime_mix
        fr = (mix.hover, mix.directional, mix.gust)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidConfig(f"regime fractions must be non-negative and sum to 1, got {fr}")
        if not self.rate > 0 or not self.duration > 0:
            raise InvalidConfig("rate and duration must be positive")
        if self.n_records < 1:
            raise InvalidConfig("configuration produces no records")
        for p in (self.network.dup_prob, self.network.stale_prob):
            if not 0.0 <= p <= 1.0:
                raise InvalidConfig("network fault probabilities must lie in [0, 1]")
        s = self.sensors
        if s.coupling.shape != (N_ONBOARD, N_LATENT) or s.offset.shape != (N_ONBOARD,) \
                or s.noise_std.shape != (N_ONBOARD,):
            raise InvalidConfig(f"sensor model must map {N_LATENT} latents to {N_ONBOARD} channels")
        if np.any(s.noise_std < 0) or self.tracker_noise < 0:
            raise InvalidConfig("noise levels must be non-negative")
        if self.hover_damping < 0 or self.substeps < 1:
            raise InvalidConfig("hover_damping must be >= 0 and substeps >= 1")
        if self.wind.gust_period <= 0 or self.wind.gust_lag < 0 or self.command_lag < 0:
            raise InvalidConfig("gust period must be positive and lags non-negative")
        if self.hover_damping * self.dt / self.substeps >= 1.0:
            raise InvalidConfig("integration step too coarse for hover_damping")

    @property
    def bias_matrix(self) -> np.ndarray:
        return np.array(self.bias_coupling, dtype=float)


def paper_mix_preset(seed: int = 0, rate: float = 15.0) -> SimConfig:
    """Regime composition matching the recorded campaign: 11,934 hover,
    1,640 directional and 417 gust records (13,991 total)."""
    mix = RegimeMix(
        PAPER_COUNTS[Regime.HOVER] / PAPER_TOTAL,
        PAPER_COUNTS[Regime.DIRECTIONAL] / PAPER_TOTAL,
        PAPER_COUNTS[Regime.GUST] / PAPER_TOTAL,
    )
    return SimConfig(seed=seed, duration=PAPER_TOTAL / rate, rate=rate, regime_mix=mix)


def regime_counts(config: SimConfig) -> dict[Regime, int]:
    """Largest-remainder apportionment of ``n_records`` over the regime mix."""
    n = config.n_records
    fr = config.regime_mix.as_dict()
    raw = {r: f * n for r, f in fr.items()}
    counts = {r: int(math.floor(v)) for r, v in raw.items()}
    short = n - sum(counts.values())
    for r in sorted(raw, key=lambda r: raw[r] - counts[r], reverse=True)[:short]:
        counts[r] += 1
    return counts


def regime_schedule(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-record regime labels: blocks of ``segment_length`` in shuffled order.

    When there are at least two hover blocks the session opens and closes
    with one, as a real capture does (the pilot is hovering when logging
    starts and stops).
    """
    seg = max(1, int(round(config.segment_length * config.rate)))
    blocks = []
    for r, c in regime_counts(config).items():
        while c > 0:
            take = min(seg, c)
            blocks.append((r, take))
            c -= take
    order = list(rng.permutation(len(blocks)))
    hover = [k for k in order if blocks[k][0] is Regime.HOVER]
    if len(hover) >= 2:
        rest = [k for k in order if k not in (hover[0], hover[-1])]
        order = [hover[0], *rest, hover[-1]]
    labels = []
    for k in order:
        r, take = blocks[k]
        labels.extend([r] * take)
    return np.array(labels, dtype=object)


def _is_regime(labels: np.ndarray, regime: Regime) -> np.ndarray:
    # Element-wise ``==`` on an object array of str-enums compares the
    # members' str() forms, not their values, so test identity instead.
    return np.fromiter((x is regime for x in labels), dtype=bool, count=len(labels))


def _first_order(u: np.ndarray, a: float, c: float, x0: np.ndarray) -> np.ndarray:
    """x[n+1] = a x[n] + c u[n], returned for n = 0..len(u) (includes x0)."""
    out = np.empty((u.shape[0] + 1,) + u.shape[1:])
    out[0] = x0
    out[1:] = lfilter([c], [1.0, -a], u, axis=0, zi=(a * np.asarray(x0))[None, ...])[0]
    return out


@dataclass(frozen=True, eq=False)
class Truth:
    """Ground truth sampled at record times (before fault injection)."""

    time: np.ndarray
    position: np.ndarray       # n x 2, px
    velocity: np.ndarray       # n x 2, px/s
    wind: np.ndarray           # n x 2, px/s^2 (effective, gusts included)
    bias: np.ndarray           # n x 2, px/s^2
    latents: np.ndarray        # n x 6
    regimes: np.ndarray        # n

    def __len__(self) -> int:
        return self.time.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "px", "py", "vx", "vy", "wind_x", "wind_y"])
        for k in range(len(self)):
            w.writerow([repr(float(v)) for v in (self.time[k], *self.position[k], *self.velocity[k], *self.wind[k])])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class SimTrace:
    log: FlightLog
    truth: Truth
    config: SimConfig


@dataclass
class Disturbance:
    """Wind and bias signals on the substep grid, shared with the closed loop."""

    wind: np.ndarray      # m x 2 (effective, after gust lag)
    bias: np.ndarray      # m x 2
    battery: np.ndarray   # m
    gust_target: np.ndarray
    regimes_sub: np.ndarray


def _rng_streams(seed: int) -> list[np.random.Generator]:
    # Independent streams: schedule, wind, commands, sensors, tracker, network.
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(6)]


def build_disturbance(config: SimConfig, regimes: np.ndarray, rng_wind: np.random.Generator,
                      n_steps: int) -> Disturbance:
    """Wind and bias on ``n_steps * substeps + 1`` grid points."""
    S = config.substeps
    h = config.dt / S
    m = n_steps * S + 1
    t = np.arange(m) * h
    w = config.wind
    # Smooth turbulence: three sinusoids per axis with random frequency and phase.
    freqs = rng_wind.uniform(0.03, 0.25, size=(3, 2))
    phases = rng_wind.uniform(0.0, 2 * np.pi, size=(3, 2))
    fluct = (w.fluctuation / np.sqrt(1.5)) / np.sqrt(3) * np.sin(
        2 * np.pi * freqs[None] * t[:, None, None] + phases[None]).sum(axis=1)
    regime_idx = np.minimum(np.arange(m) // S, len(regimes) - 1)
    regimes_sub = regimes[regime_idx]
    gust_on = _is_regime(regimes_sub, Regime.GUST)
    # Square wave restarts at each gust block; board pushes one way, then relaxes.
    starts = gust_on & ~np.concatenate([[False], gust_on[:-1]])
    block_start = np.maximum.accumulate(np.where(starts, t, 0.0))
    phase = np.mod(t - block_start, w.gust_period) < 0.5 * w.gust_period
    ang = np.deg2rad(w.gust_direction)
    direction = np.array([np.cos(ang), np.sin(ang)])
    gust_target = (gust_on & phase)[:, None] * w.gust_amplitude * direction[None, :]
    if w.gust_lag > 0:
        a = 1.0 - h / w.gust_lag
        gust = _first_order(gust_target[:-1], a, h / w.gust_lag, np.zeros(2))
    else:
        gust = gust_target
    wind = np.asarray(w.mean)[None, :] + fluct + gust
    battery = config.battery_start + config.battery_sag_rate * t
    bias = np.column_stack([battery, np.full(m, config.trim)]) @ config.bias_matrix.T
    return Disturbance(wind, bias, battery, gust_target, regimes_sub)


def _pilot_reference(config: SimConfig, regimes: np.ndarray, rng_cmd: np.random.Generator,
                     m: int) -> np.ndarray:
    """Piecewise-constant pilot velocity reference, lagged, on the substep grid."""
    S = config.substeps
    h = config.dt / S
    hold = max(1, int(round(config.command_hold / h)))
    n_changes = m // hold + 1
    angles = rng_cmd.uniform(0, 2 * np.pi, size=n_changes)
    raw = config.command_speed * np.column_stack([np.cos(angles), np.sin(angles)])
    ref = raw[np.arange(m) // hold]
    regime_idx = np.minimum(np.arange(m) // S, len(regimes) - 1)
    ref = ref * _is_regime(regimes[regime_idx], Regime.DIRECTIONAL)[:, None]
    if config.command_lag > 0:
        return _first_order(ref[:-1], 1.0 - h / config.command_lag, h / config.command_lag, np.zeros(2))
    return ref


def integrate(v_accel_input: np.ndarray, k_h: float, h: float, p0, v0) -> tuple[np.ndarray, np.ndarray]:
    """Semi-implicit Euler for dv = -k_h v + u, dp = v on a uniform grid.

    ``v_accel_input[n]`` is the input u held over step n (length m-1).
    """
    v = _first_order(v_accel_input * h, 1.0 - h * k_h, 1.0, np.asarray(v0, dtype=float))
    p = np.empty_like(v)
    p[0] = p0
    p[1:] = p0 + h * np.cumsum(v[1:], axis=0)
    return p, v


def simulate(config: SimConfig) -> SimTrace:
    config.validate()
    n = config.n_records
    S = config.substeps
    h = config.dt / S
    rs, rw, rc, rsens, rtrk, rnet = _rng_streams(config.seed)

    regimes = regime_schedule(config, rs)
    dist = build_disturbance(config, regimes, rw, n - 1)
    m = dist.wind.shape[0]
    ref = _pilot_reference(config, regimes, rc, m)
    k_h = config.hover_damping
    u = (k_h * ref + dist.wind + dist.bias)[:-1]
    # Capture starts mid-flight, already at the quasi-steady drift velocity.
    v0 = u[0] / k_h if k_h > 0 else np.zeros(2)
    p, v = integrate(u, k_h, h, FRAME_CENTER, v0)

    rec = np.arange(n) * S
    time = np.arange(n) / config.rate
    latents = np.column_stack([
        dist.wind[rec], ref[rec], dist.battery[rec], np.full(n, config.trim),
    ])
    onboard = config.sensors.channels(latents, rsens)
    pos_obs = p[rec] + config.tracker_noise * rtrk.standard_normal((n, 2)) if config.tracker_noise > 0 else p[rec]
    rate_obs = np.zeros_like(pos_obs)
    rate_obs[1:] = np.diff(pos_obs, axis=0) * config.rate
    age = rtrk.uniform(0.0, 0.5 / config.rate, size=n)

    truth = Truth(time, p[rec].copy(), v[rec].copy(), dist.wind[rec].copy(), dist.bias[rec].copy(),
                  latents, regimes)

    records = []
    dup = rnet.random(n) < config.network.dup_prob
    stale = rnet.random(n) < config.network.stale_prob
    stale_age = rnet.uniform(0.25, 1.0, size=n)
    stale_count = rnet.integers(3, 11, size=n)
    for k in range(n):
        a, s = (float(stale_age[k]), float(stale_count[k])) if stale[k] else (float(age[k]), 0.0)
        trk = Tracking(float(pos_obs[k, 0]), float(pos_obs[k, 1]),
                       float(rate_obs[k, 0]), float(rate_obs[k, 1]), a, s)
        r = TelemetryRecord(float(time[k]), tuple(onboard[k].tolist()), trk, regimes[k])
        records.append(r)
        if dup[k]:
            records.append(r)
    return SimTrace(FlightLog(tuple(records)), truth, config)


def campaign(seed: int, n_calm: int = 3, n_windy: int = 3, duration: float = 120.0,
             base: Optional[SimConfig] = None) -> list[tuple[SimConfig, bool]]:
    """Several capture sessions drawn from one master seed.

    Calm sessions mix hover with directional commands; windy ones alternate
    hover and gust blocks.  Returns ``(config, is_windy)`` pairs.
    """
    base = base or SimConfig()
    seeds = np.random.SeedSequence(seed).generate_state(n_calm + n_windy)
    runs = []
    for k in range(n_calm + n_windy):
        windy = k >= n_calm
        mix = RegimeMix(0.5, 0.0, 0.5) if windy else RegimeMix(0.8, 0.2, 0.0)
        runs.append((replace(base, seed=int(seeds[k]), duration=duration, regime_mix=mix,
                             segment_length=10.0), windy))
    return runs
