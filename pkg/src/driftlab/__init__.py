"""Drift-prediction laboratory for a small quadrotor.

Synthesize or ingest 60-channel telemetry, turn it into per-axis velocity
regression data, train epsilon-SVR models with a from-scratch SMO solver, and
evaluate drift prediction and drift-compensated PD control.
"""

from .control import LoopConfig, PdGains, pd_command, run_closed_loop
from .evalreport import ByFraction, ByRun, EvalReport, evaluate, train_test_split
from .flightsim import SimConfig, paper_mix_preset, simulate
from .normdiag import NormStats, apply_norm, fit_norm, singular_values, spectrum
from .svr import KernelSpec, SvrModel, SvrPair, load_model, predict, save_model, train
from .telemetry import (
    FlightLog,
    RegressionDataset,
    TelemetryRecord,
    clean,
    derive_velocities,
    parse_log,
    write_log,
)

__version__ = "0.1.0"
