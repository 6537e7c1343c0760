"""Hypothesis strategies shared across test modules."""

import numpy as np
from hypothesis import strategies as st

from driftlab.telemetry import N_ONBOARD, FlightLog, Regime, TelemetryRecord, Tracking

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
moderate = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


@st.composite
def trackings(draw, fresh=None):
    age = draw(st.floats(0, 0.19)) if fresh else draw(st.floats(0, 2))
    stal = draw(st.integers(0, 2)) if fresh else draw(st.integers(0, 10))
    return Tracking(draw(finite), draw(finite), draw(finite), draw(finite), age, float(stal))


@st.composite
def flight_logs(draw, max_records=12):
    n = draw(st.integers(0, max_records))
    steps = draw(st.lists(st.sampled_from([0.0, 0.05, 0.1, 0.25]), min_size=n, max_size=n))
    t0 = draw(st.floats(-100, 100))
    recs = []
    t = t0
    for k in range(n):
        t += steps[k]
        onboard = tuple(draw(st.lists(finite, min_size=N_ONBOARD, max_size=N_ONBOARD)))
        tracking = draw(st.none() | trackings())
        recs.append(TelemetryRecord(t, onboard, tracking, draw(st.sampled_from(list(Regime)))))
    return FlightLog(tuple(recs))


def matrices(max_rows=8, max_cols=5, elements=st.floats(-100, 100)):
    from hypothesis.extra.numpy import arrays

    shape = st.tuples(st.integers(2, max_rows), st.integers(1, max_cols))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=elements))
