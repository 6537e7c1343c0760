import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftlab.errors import (
    HeaderMismatch,
    InsufficientData,
    MalformedRow,
    NonFiniteValue,
    NonMonotoneTime,
)
from driftlab.telemetry import (
    HEADER,
    N_ONBOARD,
    FlightLog,
    RegressionDataset,
    Regime,
    TelemetryRecord,
    Tracking,
    clean,
    concat_datasets,
    derive_velocities,
    finite_difference,
    is_stale,
    parse_log,
    write_log,
)
from strategies import flight_logs

ONBOARD = tuple(float(i) for i in range(N_ONBOARD))


def rec(t, x=0.0, y=0.0, age=0.01, staleness=0.0, onboard=ONBOARD, regime=Regime.HOVER):
    return TelemetryRecord(t, onboard, Tracking(x, y, 0.0, 0.0, age, staleness), regime)


def header_line():
    return ",".join(HEADER) + "\n"


# ---------------------------------------------------------------- parsing

def test_header_only_file_has_no_records():
    assert len(parse_log(header_line().encode())) == 0


def test_three_rows_round_trip_in_order():
    log = FlightLog((rec(0.0), rec(0.1, 1.0), rec(0.2, 2.0)))
    back = parse_log(write_log(log))
    assert [r.time for r in back.records] == [0.0, 0.1, 0.2]
    assert back == log


def test_row_with_59_onboard_values_is_malformed():
    text = write_log(FlightLog((rec(0.0),))).decode()
    lines = text.splitlines()
    lines[1] = lines[1].rsplit(",", 1)[0]
    with pytest.raises(MalformedRow) as exc:
        parse_log("\n".join(lines) + "\n")
    assert exc.value.row == 1


def test_wrong_header_names_the_column():
    bad = header_line().replace("wii_age", "age")
    with pytest.raises(HeaderMismatch) as exc:
        parse_log(bad)
    assert exc.value.expected == "wii_age"


def test_nan_cell_is_rejected():
    text = write_log(FlightLog((rec(0.0), rec(0.1)))).decode().replace("0.1,hover", "nan,hover")
    with pytest.raises(NonFiniteValue) as exc:
        parse_log(text)
    assert exc.value.row == 2


def test_decreasing_time_is_rejected():
    good = write_log(FlightLog((rec(0.0), rec(0.1)))).decode()
    swapped = good.replace("0.1,hover", "-1.0,hover")
    with pytest.raises(NonMonotoneTime):
        parse_log(swapped)


def test_missing_tracking_round_trips_as_empty_cells():
    log = FlightLog((TelemetryRecord(0.0, ONBOARD, None, Regime.GUST),))
    text = write_log(log).decode()
    assert text.splitlines()[1].startswith("0.0,gust,,,,,,,")
    assert parse_log(text) == log


@given(flight_logs())
def test_write_parse_round_trip(log):
    assert parse_log(write_log(log)) == log


# ---------------------------------------------------------------- cleaning

def test_consecutive_duplicates_collapse():
    a = rec(0.0, 5.0)
    assert clean(FlightLog((a, a))).records == (a,)


def test_duplicate_ignores_onboard_differences():
    a = rec(0.0, 5.0)
    b = rec(0.0, 5.0, onboard=tuple(v + 1e-3 for v in ONBOARD))
    assert len(clean(FlightLog((a, b)))) == 1


def test_old_frame_is_stale():
    r = rec(0.0, age=0.5)
    assert is_stale(r, 0.2, 2)
    assert len(clean(FlightLog((r,)), stale_threshold=0.2)) == 0


def test_staleness_counter_also_marks_stale():
    assert is_stale(rec(0.0, staleness=3.0), 0.2, 2)
    assert not is_stale(rec(0.0, staleness=2.0), 0.2, 2)


def test_five_record_example():
    # r1, r2, copy of r2, stale r3, r4  ->  r1, r2, r4
    r1, r2, r3, r4 = rec(0.0, 1.0), rec(0.1, 2.0), rec(0.2, 3.0, age=0.9), rec(0.3, 4.0)
    once = clean(FlightLog((r1, r2, r2, r3, r4)))
    assert once.records == (r1, r2, r4)
    assert clean(once) == once


def test_stale_frame_between_copies_does_not_hide_duplicate():
    a = rec(0.0, 1.0)
    once = clean(FlightLog((a, rec(0.0, 9.0, age=1.0), a)))
    assert once.records == (a,)
    assert clean(once) == once


@given(flight_logs(), st.floats(0.05, 1.0), st.integers(0, 5))
def test_clean_is_idempotent_order_preserving_and_shrinking(log, thr, smax):
    once = clean(log, thr, smax)
    assert clean(once, thr, smax) == once
    assert len(once) <= len(log)
    # order preserving: output is a subsequence of the input
    it = iter(log.records)
    assert all(any(r is s for s in it) for r in once.records)
    assert not any(is_stale(r, thr, smax) for r in once.records)


# ---------------------------------------------------------- differentiation

def test_linear_motion_gives_constant_rate():
    log = FlightLog((rec(0.0, 0.0), rec(0.5, 10.0), rec(1.0, 20.0)))
    np.testing.assert_allclose(derive_velocities(log).target_x, [20.0, 20.0, 20.0])


def test_hand_evaluated_differences():
    log = FlightLog((rec(0.0, 0.0), rec(1.0, 4.0), rec(2.0, 6.0)))
    np.testing.assert_allclose(derive_velocities(log).target_x, [4.0, 3.0, 2.0])


@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=10), st.floats(-1e4, 1e4))
def test_constant_position_gives_zero_targets(gaps, x):
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    log = FlightLog(tuple(rec(float(t), x, -x) for t in times))
    ds = derive_velocities(log)
    assert np.all(ds.target_x == 0) and np.all(ds.target_y == 0)


@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=10), st.floats(-50, 50), st.floats(-50, 50))
def test_differences_exact_for_linear_motion_on_uneven_grid(gaps, v, p0):
    t = np.concatenate([[0.0], np.cumsum(gaps)])
    np.testing.assert_allclose(finite_difference(t, p0 + v * t), v, atol=1e-9 * (1 + abs(v) + abs(p0)))


def test_each_row_comes_from_one_surviving_record():
    recs = [rec(0.1 * k, float(k * k), onboard=tuple(float(k + j) for j in range(N_ONBOARD))) for k in range(6)]
    recs.insert(2, TelemetryRecord(0.15, ONBOARD, None))
    ds = derive_velocities(clean(FlightLog(tuple(recs))))
    kept = [r for r in recs if r.tracking is not None]
    assert len(ds) == len(kept)
    for row, r in zip(ds.features, kept):
        assert tuple(row) == r.onboard


def test_repeated_time_needs_cleaning_first():
    log = FlightLog((rec(0.0), rec(0.1, 1.0), rec(0.1, 2.0)))
    with pytest.raises(NonMonotoneTime):
        derive_velocities(log)


def test_too_few_tracked_records():
    with pytest.raises(InsufficientData):
        derive_velocities(FlightLog((rec(0.0), rec(0.1))))


# ---------------------------------------------------------------- datasets

def test_dataset_arrays_are_read_only():
    ds = RegressionDataset(np.zeros((2, 3)), [1, 2], [3, 4], [0, 1])
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_dataset_rejects_single_row():
    with pytest.raises(InsufficientData):
        RegressionDataset(np.zeros((1, 3)), [1], [1], [0])


def test_concat_keeps_times_increasing():
    a = RegressionDataset(np.zeros((3, 2)), [0, 0, 0], [0, 0, 0], [5.0, 5.1, 5.2])
    b = RegressionDataset(np.ones((2, 2)), [1, 1], [1, 1], [0.0, 0.1])
    c = concat_datasets([a, b])
    assert len(c) == 5
    assert np.all(np.diff(c.times) > 0)
    np.testing.assert_array_equal(c.features[3:], 1.0)
