import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plcgrid.core import (
    N_CHANNELS,
    SLOT_SECONDS,
    CoverageError,
    GapError,
    MeasurementSeries,
    ParseError,
    PhaseMeasurements,
    ValidationError,
    derive_tonemap,
    fill_gaps,
    iter_day_windows,
    parse_measurement_file,
    serialize_measurement_file,
    window_day,
)

T0 = 1609459200  # 2021-01-01 00:00 UTC


def series(n, start=T0, step=1, value=None, seed=0, tonemaps=False, phases=False, cid="0-1"):
    rng = np.random.default_rng(seed)
    ts = start + np.arange(n) * step * SLOT_SECONDS
    spec = np.round(rng.uniform(-10, 40, size=(n, N_CHANNELS)), 3) if value is None else np.full((n, N_CHANNELS), value)
    tm = derive_tonemap(spec) if tonemaps else None
    ph = None
    if phases:
        ph = PhaseMeasurements(
            np.round(rng.uniform(220, 240, (n, 3)), 3), np.round(rng.uniform(0, 5, (n, 3)), 3), np.round(rng.uniform(0, 359, (n, 3)), 3)
        )
    return MeasurementSeries(cid, ts, spec, tonemaps=tm, phases=ph)


def test_parse_two_rows():
    s = series(2)
    parsed = parse_measurement_file(serialize_measurement_file(s))
    assert len(parsed) == 2
    assert parsed.spectra.shape == (2, N_CHANNELS)


def test_parse_out_of_range_value():
    s = series(2)
    text = serialize_measurement_file(s).decode()
    lines = text.splitlines()
    cells = lines[2].split(",")
    cells[5] = "57.000"
    lines[2] = ",".join(cells)
    with pytest.raises(ValidationError, match="40"):
        parse_measurement_file("\n".join(lines) + "\n", "fin2")


def test_parse_empty():
    with pytest.raises(ParseError, match="no rows"):
        parse_measurement_file(b"")


def test_parse_ragged_row():
    text = serialize_measurement_file(series(2)).decode().splitlines()
    text[1] = text[1].rsplit(",", 1)[0]
    with pytest.raises(ParseError):
        parse_measurement_file("\n".join(text))


@pytest.mark.parametrize("tonemaps,phases", [(False, False), (True, False), (True, True)])
def test_round_trip_layouts(tonemaps, phases):
    s = series(5, tonemaps=tonemaps, phases=phases)
    assert parse_measurement_file(serialize_measurement_file(s), connection_id="0-1") == s


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_round_trip_property(n, seed):
    s = series(n, seed=seed)
    back = parse_measurement_file(serialize_measurement_file(s), connection_id="0-1")
    assert np.array_equal(back.spectra, s.spectra)
    assert np.array_equal(back.timestamps, s.timestamps)


def test_series_invariants():
    with pytest.raises(ValidationError):
        MeasurementSeries("x", [T0, T0], np.zeros((2, N_CHANNELS)))
    with pytest.raises(ValidationError):
        MeasurementSeries("x", [T0 + 60], np.zeros((1, N_CHANNELS)))
    with pytest.raises(ValidationError):
        MeasurementSeries("x", [T0], np.zeros((1, N_CHANNELS - 1)))
    with pytest.raises(ValidationError):
        MeasurementSeries("x", [T0], np.full((1, N_CHANNELS), -20.0))


def test_tonemap_levels():
    assert derive_tonemap(np.full(N_CHANNELS, 40.0), "fin2")[0] == 7
    assert derive_tonemap(np.full(N_CHANNELS, -10.0), "fin2")[0] == 0
    assert derive_tonemap(np.full(N_CHANNELS, 20.0), "fin1")[0] == 4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 40), min_size=2, max_size=40))
def test_tonemap_monotone(values):
    v = np.sort(np.array(values))
    assert np.all(np.diff(derive_tonemap(v).astype(int)) >= 0)


def test_fill_gaps_contiguous():
    s = series(4)
    out = fill_gaps(s)
    assert np.array_equal(out.spectra, s.spectra)
    assert not out.filled.any()


def test_fill_gaps_hold_last():
    s = series(5).take([0, 1, 3, 4])
    out = fill_gaps(s, "hold_last")
    assert len(out) == 5
    assert out.filled.tolist() == [False, False, True, False, False]
    assert np.array_equal(out.spectra[2], out.spectra[1])


def test_fill_gaps_linear_midpoint():
    s = MeasurementSeries("x", [T0, T0 + 2 * SLOT_SECONDS], np.stack([np.zeros(N_CHANNELS), np.full(N_CHANNELS, 10.0)]))
    out = fill_gaps(s, "linear")
    assert np.allclose(out.spectra[1], 5.0)


def test_fill_gaps_too_long():
    s = series(12).take([0, 11])
    with pytest.raises(GapError):
        fill_gaps(s)
    with pytest.raises(GapError):
        fill_gaps(series(3).take([0, 2]), "reject")


def test_window_day_full_and_partial():
    s = series(96)
    w = window_day(s, "2021-01-01")
    assert w.matrix.shape == (96, N_CHANNELS) and not w.mask.any()
    partial = s.take(np.setdiff1d(np.arange(96), [10, 50, 95]))
    w = window_day(partial, "2021-01-01")
    assert w.matrix.shape == (96, N_CHANNELS) and w.mask.sum() == 3
    with pytest.raises(CoverageError):
        window_day(s.take(np.arange(40)), "2021-01-01")


def test_iter_day_windows_skips_sparse_days():
    s = series(96 * 2 + 10)
    assert len(list(iter_day_windows(s))) == 2
