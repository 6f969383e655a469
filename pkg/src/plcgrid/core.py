"""Data model for PLC SNR measurements.

A connection is described by a time-indexed matrix of 917 per-channel SNR
values (dB), optionally accompanied by the modem tonemap and per-phase node
measurements. Timestamps are UTC epoch seconds on a 15-minute grid.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

import numpy as np

N_CHANNELS = 917
SLOT_SECONDS = 900
SLOTS_PER_DAY = 96
TONEMAP_LEVELS = 8
DEFAULT_MAX_GAP_STEPS = 8
MIN_DAY_COVERAGE = 0.5

PHASE_COLUMNS = ("u1", "u2", "u3", "thd1", "thd2", "thd3", "ph1", "ph2", "ph3")
CHANNEL_COLUMNS = tuple(f"ch{i:03d}" for i in range(N_CHANNELS))
TONEMAP_COLUMNS = tuple(f"tm{i:03d}" for i in range(N_CHANNELS))


class PLCError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PLCError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(PLCError, ValueError):
    pass


class GapError(PLCError, ValueError):
    pass


class CoverageError(PLCError, ValueError):
    pass


@dataclass(frozen=True)
class Profile:
    """dB bounds of the measuring hardware."""

    name: str
    range_min: float
    range_max: float

    @property
    def bin_width(self) -> float:
        return (self.range_max - self.range_min) / TONEMAP_LEVELS


PROFILES = {
    "fin1": Profile("fin1", 0.0, 40.0),
    "fin2": Profile("fin2", -10.0, 40.0),
}


def get_profile(profile: Union[str, Profile]) -> Profile:
    if isinstance(profile, Profile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise ValidationError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}") from None


def derive_tonemap(snr, profile: Union[str, Profile] = "fin2") -> np.ndarray:
    """Quantize SNR values uniformly into the eight tonemap levels.

    Works on a single spectrum or on a stack of spectra; the level of each
    channel is ``floor((snr - range_min) / bin_width)`` clamped to ``0..7``.
    """
    prof = get_profile(profile)
    snr = np.asarray(snr, dtype=np.float64)
    levels = np.floor((snr - prof.range_min) / prof.bin_width)
    return np.clip(levels, 0, TONEMAP_LEVELS - 1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class ChannelSpectrum:
    values: np.ndarray
    profile: Profile = PROFILES["fin2"]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != (N_CHANNELS,):
            raise ValidationError(f"spectrum must have {N_CHANNELS} channels, got shape {values.shape}")
        _check_range(values, self.profile)
        object.__setattr__(self, "values", values)

    @property
    def range_min(self) -> float:
        return self.profile.range_min

    @property
    def range_max(self) -> float:
        return self.profile.range_max

    def tonemap(self) -> "ToneMap":
        return ToneMap(derive_tonemap(self.values, self.profile))


@dataclass(frozen=True, eq=False)
class ToneMap:
    levels: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels)
        if levels.shape != (N_CHANNELS,):
            raise ValidationError(f"tonemap must have {N_CHANNELS} levels")
        if levels.min() < 0 or levels.max() >= TONEMAP_LEVELS:
            raise ValidationError("tonemap levels must lie in 0..7")
        object.__setattr__(self, "levels", levels.astype(np.int8))


@dataclass(frozen=True, eq=False)
class PhaseMeasurements:
    """Per-phase node measurements for ``t`` timesteps (each field is t x 3)."""

    voltage: np.ndarray
    thd: np.ndarray
    phase_angle: np.ndarray

    def __post_init__(self):
        for name in ("voltage", "thd", "phase_angle"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise ValidationError(f"{name} must have shape (t, 3)")
            object.__setattr__(self, name, arr)
        if np.any(self.voltage < 0):
            raise ValidationError("voltage must be non-negative")
        if np.any(self.thd < 0):
            raise ValidationError("THD must be non-negative")
        if np.any((self.phase_angle < 0) | (self.phase_angle >= 360)):
            raise ValidationError("phase angle must lie in [0, 360)")

    def __len__(self) -> int:
        return self.voltage.shape[0]

    def as_matrix(self) -> np.ndarray:
        return np.hstack([self.voltage, self.thd, self.phase_angle])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "PhaseMeasurements":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:, 0:3], m[:, 3:6], m[:, 6:9])

    def take(self, idx) -> "PhaseMeasurements":
        return PhaseMeasurements.from_matrix(self.as_matrix()[idx])


def _check_range(values: np.ndarray, profile: Profile, row_offset: int = 0):
    bad = (values < profile.range_min) | (values > profile.range_max) | ~np.isfinite(values)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        v = values[tuple(idx)]
        where = f"row {idx[0] + row_offset}, channel {idx[-1]}" if values.ndim == 2 else f"channel {idx[0]}"
        raise ValidationError(
            f"SNR {v} dB at {where} outside [{profile.range_min}, {profile.range_max}] ({profile.name})"
        )


@dataclass(frozen=True, eq=False)
class MeasurementSeries:
    """SNR spectra of one directed PLC connection.

    ``filled`` is the provenance mask produced by gap filling: True marks rows
    that were synthesized rather than measured.
    """

    connection_id: str
    timestamps: np.ndarray
    spectra: np.ndarray
    tonemaps: Optional[np.ndarray] = None
    phases: Optional[PhaseMeasurements] = None
    profile: Profile = PROFILES["fin2"]
    filled: Optional[np.ndarray] = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        spectra = np.asarray(self.spectra, dtype=np.float32)
        if spectra.size == 0:
            spectra = spectra.reshape(0, N_CHANNELS)
        if spectra.ndim != 2 or spectra.shape[1] != N_CHANNELS:
            raise ValidationError(f"spectra must have shape (t, {N_CHANNELS}), got {spectra.shape}")
        if spectra.shape[0] != ts.shape[0]:
            raise ValidationError("spectra count must equal timestamp count")
        if np.any(ts % SLOT_SECONDS != 0):
            raise ValidationError("timestamps must lie on the 15-minute grid")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        _check_range(spectra, self.profile)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "spectra", spectra)
        if self.tonemaps is not None:
            tm = np.asarray(self.tonemaps)
            if tm.shape != spectra.shape:
                raise ValidationError("tonemaps must match spectra shape")
            if tm.size and (tm.min() < 0 or tm.max() >= TONEMAP_LEVELS):
                raise ValidationError("tonemap levels must lie in 0..7")
            object.__setattr__(self, "tonemaps", tm.astype(np.int8))
        if self.phases is not None and len(self.phases) != ts.size:
            raise ValidationError("phase measurement count must equal timestamp count")
        if self.filled is not None:
            mask = np.asarray(self.filled, dtype=bool).reshape(-1)
            if mask.shape != ts.shape:
                raise ValidationError("filled mask must match timestamp count")
            object.__setattr__(self, "filled", mask)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MeasurementSeries):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (
            self.connection_id == other.connection_id
            and self.profile == other.profile
            and same(self.timestamps, other.timestamps)
            and same(self.spectra, other.spectra)
            and same(self.tonemaps, other.tonemaps)
            and same(
                None if self.phases is None else self.phases.as_matrix(),
                None if other.phases is None else other.phases.as_matrix(),
            )
        )

    __hash__ = None

    @property
    def provenance_mask(self) -> np.ndarray:
        if self.filled is None:
            return np.zeros(len(self), dtype=bool)
        return self.filled

    def take(self, idx) -> "MeasurementSeries":
        idx = np.asarray(idx)
        return replace(
            self,
            timestamps=self.timestamps[idx],
            spectra=self.spectra[idx],
            tonemaps=None if self.tonemaps is None else self.tonemaps[idx],
            phases=None if self.phases is None else self.phases.take(idx),
            filled=None if self.filled is None else self.filled[idx],
        )

    def tonemaps_or_derived(self) -> np.ndarray:
        if self.tonemaps is not None:
            return self.tonemaps
        return derive_tonemap(self.spectra, self.profile)


@dataclass(frozen=True, eq=False)
class DayWindow:
    """One UTC day of SNR spectra (96 x 917)."""

    matrix: np.ndarray
    date: dt.date
    connection_id: str
    mask: np.ndarray = field(default_factory=lambda: np.zeros(SLOTS_PER_DAY, dtype=bool))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float32)
        if m.shape != (SLOTS_PER_DAY, N_CHANNELS):
            raise ValidationError(f"day window must be {SLOTS_PER_DAY}x{N_CHANNELS}, got {m.shape}")
        object.__setattr__(self, "matrix", m)


# ---------------------------------------------------------------- CSV format


def format_timestamp(ts: int) -> str:
    return dt.datetime.fromtimestamp(int(ts), tz=dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> int:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = dt.datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=dt.timezone.utc)
    return int(stamp.timestamp())


def _header_layout(header: list) -> tuple:
    if not header or header[0] != "timestamp":
        raise ParseError("header must start with 'timestamp'", 1)
    pos = 1
    if tuple(header[pos : pos + N_CHANNELS]) != CHANNEL_COLUMNS:
        raise ParseError("header must list ch000..ch916 after timestamp", 1)
    pos += N_CHANNELS
    has_tm = tuple(header[pos : pos + N_CHANNELS]) == TONEMAP_COLUMNS
    if has_tm:
        pos += N_CHANNELS
    has_phase = tuple(header[pos : pos + len(PHASE_COLUMNS)]) == PHASE_COLUMNS
    if has_phase:
        pos += len(PHASE_COLUMNS)
    if pos != len(header):
        raise ParseError(f"unexpected header column {header[pos]!r}", 1)
    return has_tm, has_phase


def parse_measurement_file(
    data: Union[bytes, str], profile: Union[str, Profile] = "fin2", connection_id: str = ""
) -> MeasurementSeries:
    """Parse one connection's CSV file into a validated series sorted by time."""
    prof = get_profile(profile)
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8: {exc}") from None
    reader = csv.reader(io.StringIO(data))
    header = next(reader, None)
    if header is None:
        raise ParseError("no rows")
    has_tm, has_phase = _header_layout(header)
    width = len(header)

    stamps, spectra, tonemaps, phases, lines = [], [], [], [], []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            raise ParseError(f"expected {width} fields, got {len(row)}", line_no)
        try:
            ts = parse_timestamp(row[0])
        except ValueError:
            raise ParseError(f"bad timestamp {row[0]!r}", line_no) from None
        try:
            values = np.array(row[1 : 1 + N_CHANNELS], dtype=np.float64)
            rest = row[1 + N_CHANNELS :]
            if has_tm:
                tm = np.array(rest[:N_CHANNELS], dtype=np.int64)
                rest = rest[N_CHANNELS:]
            ph = np.array(rest, dtype=np.float64) if has_phase else None
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", line_no) from None
        bad = (values < prof.range_min) | (values > prof.range_max) | ~np.isfinite(values)
        if np.any(bad):
            ch = int(np.argmax(bad))
            raise ValidationError(
                f"line {line_no}: SNR {values[ch]} dB on channel {ch} outside "
                f"[{prof.range_min}, {prof.range_max}] ({prof.name})"
            )
        if has_tm and (tm.min() < 0 or tm.max() >= TONEMAP_LEVELS):
            raise ValidationError(f"line {line_no}: tonemap level outside 0..7")
        stamps.append(ts)
        spectra.append(values)
        lines.append(line_no)
        if has_tm:
            tonemaps.append(tm)
        if has_phase:
            phases.append(ph)

    if not stamps:
        raise ParseError("no rows")
    stamps = np.array(stamps, dtype=np.int64)
    order = np.argsort(stamps, kind="stable")
    sorted_ts = stamps[order]
    dup = np.flatnonzero(np.diff(sorted_ts) == 0)
    if dup.size:
        first = order[dup[0] + 1]
        raise ValidationError(f"line {lines[first]}: duplicate timestamp {format_timestamp(sorted_ts[dup[0]])}")
    off_grid = np.flatnonzero(stamps % SLOT_SECONDS != 0)
    if off_grid.size:
        raise ValidationError(f"line {lines[off_grid[0]]}: timestamp not on the 15-minute grid")

    return MeasurementSeries(
        connection_id=connection_id,
        timestamps=sorted_ts,
        spectra=np.array(spectra)[order],
        tonemaps=np.array(tonemaps)[order] if has_tm else None,
        phases=PhaseMeasurements.from_matrix(np.array(phases)[order]) if has_phase else None,
        profile=prof,
    )


def serialize_measurement_file(series: MeasurementSeries) -> bytes:
    """Write a series in the CSV schema read by :func:`parse_measurement_file`."""
    header = ["timestamp", *CHANNEL_COLUMNS]
    if series.tonemaps is not None:
        header += TONEMAP_COLUMNS
    if series.phases is not None:
        header += PHASE_COLUMNS
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    phases = None if series.phases is None else series.phases.as_matrix()
    for i, ts in enumerate(series.timestamps):
        parts = [format_timestamp(ts)]
        parts.extend("%.3f" % v for v in series.spectra[i])
        if series.tonemaps is not None:
            parts.extend(str(int(v)) for v in series.tonemaps[i])
        if phases is not None:
            parts.extend("%.3f" % v for v in phases[i])
        out.write(",".join(parts) + "\n")
    return out.getvalue().encode("utf-8")


# ------------------------------------------------------------ gaps & windows


def _interpolate_rows(before: np.ndarray, after: np.ndarray, n: int) -> np.ndarray:
    w = (np.arange(1, n + 1) / (n + 1))[:, None]
    return before[None, :] * (1 - w) + after[None, :] * w


def fill_gaps(
    series: MeasurementSeries, policy: str = "hold_last", max_gap_steps: int = DEFAULT_MAX_GAP_STEPS
) -> MeasurementSeries:
    """Complete the 15-minute grid between the first and last timestamp.

    ``hold_last`` repeats the previous row, ``linear`` interpolates spectra and
    voltage/THD between the rows bounding the gap, ``reject`` raises on any gap.
    Filled rows are flagged in the returned series' ``filled`` mask.
    """
    if policy not in ("hold_last", "linear", "reject"):
        raise ValueError(f"unknown gap policy {policy!r}")
    if len(series) < 2:
        return replace(series, filled=series.provenance_mask.copy())
    steps = np.diff(series.timestamps) // SLOT_SECONDS
    missing = steps - 1
    if not np.any(missing):
        return replace(series, filled=series.provenance_mask.copy())
    if policy == "reject":
        k = int(np.argmax(missing > 0))
        raise GapError(f"gap of {missing[k]} steps after {format_timestamp(series.timestamps[k])}")
    too_long = np.flatnonzero(missing > max_gap_steps)
    if too_long.size:
        k = too_long[0]
        raise GapError(
            f"gap of {missing[k]} steps after {format_timestamp(series.timestamps[k])} exceeds max_gap_steps={max_gap_steps}"
        )

    t0 = series.timestamps[0]
    n_out = int((series.timestamps[-1] - t0) // SLOT_SECONDS) + 1
    pos = (series.timestamps - t0) // SLOT_SECONDS
    # source row for every output slot under hold_last
    src = np.searchsorted(pos, np.arange(n_out), side="right") - 1
    present = np.zeros(n_out, dtype=bool)
    present[pos] = True

    spectra = series.spectra[src].astype(np.float32)
    tonemaps = None if series.tonemaps is None else series.tonemaps[src]
    phase_m = None if series.phases is None else series.phases.as_matrix()[src]
    if policy == "linear":
        for k in np.flatnonzero(missing):
            a, b = pos[k], pos[k + 1]
            n = int(missing[k])
            interp = _interpolate_rows(series.spectra[k].astype(np.float64), series.spectra[k + 1].astype(np.float64), n)
            spectra[a + 1 : b] = np.round(interp, 3)
            if tonemaps is not None:
                tonemaps[a + 1 : b] = derive_tonemap(spectra[a + 1 : b], series.profile)
            if phase_m is not None:
                pm = series.phases.as_matrix()
                phase_m[a + 1 : b, :6] = _interpolate_rows(pm[k, :6], pm[k + 1, :6], n)

    filled = ~present
    if series.filled is not None:
        filled[pos] |= series.filled
    return MeasurementSeries(
        connection_id=series.connection_id,
        timestamps=t0 + np.arange(n_out, dtype=np.int64) * SLOT_SECONDS,
        spectra=spectra,
        tonemaps=tonemaps,
        phases=None if phase_m is None else PhaseMeasurements.from_matrix(phase_m),
        profile=series.profile,
        filled=filled,
    )


def day_start(date: Union[dt.date, str]) -> int:
    if isinstance(date, str):
        date = dt.date.fromisoformat(date)
    return int(dt.datetime(date.year, date.month, date.day, tzinfo=dt.timezone.utc).timestamp())


def window_day(series: MeasurementSeries, date: Union[dt.date, str], min_coverage: float = MIN_DAY_COVERAGE) -> DayWindow:
    """Cut one UTC day out of a series, holding the last value over missing slots.

    Slots missing before the first measurement of the day take the first
    measured row instead.
    """
    if isinstance(date, str):
        date = dt.date.fromisoformat(date)
    start = day_start(date)
    sel = np.flatnonzero((series.timestamps >= start) & (series.timestamps < start + 86400))
    if sel.size < min_coverage * SLOTS_PER_DAY:
        raise CoverageError(
            f"{series.connection_id or 'series'} covers {sel.size}/{SLOTS_PER_DAY} slots on {date}; "
            f"need at least {int(np.ceil(min_coverage * SLOTS_PER_DAY))}"
        )
    day = series.take(sel)
    # pin the grid to the day boundaries so fill_gaps completes the whole day
    slots = (day.timestamps - start) // SLOT_SECONDS
    filled = fill_gaps(day, "hold_last", max_gap_steps=SLOTS_PER_DAY)
    matrix = np.empty((SLOTS_PER_DAY, N_CHANNELS), dtype=np.float32)
    mask = np.ones(SLOTS_PER_DAY, dtype=bool)
    first, last = int(slots[0]), int(slots[-1])
    matrix[first : last + 1] = filled.spectra
    mask[first : last + 1] = filled.provenance_mask
    matrix[:first] = filled.spectra[0]
    matrix[last + 1 :] = filled.spectra[-1]
    return DayWindow(matrix=matrix, date=date, connection_id=series.connection_id, mask=mask)


def series_dates(series: MeasurementSeries) -> list:
    days = np.unique(series.timestamps // 86400)
    return [dt.date(1970, 1, 1) + dt.timedelta(days=int(d)) for d in days]


def iter_day_windows(series: MeasurementSeries, min_coverage: float = MIN_DAY_COVERAGE) -> Iterator[DayWindow]:
    """Yield a window for every date with sufficient coverage; others are skipped."""
    for date in series_dates(series):
        try:
            yield window_day(series, date, min_coverage)
        except CoverageError:
            continue
