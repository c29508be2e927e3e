"""CSV ingestion, standardization, chronological splits, sliding windows, synth.

Tables are immutable after load: T x N float64 values plus optional ISO
timestamps kept for bookkeeping only. Standardization statistics are always
fit on the training segment and applied unchanged everywhere else.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .autodiff import ConfigurationError

_TIMESTAMP_NAMES = {"date", "time", "timestamp", "datetime"}
_STD_FLOOR = 1e-12


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class SeriesTable:
    columns: list
    values: np.ndarray  # T x N float64
    timestamps: list | None = None

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class SplitSpec:
    """Chronological train/val/test shares; fractions (<= 1) or row counts."""

    train: float = 0.6
    val: float = 0.2
    test: float = 0.2


def load_csv(path) -> SeriesTable:
    """Parse a CSV into a table; a leading date-named column becomes timestamps."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [c.strip() for c in rows[0]]
    if not header:
        raise DataError(f"{path} has an empty header")
    has_stamps = header[0].strip().lower() in _TIMESTAMP_NAMES
    columns = header[1:] if has_stamps else header
    if not columns:
        raise DataError(f"{path} has no value columns")
    stamps: list | None = [] if has_stamps else None
    values = np.empty((len(rows) - 1, len(columns)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} cells, expected {len(header)}")
        if has_stamps:
            stamps.append(row[0].strip())
        for j, cell in enumerate(row[1:] if has_stamps else row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"non-numeric cell {cell!r} at row {i}, column {columns[j]!r}") from None
    if len(values) == 0:
        raise DataError(f"{path} has a header but no data rows")
    if stamps is not None:
        for k in range(1, len(stamps)):
            if stamps[k] <= stamps[k - 1]:
                raise DataError(f"timestamps not strictly increasing at row {k}: {stamps[k]!r}")
    return SeriesTable(columns=columns, values=values, timestamps=stamps)


def save_csv(table: SeriesTable, path) -> None:
    """Write a table back out at 17 significant digits (lossless for float64)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if table.timestamps is not None:
            fh.write("date," + ",".join(table.columns) + "\n")
            for stamp, row in zip(table.timestamps, table.values):
                fh.write(stamp + "," + ",".join(f"{x:.17g}" for x in row) + "\n")
        else:
            fh.write(",".join(table.columns) + "\n")
            for row in table.values:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def fit_stats(values: np.ndarray, columns=None) -> StandardizeStats:
    """Per-column mean and population standard deviation; constants are refused."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population, ddof=0
    for j, s in enumerate(std):
        if s <= _STD_FLOOR:
            name = columns[j] if columns is not None else f"#{j}"
            raise DataError(f"column {name!r} is constant (std={s!r}); cannot standardize")
    return StandardizeStats(mean=mean, std=std)


def apply_stats(values: np.ndarray, stats: StandardizeStats) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def destandardize(values: np.ndarray, stats: StandardizeStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


def standardize_table(table: SeriesTable) -> tuple[SeriesTable, StandardizeStats]:
    stats = fit_stats(table.values, table.columns)
    out = SeriesTable(columns=list(table.columns), values=apply_stats(table.values, stats),
                      timestamps=None if table.timestamps is None else list(table.timestamps))
    return out, stats


def split(table: SeriesTable, spec: SplitSpec, min_rows: int | None = None):
    """Chronological, contiguous, non-overlapping (train, val, test) tables."""
    t = table.length
    parts = (spec.train, spec.val, spec.test)
    if any(p < 0 for p in parts):
        raise ConfigurationError(f"split shares must be non-negative, got {parts}")
    if all(p <= 1.0 for p in parts):
        if sum(parts) > 1.0 + 1e-9:
            raise ConfigurationError(f"split fractions sum to {sum(parts)}, must be <= 1")
        counts = [int(math.floor(t * p)) for p in parts]
    else:
        counts = [int(p) for p in parts]
        if sum(counts) > t:
            raise ConfigurationError(f"split row counts {counts} exceed table length {t}")
    segments = []
    start = 0
    for count in counts:
        stop = start + count
        if min_rows is not None and count < min_rows:
            raise DataError(f"split segment of {count} rows is shorter than the required {min_rows}")
        segments.append(
            SeriesTable(
                columns=list(table.columns),
                values=table.values[start:stop].copy(),
                timestamps=None if table.timestamps is None else list(table.timestamps[start:stop]),
            )
        )
        start = stop
    return tuple(segments)


class WindowDataset:
    """Stride-1 sliding windows: input rows [k, k+H), target rows [k+H, k+H+F).

    Samples come out transposed to (N, H) / (N, F) to match the model's
    variables-first layout.
    """

    def __init__(self, values: np.ndarray, lookback: int, horizon: int):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"window source must be 2-D, got shape {values.shape}")
        if lookback < 1 or horizon < 1:
            raise ConfigurationError("lookback and horizon must be positive")
        if values.shape[0] < lookback + horizon:
            raise DataError(
                f"segment of {values.shape[0]} rows is too short for lookback {lookback} + horizon {horizon}"
            )
        self.values = values
        self.lookback = lookback
        self.horizon = horizon

    def __len__(self) -> int:
        return self.values.shape[0] - self.lookback - self.horizon + 1

    def __getitem__(self, k: int):
        if not 0 <= k < len(self):
            raise IndexError(k)
        x = self.values[k: k + self.lookback].T.copy()
        y = self.values[k + self.lookback: k + self.lookback + self.horizon].T.copy()
        return x, y

    def stack(self, indices):
        """Assemble a batch: (B, N, H) inputs and (B, N, F) targets."""
        xs, ys = zip(*(self[int(k)] for k in indices))
        return np.stack(xs), np.stack(ys)


def windows(table_or_values, lookback: int, horizon: int) -> WindowDataset:
    values = table_or_values.values if isinstance(table_or_values, SeriesTable) else table_or_values
    return WindowDataset(values, lookback, horizon)


# ---------------------------------------------------------------------------
# synthetic series

_SYNTH_PERIODS = (24.0, 37.0)
_SYNTH_AMPS = (1.2, 0.6)


@dataclass
class SynthParams:
    freqs: np.ndarray   # N x 2 angular frequencies
    phases: np.ndarray  # N x 2
    amps: tuple
    noise_std: float

    def clean_value(self, var: int, t) -> np.ndarray:
        """Deterministic part of variable `var` at (array of) time index t."""
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for c, amp in enumerate(self.amps):
            out += amp * np.sin(self.freqs[var, c] * t + self.phases[var, c])
        return out


def synth_with_params(n_vars: int, length: int, seed: int, heterogeneity: float = 1.0,
                      noise_std: float = 0.1) -> tuple[SeriesTable, SynthParams]:
    """Two sinusoids per variable plus Gaussian noise, fully seeded.

    Heterogeneity scales how far per-variable frequencies and phases spread
    from the shared base; at 0 every variable is the same pattern up to
    noise.
    """
    if n_vars < 1 or length < 1:
        raise ConfigurationError("synth needs n_vars >= 1 and length >= 1")
    rng = np.random.default_rng(seed)
    base = np.array([2.0 * math.pi / p for p in _SYNTH_PERIODS])
    freq_jitter = rng.uniform(-1.0, 1.0, (n_vars, 2))
    phase_jitter = rng.uniform(-1.0, 1.0, (n_vars, 2))
    freqs = base[None, :] * (1.0 + 0.5 * heterogeneity * freq_jitter)
    phases = math.pi * heterogeneity * phase_jitter
    noise = rng.normal(0.0, noise_std, (length, n_vars)) if noise_std > 0 else np.zeros((length, n_vars))
    params = SynthParams(freqs=freqs, phases=phases, amps=_SYNTH_AMPS, noise_std=noise_std)
    t = np.arange(length, dtype=np.float64)
    values = np.empty((length, n_vars))
    for i in range(n_vars):
        values[:, i] = params.clean_value(i, t) + noise[:, i]
    start = datetime(2020, 1, 1)
    stamps = [(start + timedelta(hours=k)).isoformat() for k in range(length)]
    table = SeriesTable(columns=[f"v{i}" for i in range(n_vars)], values=values, timestamps=stamps)
    return table, params


def synth(n_vars: int, length: int, seed: int, heterogeneity: float = 1.0, noise_std: float = 0.1) -> SeriesTable:
    table, _ = synth_with_params(n_vars, length, seed, heterogeneity, noise_std)
    return table


__all__ = [
    "DataError",
    "SeriesTable",
    "StandardizeStats",
    "SplitSpec",
    "load_csv",
    "save_csv",
    "fit_stats",
    "apply_stats",
    "destandardize",
    "standardize_table",
    "split",
    "WindowDataset",
    "windows",
    "SynthParams",
    "synth",
    "synth_with_params",
]
