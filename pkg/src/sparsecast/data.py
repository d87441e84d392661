"""CSV ingestion, scaling, chronological splits, window generation, metrics.

Frames are immutable after load; window generation is a pure iterator
over one split, so samples never straddle a split boundary.
"""

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .embedding import STAMP_CATEGORIES

SCHEMAS = ("ett", "aiops", "generic")
SCALER_MODES = ("standardize_per_dim", "normalize_per_dim", "standardize_global",
                "normalize_global", "none")
SCALER_SCOPES = ("train_only", "train_plus_test")

AIOPS_COLUMNS = [
    "SP1A-DASD-RESP", "SP1A-DASD-RATE", "SP1B-DASD-RESP", "SP1B-DASD-RATE",
    "SP1C-DASD-RESP", "SP1C-DASD-RATE", "SP1D-DASD-RESP", "SP1D-DASD-RATE",
    "SP1A-MEM", "SP1B-MEM", "SP1C-MEM", "SP1D-MEM",
    "N-TASKS", "TPS", "SP1A-THOUT", "SP1B-THOUT", "SP1C-THOUT", "SP1D-THOUT",
    "SYSPLEX-MIPS", "RESP-TIME",
]
AIOPS_TARGET = "RESP-TIME"
ETT_TARGET = "OT"


class DataError(ValueError):
    pass


@dataclass
class TimeSeriesFrame:
    """Uniformly sampled multivariate series with named float64 columns."""

    timestamps: list
    values: np.ndarray  # (L, D)
    columns: list
    target_columns: list

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise DataError("values shape does not match column names")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError("timestamp count does not match row count")
        if not np.isfinite(self.values).all():
            raise DataError("frame contains non-finite values")
        if len(self.timestamps) >= 2:
            step = self.timestamps[1] - self.timestamps[0]
            if step <= timedelta(0):
                raise DataError("timestamps must be strictly increasing")
            for i in range(1, len(self.timestamps)):
                if self.timestamps[i] - self.timestamps[i - 1] != step:
                    raise DataError(f"irregular timestamp spacing at row {i}")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def interval(self) -> timedelta:
        if len(self.timestamps) < 2:
            raise DataError("need at least two rows to know the sampling interval")
        return self.timestamps[1] - self.timestamps[0]

    def target_indices(self) -> list:
        return [self.columns.index(c) for c in self.target_columns]

    def slice(self, start: int, stop: int) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.timestamps[start:stop],
                               self.values[start:stop].copy(),
                               list(self.columns), list(self.target_columns))

    def with_values(self, values: np.ndarray) -> "TimeSeriesFrame":
        return TimeSeriesFrame(list(self.timestamps), values, list(self.columns),
                               list(self.target_columns))


def _parse_timestamp(text: str, row: int) -> datetime:
    try:
        return datetime.strptime(text.strip(), "%Y-%m-%d %H:%M:%S")
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise DataError(f"row {row}: cannot parse timestamp {text!r}") from exc


def load_csv(path, schema: str = "generic", target: str | None = None) -> TimeSeriesFrame:
    """Load a header + timestamp-first CSV file into a frame.

    Schemas: ``ett`` expects 7 numeric columns with an ``OT`` target;
    ``aiops`` expects 20 numeric columns with a ``RESP-TIME`` target and
    5-minute sampling; ``generic`` accepts anything (target defaults to
    the last column).
    """
    if schema not in SCHEMAS:
        raise DataError(f"unknown schema {schema!r}")
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty CSV file") from None
        columns = [c.strip() for c in header[1:]]
        timestamps, rows = [], []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} cells, got {len(record)}")
            timestamps.append(_parse_timestamp(record[0], lineno))
            parsed = []
            for col, cell in zip(columns, record[1:]):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"row {lineno}, column {col!r}: non-numeric cell {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataError("CSV has a header but no data rows")
    values = np.asarray(rows, dtype=np.float64)

    if schema == "aiops":
        if len(columns) != 20:
            raise DataError(f"aiops schema expects 20 columns, found {len(columns)}")
        if AIOPS_TARGET not in columns:
            raise DataError(f"aiops schema requires a {AIOPS_TARGET!r} column")
        target_columns = [AIOPS_TARGET]
    elif schema == "ett":
        if len(columns) != 7:
            raise DataError(f"ett schema expects 7 columns, found {len(columns)}")
        if ETT_TARGET not in columns:
            raise DataError(f"ett schema requires an {ETT_TARGET!r} column")
        target_columns = [ETT_TARGET]
    else:
        if target is not None and target not in columns:
            raise DataError(f"target column {target!r} not in CSV header")
        target_columns = [target if target is not None else columns[-1]]

    frame = TimeSeriesFrame(timestamps, values, columns, target_columns)
    if schema == "aiops" and frame.interval != timedelta(minutes=5):
        raise DataError(f"aiops schema expects 5-minute sampling, found {frame.interval}")
    return frame


def split_622(frame: TimeSeriesFrame, min_len: int = 2):
    """Chronological 6:2:2 split.

    train gets floor(0.6 L); validation and test share the remainder
    (validation floor, test the rest), so L=101583 yields
    60949/20317/20317 and L=10 yields 6/2/2.  Every split must be able to
    hold at least one window of ``min_len`` rows.
    """
    L = len(frame)
    n_train = int(0.6 * L)
    n_val = (L - n_train) // 2
    n_test = L - n_train - n_val
    if min(n_train, n_val, n_test) < min_len:
        raise DataError(
            f"split of length-{L} frame too short for windows of {min_len} rows "
            f"(train={n_train}, val={n_val}, test={n_test})"
        )
    return (frame.slice(0, n_train),
            frame.slice(n_train, n_train + n_val),
            frame.slice(n_train + n_val, L))


class StandardScaler:
    """Invertible per-dimension or global scaling with a fixed fit scope.

    ``standardize_*`` subtracts the mean and divides by the population
    std; ``normalize_*`` maps min..max to [0, 1].  ``*_global`` modes use
    one statistic across every dimension.
    """

    def __init__(self, mode: str = "standardize_per_dim"):
        if mode not in SCALER_MODES:
            raise DataError(f"unknown scaler mode {mode!r}")
        self.mode = mode
        self.shift_ = None
        self.scale_ = None

    def fit(self, values: np.ndarray, columns=None) -> "StandardScaler":
        values = np.asarray(values, dtype=np.float64)
        names = columns if columns is not None else [str(i) for i in range(values.shape[1])]
        if self.mode == "none":
            self.shift_ = np.zeros(values.shape[1])
            self.scale_ = np.ones(values.shape[1])
            return self
        if self.mode == "standardize_per_dim":
            shift = values.mean(axis=0)
            scale = values.std(axis=0)
        elif self.mode == "normalize_per_dim":
            shift = values.min(axis=0)
            scale = values.max(axis=0) - shift
        elif self.mode == "standardize_global":
            shift = np.full(values.shape[1], values.mean())
            scale = np.full(values.shape[1], values.std())
        else:  # normalize_global
            lo = values.min()
            shift = np.full(values.shape[1], lo)
            scale = np.full(values.shape[1], values.max() - lo)
        tiny = scale <= 1e-12
        if tiny.any():
            raise DataError(
                f"cannot fit {self.mode!r}: zero spread in column {names[int(np.nonzero(tiny)[0][0])]!r}"
            )
        self.shift_, self.scale_ = shift, scale
        return self

    def _check_fitted(self):
        if self.shift_ is None:
            raise DataError("scaler is not fitted")

    def apply(self, values: np.ndarray, columns=None) -> np.ndarray:
        self._check_fitted()
        shift, scale = self._select(columns)
        return (np.asarray(values, dtype=np.float64) - shift) / scale

    def inverse(self, values: np.ndarray, columns=None) -> np.ndarray:
        self._check_fitted()
        shift, scale = self._select(columns)
        return np.asarray(values, dtype=np.float64) * scale + shift

    def _select(self, columns):
        if columns is None:
            return self.shift_, self.scale_
        idx = np.asarray(columns, dtype=np.intp)
        return self.shift_[idx], self.scale_[idx]


def fit_apply_scaler(train: TimeSeriesFrame, others, mode: str = "standardize_per_dim",
                     scope: str = "train_only"):
    """Fit a scaler on the chosen scope and apply it to every frame.

    ``others`` is (validation, test).  With ``scope="train_only"`` the
    statistics never see anything outside the training split; with
    ``scope="train_plus_test"`` they pool train and the final (test)
    frame, which reproduces the unified-processing comparison but leaks.
    Returns ([scaled train, *scaled others], scaler).
    """
    if scope not in SCALER_SCOPES:
        raise DataError(f"unknown scaler scope {scope!r}")
    scaler = StandardScaler(mode)
    if scope == "train_only" or not others:
        fit_values = train.values
    else:
        fit_values = np.vstack([train.values, others[-1].values])
    scaler.fit(fit_values, columns=train.columns)
    frames = [train, *others]
    return [f.with_values(scaler.apply(f.values)) for f in frames], scaler


def timestamp_features(timestamps) -> np.ndarray:
    """(L, 5) integer stamp matrix: month, day, weekday, hour, 15-minute bucket."""
    out = np.empty((len(timestamps), len(STAMP_CATEGORIES)), dtype=np.intp)
    for i, ts in enumerate(timestamps):
        out[i] = (ts.month, ts.day, ts.weekday(), ts.hour, ts.minute // 15)
    return out


@dataclass
class WindowSample:
    """One training example: encoder window, calendar stamps, decoder warm
    start, and the target horizon block."""

    enc_values: np.ndarray   # (L_x, d_x)
    enc_stamps: np.ndarray   # (L_x, 5)
    dec_stamps: np.ndarray   # (label_len + L_y, 5)
    known_tail: np.ndarray   # (label_len, d_y)
    target: np.ndarray       # (L_y, d_y)
    origin: int = 0


def make_windows(frame: TimeSeriesFrame, L_x: int, label_len: int, L_y: int,
                 h: int = 0, univariate: bool = False) -> list:
    """Stride-1 sliding windows over one split.

    The count is L - L_x - h - L_y + 1.  Univariate mode uses the target
    column(s) as both input and output; multivariate mode feeds every
    column and predicts every column.
    """
    L = len(frame)
    needed = L_x + h + L_y
    if L < needed:
        raise DataError(f"frame of length {L} too short for windows of {needed} rows")
    if label_len > L_x:
        raise DataError(f"label_len={label_len} exceeds L_x={L_x}")
    target_idx = frame.target_indices()
    input_idx = target_idx if univariate else list(range(len(frame.columns)))
    output_idx = target_idx if univariate else list(range(len(frame.columns)))
    stamps = timestamp_features(frame.timestamps)

    samples = []
    for t in range(L - needed + 1):
        enc_stop = t + L_x
        tgt_start = enc_stop + h
        dec_stamps = np.vstack([stamps[enc_stop - label_len:enc_stop],
                                stamps[tgt_start:tgt_start + L_y]])
        samples.append(WindowSample(
            enc_values=frame.values[t:enc_stop, input_idx],
            enc_stamps=stamps[t:enc_stop],
            dec_stamps=dec_stamps,
            known_tail=frame.values[enc_stop - label_len:enc_stop, output_idx],
            target=frame.values[tgt_start:tgt_start + L_y, output_idx],
            origin=t,
        ))
    return samples


@dataclass
class MetricResult:
    """Pearson correlation, mean squared error, mean absolute error."""

    corr: float
    mse: float
    mae: float
    n: int
    flags: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"corr": self.corr, "mse": self.mse, "mae": self.mae,
                           "n": self.n, "flags": self.flags})


def _pearson(y: np.ndarray, y_hat: np.ndarray):
    yc = y - y.mean()
    pc = y_hat - y_hat.mean()
    denom_y = np.sqrt((yc * yc).sum())
    denom_p = np.sqrt((pc * pc).sum())
    flags = []
    if denom_y <= 0.0:
        flags.append("zero_variance_truth")
    if denom_p <= 0.0:
        flags.append("zero_variance_prediction")
    if flags:
        return 0.0, flags
    return float((yc * pc).sum() / (denom_y * denom_p)), flags


def metrics(y, y_hat) -> MetricResult:
    """CORR / MSE / MAE between truth and prediction.

    Multivariate inputs score correlation per output dimension and
    average; MSE and MAE run over every entry.  A zero-variance series
    reports correlation 0 with a flag instead of failing.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DataError(f"shape mismatch: truth {y.shape} vs prediction {y_hat.shape}")
    if y.shape[0] < 2:
        raise DataError("metrics need at least two rows")
    y2 = y.reshape(y.shape[0], -1)
    p2 = y_hat.reshape(y.shape[0], -1)
    corrs, flags = [], []
    for d in range(y2.shape[1]):
        corr_d, flag_d = _pearson(y2[:, d], p2[:, d])
        corrs.append(corr_d)
        flags.extend(f"{f}_dim{d}" if y2.shape[1] > 1 else f for f in flag_d)
    diff = p2 - y2
    return MetricResult(
        corr=float(np.mean(corrs)),
        mse=float(np.mean(diff * diff)),
        mae=float(np.mean(np.abs(diff))),
        n=int(y.shape[0]),
        flags=flags,
    )


def synthetic_seasonal_frame(length: int, dims: int, periods=(96, 24),
                             amplitudes=(1.0, 0.4), noise: float = 0.1,
                             interval_minutes: int = 60, seed: int = 0,
                             start: str = "2020-01-01 00:00:00",
                             columns=None, target: str | None = None) -> TimeSeriesFrame:
    """Sum-of-sinusoids test series with per-dimension phase offsets."""
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)[:, None]
    phase = rng.uniform(0.0, 2 * np.pi, size=(2, dims))
    values = np.zeros((length, dims))
    for (period, amp, ph) in zip(periods, amplitudes, phase):
        values += amp * np.sin(2 * np.pi * t / period + ph[None, :])
    values += rng.normal(0.0, noise, size=values.shape)
    start_ts = datetime.strptime(start, "%Y-%m-%d %H:%M:%S")
    timestamps = [start_ts + timedelta(minutes=interval_minutes * i) for i in range(length)]
    if columns is None:
        columns = [f"series_{i}" for i in range(dims)]
    target_columns = [target if target is not None else columns[-1]]
    return TimeSeriesFrame(timestamps, values, list(columns), target_columns)


def synthetic_aiops_frame(length: int, seed: int = 0) -> TimeSeriesFrame:
    """A frame that matches the 20-column operations schema (5-minute ticks)."""
    frame = synthetic_seasonal_frame(length, dims=20, periods=(288, 12),
                                     amplitudes=(1.0, 0.3), noise=0.05,
                                     interval_minutes=5, seed=seed,
                                     columns=AIOPS_COLUMNS, target=AIOPS_TARGET)
    return frame


def write_csv(frame: TimeSeriesFrame, path):
    """Write a frame back out in the loader's CSV dialect."""
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["date", *frame.columns])
        for ts, row in zip(frame.timestamps, frame.values):
            writer.writerow([ts.strftime("%Y-%m-%d %H:%M:%S"), *[repr(float(v)) for v in row]])
