"""Order book data: LOBSTER parsing, grid resampling, windowing, synthesis.

Column layout of the flattened data matrix
------------------------------------------
Every scalar series is keyed by ``VariableIndex(ticker, side, level,
feature)`` and columns are ordered lexicographically over
``(ticker, side, level, feature)`` with ``bid < ask`` and
``price < volume``; levels run 1..K. With T tickers there are
``N = T * 2 * 2 * K`` columns::

    column = ((ticker * 2 + side) * K + (level - 1)) * 2 + feature

so column 0 is the level-1 bid price of ticker 0 and column 3 its level-2
bid volume.

Dataset file
------------
A dataset file is one header line followed by a CSV matrix::

    # lobforecast-dataset {"columns": [...], "interval": 5.0, ...}
    34200.0,585.94,100.0,...

The header is JSON after the ``# lobforecast-dataset `` prefix and holds
the grid interval, the session bounds, ticker labels, K and the column
names. Each row is the grid timestamp followed by the N values, written
with ``repr`` so floats round-trip exactly.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    BadParams,
    ColumnCountMismatch,
    DataError,
    EmptyInput,
    GridMismatch,
    OrdinalViolation,
    RowCountMismatch,
    TooShort,
    UnknownVariable,
)

SIDES = ("bid", "ask")
FEATURES = ("price", "volume")
PRICE_SCALE = 10000.0  # LOBSTER integer prices are in 1/10000 dollars
SESSION = (34200.0, 57600.0)  # 9:30 to 16:00 in seconds after midnight
DATASET_TAG = "# lobforecast-dataset "


class TimestampOrderError(DataError):
    pass


# --------------------------------------------------------------------------
# variables
# --------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class VariableIndex:
    ticker: int
    side: str
    level: int
    feature: str

    def column(self, n_tickers, levels):
        if not (0 <= self.ticker < n_tickers and 1 <= self.level <= levels
                and self.side in SIDES and self.feature in FEATURES):
            raise UnknownVariable(f"{self} outside T={n_tickers}, K={levels}")
        s = SIDES.index(self.side)
        f = FEATURES.index(self.feature)
        return ((self.ticker * 2 + s) * levels + (self.level - 1)) * 2 + f

    @classmethod
    def from_column(cls, column, n_tickers, levels):
        n = n_tickers * 4 * levels
        if not 0 <= column < n:
            raise UnknownVariable(f"column {column} outside [0, {n})")
        column, f = divmod(column, 2)
        column, lv = divmod(column, levels)
        ticker, s = divmod(column, 2)
        return cls(ticker, SIDES[s], lv + 1, FEATURES[f])

    def name(self, tickers=None):
        label = tickers[self.ticker] if tickers else str(self.ticker)
        return f"{label}.{self.side}.{self.level}.{self.feature}"


def variable_table(n_tickers, levels):
    return [VariableIndex.from_column(c, n_tickers, levels)
            for c in range(n_tickers * 4 * levels)]


@dataclass(frozen=True)
class BookLayout:
    """Column indices of the price book of every ticker.

    ``ask_cols[t, k]`` / ``bid_cols[t, k]`` index the level-(k+1) ask / bid
    price of ticker t.
    """
    n_tickers: int
    levels: int
    ask_cols: np.ndarray
    bid_cols: np.ndarray
    is_price: np.ndarray

    @property
    def n_variables(self):
        return self.n_tickers * 4 * self.levels

    @property
    def price_cols(self):
        return np.flatnonzero(self.is_price)

    @property
    def volume_cols(self):
        return np.flatnonzero(~self.is_price)


def book_layout(n_tickers, levels):
    ask = np.empty((n_tickers, levels), dtype=np.int64)
    bid = np.empty((n_tickers, levels), dtype=np.int64)
    for t in range(n_tickers):
        for k in range(1, levels + 1):
            ask[t, k - 1] = VariableIndex(t, "ask", k, "price").column(n_tickers, levels)
            bid[t, k - 1] = VariableIndex(t, "bid", k, "price").column(n_tickers, levels)
    is_price = np.array([v.feature == "price" for v in variable_table(n_tickers, levels)])
    return BookLayout(n_tickers, levels, ask, bid, is_price)


# --------------------------------------------------------------------------
# snapshots and series
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LobSnapshot:
    timestamp: float
    bid_price: tuple
    bid_volume: tuple
    ask_price: tuple
    ask_volume: tuple

    def is_valid(self):
        return bool(valid_books(np.array([self.bid_price]), np.array([self.bid_volume]),
                                np.array([self.ask_price]), np.array([self.ask_volume]))[0])


def valid_books(bid_p, bid_v, ask_p, ask_v):
    """Row mask of books satisfying all ordinal and positivity invariants."""
    ok = (bid_p > 0).all(axis=1) & (ask_p > 0).all(axis=1)
    ok &= (bid_v > 0).all(axis=1) & (ask_v > 0).all(axis=1)
    ok &= (np.diff(ask_p, axis=1) > 0).all(axis=1)
    ok &= (np.diff(bid_p, axis=1) < 0).all(axis=1)
    ok &= bid_p[:, 0] < ask_p[:, 0]
    return ok


@dataclass
class LobSeries:
    """Book states of one ticker, in event time or on a uniform grid.

    Arrays are ``(n,)`` for times and ``(n, K)`` for the four books.
    ``interval`` is None for event-time series.
    """
    ticker: str
    times: np.ndarray
    bid_price: np.ndarray
    bid_volume: np.ndarray
    ask_price: np.ndarray
    ask_volume: np.ndarray
    interval: float = None

    @property
    def levels(self):
        return self.bid_price.shape[1]

    def __len__(self):
        return self.times.shape[0]

    def __getitem__(self, i):
        return LobSnapshot(float(self.times[i]),
                           tuple(self.bid_price[i].tolist()), tuple(self.bid_volume[i].tolist()),
                           tuple(self.ask_price[i].tolist()), tuple(self.ask_volume[i].tolist()))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def valid_mask(self):
        return valid_books(self.bid_price, self.bid_volume, self.ask_price, self.ask_volume)


def _empty_series(ticker, levels):
    z = np.zeros((0, levels))
    return LobSeries(ticker, np.zeros(0), z, z.copy(), z.copy(), z.copy())


# --------------------------------------------------------------------------
# LOBSTER parsing
# --------------------------------------------------------------------------

def _read_rows(path):
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]


def parse_lobster(orderbook_path, message_path, levels=5, ticker=""):
    """Parse a LOBSTER orderbook/message file pair into an event-time series.

    Orderbook rows hold ``ask_p1, ask_v1, bid_p1, bid_v1, ...`` for K levels
    with prices in 1e-4 dollar units; message rows
    ``time, type, order_id, size, price, direction`` align one-to-one and
    only supply timestamps. Rows that break the ordinal book structure (or
    hold non-positive prices/volumes, e.g. LOBSTER's empty-level dummies)
    raise :class:`OrdinalViolation` with the 1-based row number.
    """
    book_rows = _read_rows(orderbook_path)
    msg_rows = _read_rows(message_path)
    if len(book_rows) != len(msg_rows):
        raise RowCountMismatch(
            f"{orderbook_path} has {len(book_rows)} rows but {message_path} has {len(msg_rows)}")
    if not book_rows:
        return _empty_series(ticker, levels)
    width = 4 * levels
    for i, row in enumerate(book_rows, start=1):
        if len(row) != width:
            raise ColumnCountMismatch(
                f"{orderbook_path} row {i}: expected {width} columns, found {len(row)}")
    for i, row in enumerate(msg_rows, start=1):
        if len(row) != 6:
            raise ColumnCountMismatch(
                f"{message_path} row {i}: expected 6 columns, found {len(row)}")
    try:
        book = np.array(book_rows, dtype=np.float64)
        times = np.array([r[0] for r in msg_rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"non-numeric field: {exc}") from exc

    ask_p = book[:, 0::4] / PRICE_SCALE
    ask_v = book[:, 1::4]
    bid_p = book[:, 2::4] / PRICE_SCALE
    bid_v = book[:, 3::4]
    bad = np.flatnonzero(~valid_books(bid_p, bid_v, ask_p, ask_v))
    if bad.size:
        raise OrdinalViolation(int(bad[0]) + 1)
    back = np.flatnonzero(np.diff(times) < 0)
    if back.size:
        raise TimestampOrderError(f"{message_path} row {int(back[0]) + 2}: time goes backwards")
    return LobSeries(ticker, times, bid_p, bid_v, ask_p, ask_v)


# --------------------------------------------------------------------------
# resampling and assembly
# --------------------------------------------------------------------------

def grid_times(interval=5.0, session=SESSION):
    start, end = float(session[0]), float(session[1])
    if interval <= 0 or end < start:
        raise BadParams(f"bad grid: interval={interval}, session={session}")
    count = int(math.floor((end - start) / interval + 1e-9)) + 1
    return start + interval * np.arange(count)


def resample(series, interval=5.0, session=SESSION):
    """Sample an event-time series on a uniform grid by LOCF.

    Grid points before the first event take the first event's state.
    """
    if len(series) == 0:
        raise EmptyInput("cannot resample an empty series")
    grid = grid_times(interval, session)
    idx = kernels.locf_index(series.times, grid)
    return LobSeries(series.ticker, grid, series.bid_price[idx], series.bid_volume[idx],
                     series.ask_price[idx], series.ask_volume[idx], float(interval))


@dataclass
class LobDataset:
    """Gridded multi-ticker data matrix plus its column metadata."""
    times: np.ndarray
    values: np.ndarray
    tickers: list
    levels: int
    interval: float
    session: tuple = SESSION
    variables: list = field(default=None)

    def __post_init__(self):
        if self.variables is None:
            self.variables = variable_table(len(self.tickers), self.levels)

    def __len__(self):
        return len(self.times)

    def __getitem__(self, rows):
        if not isinstance(rows, slice):
            raise TypeError("LobDataset supports slicing by rows only")
        return LobDataset(self.times[rows], self.values[rows], list(self.tickers),
                          self.levels, self.interval, self.session, list(self.variables))

    @property
    def n_variables(self):
        return self.values.shape[1]

    @property
    def layout(self):
        return book_layout(len(self.tickers), self.levels)

    def column(self, var):
        return var.column(len(self.tickers), self.levels)

    def column_names(self):
        return [v.name(self.tickers) for v in self.variables]


def concat_tickers(series_list):
    """Stack gridded series column-wise in (ticker, side, level, feature) order."""
    if not series_list:
        raise EmptyInput("no series to concatenate")
    first = series_list[0]
    levels = first.levels
    for s in series_list[1:]:
        if s.levels != levels:
            raise GridMismatch(f"level count differs: {s.levels} vs {levels}")
        if s.times.shape != first.times.shape or not np.array_equal(s.times, first.times):
            raise GridMismatch(f"grid of {s.ticker!r} differs from {first.ticker!r}")
    t = len(series_list)
    values = np.empty((len(first), t * 4 * levels))
    for ti, s in enumerate(series_list):
        for si, side in enumerate(SIDES):
            price = s.bid_price if side == "bid" else s.ask_price
            vol = s.bid_volume if side == "bid" else s.ask_volume
            for k in range(levels):
                base = ((ti * 2 + si) * levels + k) * 2
                values[:, base] = price[:, k]
                values[:, base + 1] = vol[:, k]
    tickers = [s.ticker or f"T{i}" for i, s in enumerate(series_list)]
    return LobDataset(first.times.copy(), values, tickers, levels,
                      first.interval if first.interval is not None else float("nan"))


# --------------------------------------------------------------------------
# splitting and windowing
# --------------------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")


def split_bounds(n, ratios=(6, 2, 2)):
    """Start/stop row indices of the chronological train/val/test segments."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise BadParams(f"split ratios must be three positive numbers, got {ratios}")
    total = float(sum(ratios))
    n_train = int(math.floor(n * ratios[0] / total + 1e-9))
    n_val = int(math.floor(n * ratios[1] / total + 1e-9))
    return ((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n))


def split(data, ratios=(6, 2, 2), min_length=0):
    """Cut ``data`` (rows = time) into train/val/test segments.

    Raises TooShort when any segment has fewer than ``min_length`` rows.
    """
    bounds = split_bounds(len(data), ratios)
    for name, (a, b) in zip(SPLIT_NAMES, bounds):
        if b - a < min_length:
            raise TooShort(f"{name} segment has {b - a} rows, need {min_length}")
    return tuple(data[a:b] for a, b in bounds)


@dataclass
class WindowPair:
    context: np.ndarray
    target: np.ndarray
    context_times: np.ndarray
    target_times: np.ndarray
    split: str = "train"
    lead: np.ndarray = None  # raw rows just before the context (percent-change seed)
    start: int = 0


def window_count(length, context=120, target=24, stride=1, lead=0):
    if length < lead + context + target:
        return 0
    return (length - lead - context - target) // stride + 1


def make_windows(segment, context=120, target=24, stride=1, times=None, lead=0,
                 tag="train"):
    """Slide (context, target) windows over a segment with the given stride.

    With ``lead > 0`` every window also keeps the ``lead`` rows preceding
    its context, and the first window starts at row ``lead``.
    """
    segment = np.asarray(segment, dtype=np.float64)
    if stride < 1 or context < 1 or target < 1:
        raise BadParams("context, target and stride must be >= 1")
    n = window_count(len(segment), context, target, stride, lead)
    if n == 0:
        raise TooShort(
            f"segment of {len(segment)} rows is shorter than {lead + context + target}")
    if times is None:
        times = np.arange(len(segment), dtype=np.float64)
    out = []
    for w in range(n):
        s = lead + w * stride
        out.append(WindowPair(
            context=segment[s:s + context],
            target=segment[s + context:s + context + target],
            context_times=times[s:s + context],
            target_times=times[s + context:s + context + target],
            split=tag,
            lead=segment[s - lead:s] if lead else None,
            start=s,
        ))
    return out


# --------------------------------------------------------------------------
# synthetic books
# --------------------------------------------------------------------------

@dataclass
class SynthParams:
    """Parameters of the synthetic book generator.

    Prices live on a tick grid. The mid-price follows a geometric random
    walk; the half-spread and every level gap are drawn each step as whole
    ticks, so books are valid by construction.
    """
    levels: int = 5
    mid_start: float = 100.0
    mid_step: float = 25.0  # added to mid_start per extra ticker
    volatility: float = 2e-4  # per-step log-return standard deviation
    tick: float = 0.01
    half_spread_ticks: tuple = (1, 4)
    level_gap_ticks: tuple = (1, 3)
    volume_median: float = 300.0
    volume_sigma: float = 0.6
    interval: float = 5.0
    start: float = SESSION[0]

    def validate(self):
        lo, hi = self.half_spread_ticks
        glo, ghi = self.level_gap_ticks
        if self.levels < 1:
            raise BadParams("levels must be >= 1")
        if self.mid_start <= 0 or self.tick <= 0 or self.interval <= 0:
            raise BadParams("mid_start, tick and interval must be positive")
        if self.volatility < 0 or self.volume_sigma < 0 or self.volume_median <= 0:
            raise BadParams("volatility and volume parameters must be nonnegative")
        if not 1 <= lo <= hi or not 1 <= glo <= ghi:
            raise BadParams("tick ranges must satisfy 1 <= low <= high")


def synth_generate(seed, n_steps, ticker_count=1, params=None):
    """Seeded synthetic gridded LOB series, one per ticker."""
    params = params or SynthParams()
    params.validate()
    if n_steps < 1 or ticker_count < 1:
        raise BadParams("n_steps and ticker_count must be >= 1")
    rng = np.random.default_rng(seed)
    k = params.levels
    times = params.start + params.interval * np.arange(n_steps)
    out = []
    for t in range(ticker_count):
        mid0 = params.mid_start + params.mid_step * t
        shocks = rng.standard_normal(n_steps)
        shocks[0] = 0.0
        mid = mid0 * np.exp(np.cumsum(params.volatility * shocks))
        center = np.round(mid / params.tick)
        half = rng.integers(params.half_spread_ticks[0], params.half_spread_ticks[1] + 1,
                            size=(n_steps, 1, 1))
        gaps = rng.integers(params.level_gap_ticks[0], params.level_gap_ticks[1] + 1,
                            size=(n_steps, 2, k))
        gaps[:, :, 0] = 0
        offsets = half + np.cumsum(gaps, axis=2)  # (n, side, level) in ticks
        bid_p = (center[:, None] - offsets[:, 0]) * params.tick
        ask_p = (center[:, None] + offsets[:, 1]) * params.tick
        vols = np.ceil(params.volume_median
                       * np.exp(params.volume_sigma * rng.standard_normal((n_steps, 2, k))))
        if (bid_p <= 0).any():
            raise BadParams("generated prices reached zero; lower volatility or raise mid_start")
        out.append(LobSeries(f"SYN{t}", times.copy(), bid_p, vols[:, 0], ask_p, vols[:, 1],
                             float(params.interval)))
    return out


def synth_dataset(seed, n_steps, ticker_count=1, params=None):
    params = params or SynthParams()
    ds = concat_tickers(synth_generate(seed, n_steps, ticker_count, params))
    ds.session = (float(params.start), float(params.start + params.interval * (n_steps - 1)))
    return ds


# --------------------------------------------------------------------------
# dataset file
# --------------------------------------------------------------------------

def write_dataset(path, ds):
    header = {
        "version": 1,
        "interval": ds.interval,
        "session": list(ds.session),
        "tickers": list(ds.tickers),
        "levels": ds.levels,
        "n_variables": ds.n_variables,
        "columns": ds.column_names(),
    }
    lines = [DATASET_TAG + json.dumps(header, sort_keys=True)]
    for t, row in zip(ds.times.tolist(), ds.values.tolist()):
        lines.append(",".join(map(repr, [t] + row)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path):
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith(DATASET_TAG):
            raise DataError(f"{path}: missing dataset header")
        header = json.loads(first[len(DATASET_TAG):])
        body = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
    n = int(header["n_variables"])
    if body.size and body.shape[1] != n + 1:
        raise ColumnCountMismatch(f"{path}: expected {n + 1} columns, found {body.shape[1]}")
    if body.size == 0:
        body = np.zeros((0, n + 1))
    return LobDataset(body[:, 0].copy(), body[:, 1:].copy(), list(header["tickers"]),
                      int(header["levels"]), float(header["interval"]),
                      tuple(header["session"]))
