"""Percent-change and min-max input pipeline with exact inverses.

Prices are turned into relative first differences, then every variable is
min-max scaled with statistics of the training split only. Volumes skip
the percent-change step. Three modes are available:

========  =========================  ===============================
mode      prices                     volumes
========  =========================  ===============================
percent   percent-change             raw
minmax    min-max of raw price       min-max
both      min-max of percent-change  min-max
========  =========================  ===============================

Percent-change consumes one grid point, so windows carry the raw row that
precedes their context (``WindowPair.lead``). Predictions are mapped back
to dollars by compounding the predicted changes from the last raw context
price of the window.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import BadParams, ChangeBelowMinusOne, NonPositivePrice, TooShort

MODES = ("percent", "minmax", "both")
TRANSFORM_LABELS = {
    "percent": "Percent-change",
    "minmax": "Min-max",
    "both": "Percent-change + Minmax",
}


def percent_change(prices, axis=0):
    prices = np.asarray(prices, dtype=np.float64)
    if prices.shape[axis] < 2:
        raise TooShort("percent change needs at least two observations")
    if not (prices > 0).all():
        raise NonPositivePrice("percent change needs strictly positive prices")
    prev = np.take(prices, np.arange(prices.shape[axis] - 1), axis=axis)
    cur = np.take(prices, np.arange(1, prices.shape[axis]), axis=axis)
    return (cur - prev) / prev


def inverse_percent_change(changes, anchor, axis=0):
    """Compound ``changes`` forward from ``anchor`` (the price before them)."""
    changes = np.asarray(changes, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if not (anchor > 0).all():
        raise NonPositivePrice("anchor price must be positive")
    if (changes <= -1.0).any():
        raise ChangeBelowMinusOne("a change of -100% or less has no positive inverse")
    return np.expand_dims(anchor, axis) * np.cumprod(1.0 + changes, axis=axis)


# --------------------------------------------------------------------------
# min-max scaling
# --------------------------------------------------------------------------

def minmax_fit(train):
    train = np.asarray(train, dtype=np.float64)
    return train.min(axis=0), train.max(axis=0)


def minmax_apply(x, minimum, maximum):
    """Map ``minimum`` to 0 and ``maximum`` to 1 per column.

    Values outside the fitted range land outside [0, 1]. Constant columns
    (``maximum == minimum``) map to 0.5.
    """
    x = np.asarray(x, dtype=np.float64)
    span = maximum - minimum
    flat = span == 0
    safe = np.where(flat, 1.0, span)
    return np.where(flat, 0.5, (x - minimum) / safe)


def minmax_invert(y, minimum, maximum):
    y = np.asarray(y, dtype=np.float64)
    span = maximum - minimum
    return np.where(span == 0, minimum + 0.0 * y, y * span + minimum)


@dataclass
class ScalerParams:
    """Per-variable scaling statistics of the transformed training series."""
    mode: str
    minimum: np.ndarray
    maximum: np.ndarray
    is_price: np.ndarray

    @property
    def percent(self):
        return self.mode in ("percent", "both")

    def to_arrays(self):
        return {
            "scaler.min": self.minimum,
            "scaler.max": self.maximum,
            "scaler.is_price": self.is_price.astype(np.float64),
        }

    @classmethod
    def from_arrays(cls, mode, arrays):
        return cls(mode, arrays["scaler.min"].copy(), arrays["scaler.max"].copy(),
                   arrays["scaler.is_price"] > 0.5)


def _check_mode(mode):
    if mode not in MODES:
        raise BadParams(f"unknown transform mode {mode!r}; expected one of {MODES}")


def stationary(raw, is_price, mode):
    """Rows 1.. of ``raw`` with price columns percent-changed when the mode asks.

    Returns ``len(raw) - 1`` rows in every mode so all modes see the same
    time steps.
    """
    _check_mode(mode)
    raw = np.asarray(raw, dtype=np.float64)
    out = raw[1:].copy()
    if mode in ("percent", "both"):
        out[:, is_price] = percent_change(raw[:, is_price], axis=0)
    return out


def fit_pipeline(raw_train, is_price, mode="both"):
    """Fit scaling statistics on the raw training rows only."""
    _check_mode(mode)
    s = stationary(raw_train, is_price, mode)
    n = s.shape[1]
    if mode == "percent":
        return ScalerParams(mode, np.zeros(n), np.ones(n), np.asarray(is_price, dtype=bool))
    lo, hi = minmax_fit(s)
    return ScalerParams(mode, lo, hi, np.asarray(is_price, dtype=bool))


@dataclass
class ModelWindow:
    """One window in model space plus what is needed to undo the pipeline."""
    context: np.ndarray
    target: np.ndarray
    anchor: np.ndarray
    raw_context: np.ndarray
    raw_target: np.ndarray
    context_times: np.ndarray
    target_times: np.ndarray
    start: int = 0


def pipeline_forward(windows, params):
    """Transform raw windows (built with ``lead >= 1``) into model space."""
    out = []
    for w in windows:
        if w.lead is None or len(w.lead) < 1:
            raise TooShort("pipeline windows need one lead row before the context")
        raw = np.concatenate([w.lead[-1:], w.context, w.target], axis=0)
        s = stationary(raw, params.is_price, params.mode)
        scaled = minmax_apply(s, params.minimum, params.maximum)
        lc = len(w.context)
        out.append(ModelWindow(scaled[:lc], scaled[lc:], w.context[-1].copy(), w.context,
                               w.target, w.context_times, w.target_times, w.start))
    return out


def pipeline_inverse(pred, params, anchor):
    """Map model-space predictions ``(..., L_t, N)`` back to dollars and shares.

    ``anchor`` is ``(..., N)``: the last raw context row of each window.
    """
    pred = np.asarray(pred, dtype=np.float64)
    x = minmax_invert(pred, params.minimum, params.maximum)
    if params.percent:
        cols = params.is_price
        x[..., cols] = inverse_percent_change(
            x[..., cols], np.asarray(anchor)[..., cols], axis=-2)
    return x


def inverse_prices_tensor(pred, params, anchor, cols):
    """Differentiable raw-dollar prices for the price columns ``cols``.

    ``pred`` is a Tensor ``(B, L_t, N)``; ``anchor`` is ``(B, N)``. Returns a
    Tensor ``(B, L_t, len(cols))``.
    """
    cols = np.asarray(cols, dtype=np.int64)
    lo = params.minimum[cols]
    span = params.maximum[cols] - lo
    y = nx.take(pred, cols, axis=-1)
    x = y * span + lo  # constant columns: span 0 gives back the constant
    if params.percent:
        x = nx.cumprod(x + 1.0, axis=1) * np.asarray(anchor)[:, None, cols]
    return x


@dataclass
class WindowBatch:
    context: np.ndarray
    target: np.ndarray
    anchor: np.ndarray
    raw_target: np.ndarray
    context_times: np.ndarray
    target_times: np.ndarray

    def __len__(self):
        return self.context.shape[0]


def stack_windows(windows):
    return WindowBatch(
        np.stack([w.context for w in windows]),
        np.stack([w.target for w in windows]),
        np.stack([w.anchor for w in windows]),
        np.stack([w.raw_target for w in windows]),
        np.stack([w.context_times for w in windows]),
        np.stack([w.target_times for w in windows]),
    )
