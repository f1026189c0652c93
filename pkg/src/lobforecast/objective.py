"""Forecasting loss, ordinal structure regularizer and their weighted total.

Reductions: the forecasting loss is the mean squared error over all
predicted cells (prices and volumes of every level). The structure loss of
a window is summed over its predicted snapshots and tickers, then averaged
over the windows of a batch.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import kernels
from . import numerics as nx
from .errors import ShapeMismatch
from .transforms import inverse_prices_tensor

STRUCTURE_SPACES = ("dollars", "scaled")


def _check_shapes(pred, truth):
    if tuple(np.shape(pred)) != tuple(np.shape(truth)):
        raise ShapeMismatch(f"prediction {np.shape(pred)} vs truth {np.shape(truth)}")


def mse(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    _check_shapes(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    _check_shapes(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def forecasting_loss(pred, truth):
    """Mean squared error as a differentiable scalar Tensor."""
    _check_shapes(pred.shape, np.shape(truth))
    diff = pred - np.asarray(truth, dtype=np.float64)
    return nx.mean(diff * diff)


def structure_loss(bids, asks):
    """Ordinal penalty of one snapshot (1-D) or summed over snapshots (2-D).

    ``bids[..., 0]`` / ``asks[..., 0]`` are the level-1 prices.
    """
    bids = np.atleast_2d(np.asarray(bids, dtype=np.float64))
    asks = np.atleast_2d(np.asarray(asks, dtype=np.float64))
    _check_shapes(bids, asks)
    penalty, _ = kernels.ordinal_terms(asks, bids)
    return float(penalty.sum())


def violation_count(bids, asks):
    """Number of violated ordinal inequalities, per snapshot."""
    bids = np.atleast_2d(np.asarray(bids, dtype=np.float64))
    asks = np.atleast_2d(np.asarray(asks, dtype=np.float64))
    _, count = kernels.ordinal_terms(asks, bids)
    return count


def book_terms(prices, layout):
    """Split ``(..., N)`` price rows into ``(S, K)`` ask and bid books.

    Every (row, ticker) pair becomes one snapshot.
    """
    prices = np.asarray(prices, dtype=np.float64)
    k = layout.levels
    asks = prices[..., layout.ask_cols].reshape(-1, k)
    bids = prices[..., layout.bid_cols].reshape(-1, k)
    return asks, bids


def structure_loss_tensor(prices, ask_pos, bid_pos):
    """Differentiable ordinal penalty summed over snapshots, averaged over batch.

    ``prices`` is ``(B, L, P)``; ``ask_pos`` and ``bid_pos`` are ``(T, K)``
    positions along the last axis.
    """
    b = prices.shape[0]
    terms = []
    if ask_pos.shape[1] > 1:
        lower = nx.take(prices, ask_pos[:, :-1].ravel(), axis=-1)
        upper = nx.take(prices, ask_pos[:, 1:].ravel(), axis=-1)
        terms.append(nx.relu(lower - upper).sum())
        lower = nx.take(prices, bid_pos[:, :-1].ravel(), axis=-1)
        upper = nx.take(prices, bid_pos[:, 1:].ravel(), axis=-1)
        terms.append(nx.relu(upper - lower).sum())
    best_bid = nx.take(prices, bid_pos[:, 0], axis=-1)
    best_ask = nx.take(prices, ask_pos[:, 0], axis=-1)
    terms.append(nx.relu(best_bid - best_ask).sum())
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return nx.scale(total, 1.0 / b)


@dataclass
class LossBreakdown:
    forecasting_loss: float
    structure_loss: float
    total_loss: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def row(self):
        return asdict(self)


def batch_prices(pred, batch, params, layout, space="dollars"):
    """Predicted price books as a Tensor plus ask/bid positions into it."""
    cols = np.concatenate([layout.ask_cols.ravel(), layout.bid_cols.ravel()])
    tk = layout.ask_cols.size
    ask_pos = np.arange(tk).reshape(layout.ask_cols.shape)
    bid_pos = tk + ask_pos
    if space == "dollars":
        prices = inverse_prices_tensor(pred, params, batch.anchor, cols)
    elif space == "scaled":
        prices = nx.take(pred, cols, axis=-1)
    else:
        raise ValueError(f"unknown structure space {space!r}")
    return prices, ask_pos, bid_pos


def total_loss(pred, batch, params=None, layout=None, w_o=0.01, space="dollars"):
    """Forecasting loss plus ``w_o`` times the structure loss.

    ``layout=None`` (no order book columns) or ``w_o == 0`` skips the
    structure term. Returns ``(total Tensor, LossBreakdown)``.
    """
    fl = forecasting_loss(pred, batch.target)
    if layout is None or w_o == 0:
        s_val = 0.0
        if layout is not None:
            with nx.no_grad():
                prices, ap, bp = batch_prices(pred, batch, params, layout, space)
                s_val = structure_loss_tensor(prices, ap, bp).item()
        f_val = fl.item()
        return fl, LossBreakdown(f_val, s_val, f_val + w_o * s_val)
    prices, ap, bp = batch_prices(pred, batch, params, layout, space)
    sl = structure_loss_tensor(prices, ap, bp)
    total = fl + nx.scale(sl, w_o)
    f_val, s_val = fl.item(), sl.item()
    return total, LossBreakdown(f_val, s_val, f_val + w_o * s_val)
