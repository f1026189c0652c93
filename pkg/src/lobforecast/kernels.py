"""Hot inner loops with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``LOBFORECAST_DISABLE_NUMBA`` is unset (or ``0``). The index and
scatter kernels visit elements in the same order on both paths and agree
bit for bit; the softmax backward kernel sums sequentially where numpy
sums pairwise, so those two agree to rounding. Either path is deterministic from
run to run.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_flag = os.environ.get("LOBFORECAST_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag in ("", "0", "false", "no")


def backend():
    return "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# scatter-add of rows (backward of row gathers)
# --------------------------------------------------------------------------

def scatter_add_rows_numpy(n_rows, idx, src):
    out = np.zeros((n_rows,) + src.shape[1:], dtype=np.float64)
    np.add.at(out, idx, src)
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _scatter_add_2d(out, idx, src):
        for i in range(idx.shape[0]):
            r = idx[i]
            for j in range(src.shape[1]):
                out[r, j] += src[i, j]

    def scatter_add_rows_numba(n_rows, idx, src):
        flat = np.ascontiguousarray(src).reshape(src.shape[0], -1)
        out = np.zeros((n_rows, flat.shape[1]), dtype=np.float64)
        _scatter_add_2d(out, np.ascontiguousarray(idx, dtype=np.int64), flat)
        return out.reshape((n_rows,) + src.shape[1:])


def scatter_add_rows(n_rows, idx, src):
    """Return ``out`` of ``n_rows`` rows with ``out[idx[i]] += src[i]``."""
    if USE_NUMBA:
        return scatter_add_rows_numba(n_rows, idx, src)
    return scatter_add_rows_numpy(n_rows, idx, src)


# --------------------------------------------------------------------------
# last-observation-carried-forward index
# --------------------------------------------------------------------------

def locf_index_numpy(event_times, grid_times):
    pos = np.searchsorted(event_times, grid_times, side="right") - 1
    return np.maximum(pos, 0).astype(np.int64)


if HAVE_NUMBA:

    @njit(cache=True)
    def _locf_scan(event_times, grid_times, out):
        j = 0
        n = event_times.shape[0]
        for g in range(grid_times.shape[0]):
            t = grid_times[g]
            while j + 1 < n and event_times[j + 1] <= t:
                j += 1
            out[g] = j

    def locf_index_numba(event_times, grid_times):
        out = np.empty(grid_times.shape[0], dtype=np.int64)
        _locf_scan(np.ascontiguousarray(event_times, dtype=np.float64),
                   np.ascontiguousarray(grid_times, dtype=np.float64), out)
        return out


def locf_index(event_times, grid_times):
    """For each grid time, index of the latest event at or before it.

    Grid points before the first event map to event 0. Both inputs must be
    sorted ascending.
    """
    if USE_NUMBA:
        return locf_index_numba(event_times, grid_times)
    return locf_index_numpy(event_times, grid_times)


# --------------------------------------------------------------------------
# ordinal-structure terms of a batch of books
# --------------------------------------------------------------------------

def ordinal_terms_numpy(asks, bids):
    s, k = asks.shape
    penalty = np.zeros(s, dtype=np.float64)
    count = np.zeros(s, dtype=np.int64)
    for lv in range(k - 1):
        d = asks[:, lv] - asks[:, lv + 1]
        penalty += np.maximum(d, 0.0)
        count += d > 0.0
        d = bids[:, lv + 1] - bids[:, lv]
        penalty += np.maximum(d, 0.0)
        count += d > 0.0
    d = bids[:, 0] - asks[:, 0]
    penalty += np.maximum(d, 0.0)
    count += d > 0.0
    return penalty, count


if HAVE_NUMBA:

    @njit(cache=True)
    def _ordinal_scan(asks, bids, penalty, count):
        s, k = asks.shape
        for i in range(s):
            p = 0.0
            c = 0
            for lv in range(k - 1):
                d = asks[i, lv] - asks[i, lv + 1]
                if d > 0.0:
                    p += d
                    c += 1
                d = bids[i, lv + 1] - bids[i, lv]
                if d > 0.0:
                    p += d
                    c += 1
            d = bids[i, 0] - asks[i, 0]
            if d > 0.0:
                p += d
                c += 1
            penalty[i] = p
            count[i] = c

    def ordinal_terms_numba(asks, bids):
        asks = np.ascontiguousarray(asks, dtype=np.float64)
        bids = np.ascontiguousarray(bids, dtype=np.float64)
        penalty = np.empty(asks.shape[0], dtype=np.float64)
        count = np.empty(asks.shape[0], dtype=np.int64)
        _ordinal_scan(asks, bids, penalty, count)
        return penalty, count


def ordinal_terms(asks, bids):
    """Per-snapshot ReLU penalty and violation count for (S, K) price books.

    ``asks[:, 0]`` and ``bids[:, 0]`` are the level-1 quotes. The penalty
    sums ask inversions, bid inversions and the crossed-touch term; the
    count uses the indicator of the same differences, so ``count > 0`` iff
    ``penalty > 0``.
    """
    if USE_NUMBA:
        return ordinal_terms_numba(asks, bids)
    return ordinal_terms_numpy(asks, bids)


# --------------------------------------------------------------------------
# row softmax over the trailing axis (attention weights)
# --------------------------------------------------------------------------

def softmax_rows(x):
    """Softmax over the trailing axis with max subtraction.

    numpy only: its vectorized exp beats a scalar numba loop here.
    """
    y = x - x.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)
    return y


def softmax_rows_grad_numpy(y, g):
    out = g - np.einsum("...j,...j->...", g, y)[..., None]
    out *= y
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _softmax_grad_2d(y, g, out):
        rows, cols = y.shape
        for i in range(rows):
            dot = 0.0
            for j in range(cols):
                dot += g[i, j] * y[i, j]
            for j in range(cols):
                out[i, j] = y[i, j] * (g[i, j] - dot)

    def softmax_rows_grad_numba(y, g):
        y2 = np.ascontiguousarray(y, dtype=np.float64).reshape(-1, y.shape[-1])
        g2 = np.ascontiguousarray(g, dtype=np.float64).reshape(-1, y.shape[-1])
        out = np.empty_like(y2)
        _softmax_grad_2d(y2, g2, out)
        return out.reshape(y.shape)


def softmax_rows_grad(y, g):
    """Backward of :func:`softmax_rows` given its output ``y``."""
    if USE_NUMBA:
        return softmax_rows_grad_numba(y, g)
    return softmax_rows_grad_numpy(y, g)
