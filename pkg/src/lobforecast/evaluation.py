"""Metric tables, model comparison and forecast export.

Metrics follow the usual LOB forecasting table: mid-price, aggregated price
(all 2K price columns) and aggregated volume (all 2K volume columns) MSE and
MAE, plus the training objective split into its forecasting and structure
parts. ``structure_loss`` is summed over the predicted snapshots of a
window (the training reduction); ``structure_mean`` divides it by the
number of predicted snapshots per window. ``scaled`` mode scores
model-space values; ``dollars`` mode first maps predictions back through
the inverse pipeline and scores them against the raw target rows.
"""

import csv
import io

import numpy as np

from . import numerics as nx
from .objective import book_terms, mae, mse, violation_count
from .trainer import evaluate_loss
from .transforms import pipeline_forward, pipeline_inverse, stack_windows

EVAL_MODES = ("scaled", "dollars")
METRIC_FIELDS = (
    "mid_mse", "mid_mae", "price_mse", "price_mae", "volume_mse", "volume_mae",
    "forecasting_loss", "structure_loss", "structure_mean", "total_loss",
)
TABLE_COLUMNS = ("model", "mode") + METRIC_FIELDS + ("violations",)
FORECAST_COLUMNS = ("time", "variable", "kind", "truth", "prediction")


def mid_price(bid, ask):
    """Average of the best bid and best ask (works elementwise on arrays)."""
    return (np.asarray(bid, dtype=np.float64) + np.asarray(ask, dtype=np.float64)) / 2.0


def mid_prices(rows, layout):
    """Mid-price of every ticker for ``(..., N)`` rows -> ``(..., T)``."""
    rows = np.asarray(rows, dtype=np.float64)
    return mid_price(rows[..., layout.bid_cols[:, 0]], rows[..., layout.ask_cols[:, 0]])


def predict(model, windows, batch_size=32):
    """Model-space predictions ``(W, L_t, N)`` for a list of model windows."""
    out = []
    with nx.no_grad():
        for i in range(0, len(windows), batch_size):
            batch = stack_windows(windows[i:i + batch_size])
            out.append(model.forward(batch).data)
    return np.concatenate(out, axis=0)


def dollar_predictions(model, windows, scaler, batch_size=32):
    pred = predict(model, windows, batch_size)
    anchor = np.stack([w.anchor for w in windows])
    return pipeline_inverse(pred, scaler, anchor)


def count_violations(prices_rows, layout):
    """Violated ordinal inequalities per (row, ticker) snapshot, flattened."""
    asks, bids = book_terms(prices_rows, layout)
    return violation_count(bids, asks)


def metric_row(pred, truth, layout):
    """Mid/price/volume errors of ``pred`` against ``truth`` (same space)."""
    pc, vc = layout.price_cols, layout.volume_cols
    return {
        "mid_mse": mse(mid_prices(pred, layout), mid_prices(truth, layout)),
        "mid_mae": mae(mid_prices(pred, layout), mid_prices(truth, layout)),
        "price_mse": mse(pred[..., pc], truth[..., pc]),
        "price_mae": mae(pred[..., pc], truth[..., pc]),
        "volume_mse": mse(pred[..., vc], truth[..., vc]),
        "volume_mae": mae(pred[..., vc], truth[..., vc]),
    }


def evaluate(model, windows, scaler, layout, mode="dollars", w_o=0.01,
             space="dollars", name="model", batch_size=32):
    """One MetricTable row for ``model`` over model-space ``windows``.

    ``violations`` counts violated ordinal inequalities in the dollar-space
    predicted books over all windows and horizon steps.
    """
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    pred = predict(model, windows, batch_size)
    anchor = np.stack([w.anchor for w in windows])
    dollars = pipeline_inverse(pred, scaler, anchor)
    if mode == "scaled":
        row = metric_row(pred, np.stack([w.target for w in windows]), layout)
    else:
        row = metric_row(dollars, np.stack([w.raw_target for w in windows]), layout)
    losses = evaluate_loss(model, windows, scaler, layout, w_o, space, batch_size)
    row["forecasting_loss"] = losses.forecasting_loss
    row["structure_loss"] = losses.structure_loss
    snapshots = windows[0].target.shape[0] * layout.ask_cols.shape[0]
    row["structure_mean"] = losses.structure_loss / snapshots
    row["total_loss"] = losses.forecasting_loss + w_o * losses.structure_loss
    row["violations"] = int(count_violations(dollars, layout).sum())
    return {"model": name, "mode": mode, **row}


def best_flags(rows, columns=METRIC_FIELDS + ("violations",)):
    """Per-column flags marking the rows that attain the column minimum."""
    flags = [dict() for _ in rows]
    for c in columns:
        lo = min(r[c] for r in rows)
        for f, r in zip(flags, rows):
            f[c] = r[c] == lo
    return flags


def compare(entries, raw_windows, layout, mode="dollars", w_o=0.01, space="dollars"):
    """Evaluate several models on the same raw windows.

    ``entries`` is a list of ``(name, model, scaler)``; each model sees the
    windows through its own scaler. Returns ``(rows, flags)``.
    """
    rows = []
    for name, model, scaler in entries:
        windows = pipeline_forward(raw_windows, scaler)
        rows.append(evaluate(model, windows, scaler, layout, mode, w_o, space, name))
    return rows, best_flags(rows)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def table_csv(rows, flags=None):
    """CSV text of a metric table; with ``flags`` a ``best_*`` column follows per metric."""
    cols = list(TABLE_COLUMNS)
    if flags is not None:
        cols += [f"best_{c}" for c in METRIC_FIELDS + ("violations",)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for i, r in enumerate(rows):
        vals = [r[c] for c in TABLE_COLUMNS]
        if flags is not None:
            vals += [flags[i][c] for c in METRIC_FIELDS + ("violations",)]
        w.writerow([_fmt(v) for v in vals])
    return buf.getvalue()


def read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k in METRIC_FIELDS:
                r[k] = float(v)
            elif k == "violations" or k.startswith("best_"):
                r[k] = int(v)
    return rows


# --------------------------------------------------------------------------
# forecast export
# --------------------------------------------------------------------------

def export_forecast(model, raw_window, scaler, layout, names):
    """Long-format forecast of one raw window (built with a lead row).

    Returns ``(rows, summary)``. ``rows`` holds ``(time, variable, kind,
    truth, prediction)`` for every context and target cell; context rows
    carry no prediction. ``summary`` holds ``(time, ticker, violations)``
    for every predicted snapshot.
    """
    mw = pipeline_forward([raw_window], scaler)
    dollars = dollar_predictions(model, mw, scaler)[0]
    rows = []
    for t, vals in zip(raw_window.context_times, raw_window.context):
        for n, v in enumerate(vals):
            rows.append((float(t), names[n], "context", float(v), None))
    for t, truth, pred in zip(raw_window.target_times, raw_window.target, dollars):
        for n in range(len(truth)):
            rows.append((float(t), names[n], "target", float(truth[n]), float(pred[n])))
    counts = count_violations(dollars, layout).reshape(len(dollars), -1)
    summary = []
    for t, per_ticker in zip(raw_window.target_times, counts):
        for ti, c in enumerate(per_ticker):
            summary.append((float(t), ti, int(c)))
    return rows, summary


def forecast_csv(rows, summary):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FORECAST_COLUMNS)
    for t, name, kind, truth, pred in rows:
        w.writerow([repr(t), name, kind, repr(truth), "" if pred is None else repr(pred)])
    buf.write("\n# violations\n")
    w.writerow(("time", "ticker", "violations"))
    for t, ti, c in summary:
        w.writerow([repr(t), ti, c])
    return buf.getvalue()


def read_forecast(path):
    """Parse a forecast CSV into ``(rows, summary)`` lists of dicts."""
    with open(path, newline="") as fh:
        text = fh.read()
    main, _, tail = text.partition("\n# violations\n")
    rows = list(csv.DictReader(io.StringIO(main)))
    for r in rows:
        r["time"] = float(r["time"])
        r["truth"] = float(r["truth"])
        r["prediction"] = float(r["prediction"]) if r["prediction"] else None
    summary = list(csv.DictReader(io.StringIO(tail)))
    for s in summary:
        s["time"] = float(s["time"])
        s["ticker"] = int(s["ticker"])
        s["violations"] = int(s["violations"])
    return rows, summary
