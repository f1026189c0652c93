import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobforecast import data
from lobforecast import evaluation as ev
from lobforecast import numerics as nx
from lobforecast import transforms as tf
from lobforecast.model import ModelConfig, build_model
from lobforecast.objective import book_terms, structure_loss


class Perfect:
    """Stub model that returns the true target."""

    def forward(self, batch, training=False):
        return nx.Tensor(batch.target)


def setup(levels=2, mode="temporal", n=6, seed=2):
    ds = data.synth_dataset(seed, 240, params=data.SynthParams(levels=levels))
    scaler = tf.fit_pipeline(ds.values[:150], ds.layout.is_price, "both")
    raw = data.make_windows(ds.values[150:], 6, 3, 9, ds.times[150:], lead=1)[:n]
    cfg = ModelConfig(mode=mode, d_model=8, n_heads=2, n_encoder_layers=1, n_decoder_layers=1,
                      d_ff=16, d_time=4, context=6, target=3, levels=levels)
    return ds, scaler, raw, tf.pipeline_forward(raw, scaler), build_model(cfg, 1)


def test_mid_price_examples():
    assert ev.mid_price(100.0, 102.0) == 101.0
    assert ev.mid_price(99.5, 99.5) == 99.5
    ds, _, raw, _, _ = setup()
    mids = ev.mid_prices(raw[0].target, ds.layout)
    assert mids.shape == (3, 1)
    lay = ds.layout
    np.testing.assert_array_equal(mids[:, 0], (raw[0].target[:, lay.bid_cols[0, 0]]
                                               + raw[0].target[:, lay.ask_cols[0, 0]]) / 2)


@pytest.mark.parametrize("mode", ev.EVAL_MODES)
def test_perfect_model_scores_zero(mode):
    ds, scaler, _, windows, _ = setup()
    row = ev.evaluate(Perfect(), windows, scaler, ds.layout, mode)
    for f in ev.METRIC_FIELDS[:6] + ("forecasting_loss",):
        assert row[f] == pytest.approx(0.0, abs=1e-12), f
    assert row["structure_loss"] == 0.0 and row["violations"] == 0


def test_persistence_on_constant_series():
    ds = data.synth_dataset(0, 60, params=data.SynthParams(levels=2))
    const = np.repeat(ds.values[:1], 60, axis=0)
    scaler = tf.fit_pipeline(const[:40], ds.layout.is_price, "both")
    raw = data.make_windows(const[40:], 4, 2, 2, ds.times[40:], lead=1)
    windows = tf.pipeline_forward(raw, scaler)
    model = build_model(ModelConfig(mode="linear", context=4, target=2, levels=2), 0)
    lags = np.zeros((2, 4))
    lags[:, 0] = 1.0
    model.params["baseline.lags"].assign(lags)
    model.params["baseline.bias"].assign(np.zeros((2, 8)))
    for mode in ev.EVAL_MODES:
        row = ev.evaluate(model, windows, scaler, ds.layout, mode)
        assert all(row[f] == 0 for f in ev.METRIC_FIELDS), mode


@pytest.mark.parametrize("mode", ev.EVAL_MODES)
def test_evaluate_is_pure_and_consistent(mode):
    ds, scaler, _, windows, model = setup()
    a = ev.evaluate(model, windows, scaler, ds.layout, mode, w_o=0.3)
    b = ev.evaluate(model, windows, scaler, ds.layout, mode, w_o=0.3)
    assert ev.table_csv([a]) == ev.table_csv([b])
    assert a["total_loss"] == pytest.approx(a["forecasting_loss"] + 0.3 * a["structure_loss"],
                                            rel=1e-12)
    assert all(a[f] >= 0 for f in ev.METRIC_FIELDS)
    with pytest.raises(ValueError):
        ev.evaluate(model, windows, scaler, ds.layout, "raw")


def test_violation_count_agrees_with_structure_loss():
    ds, scaler, _, windows, model = setup()
    row = ev.evaluate(model, windows, scaler, ds.layout, "dollars")
    assert (row["violations"] > 0) == (row["structure_loss"] > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_count_matches_structure_indicator(seed):
    rng = np.random.default_rng(seed)
    layout = data.book_layout(2, 3)
    rows = rng.normal(100, 0.02, size=(5, layout.n_variables))
    counts = ev.count_violations(rows, layout).reshape(5, 2)
    asks, bids = book_terms(rows, layout)
    asks, bids = asks.reshape(5, 2, 3), bids.reshape(5, 2, 3)
    for i in range(5):
        for t in range(2):
            assert (counts[i, t] > 0) == (structure_loss(bids[i, t], asks[i, t]) > 0)


# -- comparison ----------------------------------------------------------------------------------

def test_compare_flags_are_column_argmin():
    ds, scaler, raw, _, model = setup()
    _, _, _, _, other = setup(mode="compound")
    entries = [("temporal", model, scaler), ("compound", other, scaler),
               ("temporal_again", model, scaler)]
    rows, flags = ev.compare(entries, raw, ds.layout)
    strip = lambda r: {k: v for k, v in r.items() if k != "model"}  # noqa: E731
    assert strip(rows[0]) == strip(rows[2])
    for c in ev.METRIC_FIELDS + ("violations",):
        best = min(r[c] for r in rows)
        assert [f[c] for f in flags] == [r[c] == best for r in rows]


def test_single_model_all_best(tmp_path):
    ds, scaler, raw, _, model = setup()
    rows, flags = ev.compare([("m", model, scaler)], raw, ds.layout)
    assert all(flags[0].values())
    path = tmp_path / "t.csv"
    path.write_text(ev.table_csv(rows, flags))
    back = ev.read_table(path)
    assert list(back[0])[:len(ev.TABLE_COLUMNS)] == list(ev.TABLE_COLUMNS)
    assert back[0]["price_mse"] == rows[0]["price_mse"]
    assert all(back[0][f"best_{c}"] == 1 for c in ev.METRIC_FIELDS)


# -- forecast export -------------------------------------------------------------------------------

def test_export_forecast_layout_and_recompute(tmp_path):
    ds, scaler, raw, windows, model = setup()
    names = ds.column_names()
    rows, summary = ev.export_forecast(model, raw[0], scaler, ds.layout, names)
    n = ds.n_variables
    assert len(rows) == (6 + 3) * n
    ctx = [r for r in rows if r[2] == "context"]
    assert [r[3] for r in ctx] == raw[0].context.ravel().tolist()
    assert all(r[4] is None for r in ctx)
    assert len(summary) == 3 * len(ds.tickers)

    path = tmp_path / "f.csv"
    path.write_text(ev.forecast_csv(rows, summary))
    back, back_summary = ev.read_forecast(path)
    tgt = [r for r in back if r["kind"] == "target"]
    truth = np.array([r["truth"] for r in tgt]).reshape(3, n)
    pred = np.array([r["prediction"] for r in tgt]).reshape(3, n)
    ref = ev.evaluate(model, windows[:1], scaler, ds.layout, "dollars")
    pc = ds.layout.price_cols
    assert ((pred[:, pc] - truth[:, pc]) ** 2).mean() == pytest.approx(ref["price_mse"],
                                                                        rel=1e-12)
    assert sum(s["violations"] for s in back_summary) == ref["violations"]


def test_structure_reported_as_sum_and_mean():
    ds, scaler, _, windows, model = setup()
    row = ev.evaluate(model, windows, scaler, ds.layout, "dollars")
    # 3 predicted steps x 1 ticker per window
    assert row["structure_mean"] == row["structure_loss"] / 3
