import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobforecast import data
from lobforecast import numerics as nx
from lobforecast import transforms as tf
from lobforecast.errors import BadParams, ChangeBelowMinusOne, NonPositivePrice, TooShort


def test_percent_change_examples():
    np.testing.assert_allclose(tf.percent_change([100.0, 101.0]), [0.01])
    assert (tf.percent_change(np.full(5, 7.0)) == 0).all()
    np.testing.assert_allclose(tf.percent_change([100.0, 99.0, 99.0]), [-0.01, 0.0])


def test_percent_change_errors():
    with pytest.raises(NonPositivePrice):
        tf.percent_change([1.0, 0.0, 2.0])
    with pytest.raises(TooShort):
        tf.percent_change([1.0])


def test_inverse_percent_change_examples():
    np.testing.assert_allclose(tf.inverse_percent_change([0.01], 100.0), [101.0])
    assert (tf.inverse_percent_change(np.zeros(4), 42.0) == 42.0).all()
    with pytest.raises(ChangeBelowMinusOne):
        tf.inverse_percent_change([0.1, -1.0], 10.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60))
def test_percent_change_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    p = 100 * np.exp(np.cumsum(rng.normal(0, 0.02, size=n)))
    back = tf.inverse_percent_change(tf.percent_change(p), p[0])
    np.testing.assert_allclose(back, p[1:], rtol=1e-9)


def test_minmax_examples():
    lo, hi = tf.minmax_fit(np.array([[2.0], [4.0], [6.0]]))
    np.testing.assert_allclose(tf.minmax_apply([[2.0], [4.0], [6.0]], lo, hi).ravel(),
                               [0.0, 0.5, 1.0])
    lo, hi = tf.minmax_fit(np.full((4, 1), 3.0))
    assert (tf.minmax_apply(np.array([[3.0], [9.0]]), lo, hi) == 0.5).all()
    assert (tf.minmax_invert(np.array([[0.5], [0.9]]), lo, hi) == 3.0).all()


def test_minmax_outside_range():
    lo, hi = np.array([0.0]), np.array([10.0])
    np.testing.assert_allclose(tf.minmax_apply([[-5.0], [20.0]], lo, hi).ravel(), [-0.5, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_minmax_round_trip(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, 6)) * rng.uniform(0.1, 100, size=6)
    lo, hi = tf.minmax_fit(x)
    back = tf.minmax_invert(tf.minmax_apply(x, lo, hi), lo, hi)
    assert np.abs(back - x).max() < 1e-12 * max(1.0, np.abs(x).max())


def _raw(seed=3, n=400, levels=3):
    ds = data.synth_dataset(seed, n, params=data.SynthParams(levels=levels))
    return ds, ds.layout


def test_modes_and_labels():
    assert tf.MODES == ("percent", "minmax", "both")
    assert tf.TRANSFORM_LABELS["both"] == "Percent-change + Minmax"
    with pytest.raises(BadParams):
        tf.fit_pipeline(np.ones((5, 4)), np.array([True, False] * 2), "log")


@pytest.mark.parametrize("mode", tf.MODES)
def test_pipeline_round_trip(mode):
    ds, layout = _raw()
    tr, _, te = data.split(ds)
    params = tf.fit_pipeline(tr.values, layout.is_price, mode)
    raw = data.make_windows(te.values, 12, 4, 3, te.times, lead=1)
    mw = tf.pipeline_forward(raw, params)
    for w in mw:
        back = tf.pipeline_inverse(w.target, params, w.anchor)
        p, v = layout.price_cols, layout.volume_cols
        assert (np.abs(back[:, p] - w.raw_target[:, p]) / w.raw_target[:, p]).max() < 1e-8
        assert np.abs(back[:, v] - w.raw_target[:, v]).max() < 1e-12


def test_training_prices_span_unit_interval():
    ds, layout = _raw()
    tr, _, _ = data.split(ds)
    params = tf.fit_pipeline(tr.values, layout.is_price, "both")
    s = tf.minmax_apply(tf.stationary(tr.values, layout.is_price, "both"),
                        params.minimum, params.maximum)
    assert (s.min(axis=0) == 0).all() and (s.max(axis=0) == 1).all()


def test_scaler_ignores_val_and_test_rows():
    ds, layout = _raw()
    tr, va, te = data.split(ds)
    clean = tf.fit_pipeline(tr.values, layout.is_price, "both")
    poisoned = ds.values.copy()
    poisoned[len(tr):] *= 1e6  # sentinels in val/test rows
    tr2 = data.split(poisoned)[0]
    fitted = tf.fit_pipeline(tr2, layout.is_price, "both")
    assert fitted.minimum.tobytes() == clean.minimum.tobytes()
    assert fitted.maximum.tobytes() == clean.maximum.tobytes()


def test_constant_volume_column_maps_to_half():
    raw = np.column_stack([100 + np.arange(10.0), np.full(10, 250.0)])
    is_price = np.array([True, False])
    params = tf.fit_pipeline(raw, is_price, "both")
    s = tf.minmax_apply(tf.stationary(raw, is_price, "both"), params.minimum, params.maximum)
    assert (s[:, 1] == 0.5).all()


def test_percent_mode_leaves_volumes_raw():
    raw = np.column_stack([100 + np.arange(10.0), 200 + np.arange(10.0)])
    is_price = np.array([True, False])
    params = tf.fit_pipeline(raw, is_price, "percent")
    s = tf.minmax_apply(tf.stationary(raw, is_price, "percent"), params.minimum, params.maximum)
    np.testing.assert_array_equal(s[:, 1], raw[1:, 1])
    np.testing.assert_allclose(s[:, 0], tf.percent_change(raw[:, 0]))


def test_windows_need_a_lead_row():
    ds, layout = _raw()
    params = tf.fit_pipeline(ds.values, layout.is_price, "both")
    raw = data.make_windows(ds.values, 5, 2, 50)
    with pytest.raises(TooShort):
        tf.pipeline_forward(raw, params)


def test_scaler_arrays_round_trip():
    ds, layout = _raw()
    params = tf.fit_pipeline(ds.values, layout.is_price, "minmax")
    back = tf.ScalerParams.from_arrays("minmax", params.to_arrays())
    assert back.minimum.tobytes() == params.minimum.tobytes()
    assert (back.is_price == params.is_price).all() and not back.percent


@pytest.mark.parametrize("mode", tf.MODES)
def test_differentiable_inverse_matches_numpy(mode):
    ds, layout = _raw()
    params = tf.fit_pipeline(ds.values[:200], layout.is_price, mode)
    raw = data.make_windows(ds.values[200:], 8, 3, 7, ds.times[200:], lead=1)
    batch = tf.stack_windows(tf.pipeline_forward(raw, params))
    rng = np.random.default_rng(0)
    pred = batch.target + rng.normal(0, 0.01, size=batch.target.shape)
    cols = layout.price_cols
    t = tf.inverse_prices_tensor(nx.Tensor(pred), params, batch.anchor, cols)
    ref = tf.pipeline_inverse(pred, params, batch.anchor)[..., cols]
    np.testing.assert_allclose(t.data, ref, rtol=1e-13)


def test_differentiable_inverse_gradient():
    ds, layout = _raw(levels=1)
    params = tf.fit_pipeline(ds.values, layout.is_price, "both")
    raw = data.make_windows(ds.values, 5, 3, 50, ds.times, lead=1)[:2]
    batch = tf.stack_windows(tf.pipeline_forward(raw, params))
    x = nx.Tensor(batch.target.copy(), requires_grad=True)
    w = np.random.default_rng(1).normal(size=(2, 3, 2))

    def f(t):
        return (tf.inverse_prices_tensor(t, params, batch.anchor, layout.price_cols) * w).sum()

    # outputs are in dollars, so central-difference round-off sits near 1e-6
    assert nx.grad_check(f, x) < 1e-5
