import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobforecast import numerics as nx
from lobforecast.data import VariableIndex
from lobforecast.embedding import (ATTRIBUTE_TABLES, Embedding, EmbeddingConfig,
                                   embedding_parameter_count, time2vec, time2vec_init,
                                   variable_embedding_parameter_count)
from lobforecast.errors import BadParams, UnknownVariable


def make(mode="compound", d=12, levels=2, tickers=1, d_time=4, seed=0):
    params = {}
    cfg = EmbeddingConfig(d, d_time, mode, levels, tickers, window=8)
    return Embedding(cfg, params, np.random.default_rng(seed)), params


def zero_all(params, keep=()):
    for k, t in params.items():
        if k not in keep:
            t.assign(np.zeros(t.shape))


def window(b, lc, lt, n, seed=0):
    rng = np.random.default_rng(seed)
    times = 34200.0 + 5.0 * np.arange(lc + lt)
    ctx_t = np.broadcast_to(times[:lc], (b, lc))
    tgt_t = np.broadcast_to(times[lc:], (b, lt))
    return rng.uniform(size=(b, lc, n)), ctx_t, tgt_t


# -- time2vec ----------------------------------------------------------------------------

def test_time2vec_zero_parameters():
    z = time2vec(np.array([0.3, 2.0]), nx.Tensor(np.zeros(5)), nx.Tensor(np.zeros(5)))
    assert (z.data == 0).all()


def test_time2vec_linear_component_and_sine_range():
    rng = np.random.default_rng(1)
    w, b = nx.Tensor(rng.normal(size=6) * 5), nx.Tensor(rng.normal(size=6))
    t = rng.uniform(0, 10, size=20)
    z1, z2 = time2vec(t, w, b).data, time2vec(2 * t, w, b).data
    np.testing.assert_allclose(z2[:, 0] - b.data[0], 2 * (z1[:, 0] - b.data[0]), rtol=1e-12)
    assert np.abs(z1[:, 1:]).max() <= 1.0


def test_time2vec_init_frequencies():
    w, b = time2vec_init(np.random.default_rng(0), 6, 36)
    assert w[0] == 1.0 and b[0] == 0.0
    np.testing.assert_allclose(w[1:], 2 * np.pi * np.geomspace(1, 18, 5))
    assert (np.abs(b[1:]) <= np.pi).all()


def test_config_validation():
    for cfg in (EmbeddingConfig(mode="spatial"), EmbeddingConfig(d_time=1),
                EmbeddingConfig(d_model=4, d_time=8), EmbeddingConfig(time_mode="wall")):
        with pytest.raises(BadParams):
            cfg.validate()


# -- token counts ---------------------------------------------------------------------------

def test_token_counts_example():
    # L_c=2, L_t=1, N=4 (one ticker, one level)
    for mode, (nc, nt) in [("compound", (8, 4)), ("per_variable", (8, 4)), ("temporal", (2, 1))]:
        emb, _ = make(mode, levels=1, tickers=1)
        ctx, t_ctx, t_tgt = window(1, 2, 1, 4)
        c, t = emb.embed(ctx, t_ctx, t_tgt)
        assert c.shape == (1, nc, 12) and t.shape == (nt, 12)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["temporal", "per_variable", "compound"]), st.integers(1, 5),
       st.integers(1, 4), st.integers(1, 2), st.integers(1, 2))
def test_token_count_law(mode, lc, lt, levels, tickers):
    emb, _ = make(mode, levels=levels, tickers=tickers)
    n = emb.cfg.n_variables
    ctx, t_ctx, t_tgt = window(2, lc, lt, n)
    c, t = emb.embed(ctx, t_ctx, t_tgt)
    per = n if mode != "temporal" else 1
    assert c.shape == (2, lc * per, 12)
    assert t.shape == (lt * per, 12)
    assert len(emb.token_times(lc)) == lc * per


# -- variable embedding ----------------------------------------------------------------------

def test_parameter_economy():
    _, comp = make("compound", d=6, levels=5, tickers=5)
    _, per = make("per_variable", d=6, levels=5, tickers=5)
    assert variable_embedding_parameter_count(comp) == 14 * 6
    assert variable_embedding_parameter_count(per) == 100 * 6


def test_compound_total_embedding_count():
    d, k, t, d_time = 6, 5, 3, 4
    _, p = make("compound", d=d, levels=k, tickers=t, d_time=d_time)
    time_affine = embedding_parameter_count(p, [n for n in p if n.startswith("embed.time.")])
    assert time_affine == 2 * d_time + d_time * d + d
    value = embedding_parameter_count(p, ["embed.value.weight", "embed.value.bias",
                                          "embed.placeholder"])
    assert embedding_parameter_count(p) - value == (k + 2 + 2 + t + 2) * d + time_affine


def test_compound_level_difference_law():
    emb, p = make("compound", levels=3, tickers=2)
    a = emb.variable_embedding(VariableIndex(1, "ask", 3, "volume")).data
    b = emb.variable_embedding(VariableIndex(1, "ask", 1, "volume")).data
    lvl = p["embed.level"].data
    np.testing.assert_allclose(a - b, (lvl[2] - lvl[0]) / 2, rtol=0, atol=1e-15)


def test_compound_zero_tables():
    emb, p = make("compound", levels=2, tickers=2)
    zero_all(p, keep=[k for k in p if k not in ATTRIBUTE_TABLES])
    assert (emb.variable_vectors().data == 0).all()


def test_gradient_reaches_only_referenced_rows():
    emb, p = make("compound", levels=3, tickers=2)
    var = VariableIndex(1, "bid", 2, "volume")
    emb.variable_embedding(var).sum().backward()
    expected = {"embed.level": 1, "embed.side": 0, "embed.feature": 1, "embed.ticker": 1}
    for name, row in expected.items():
        g = p[name].grad
        nonzero = np.flatnonzero(np.abs(g).sum(axis=1))
        assert nonzero.tolist() == [row], name
        assert (g[row] == 0.5).all()


def test_per_variable_lookup_and_unknown():
    emb, p = make("per_variable", levels=2)
    var = VariableIndex(0, "ask", 2, "price")
    col = var.column(1, 2)
    assert (emb.variable_embedding(var).data == p["embed.variable"].data[col]).all()
    with pytest.raises(UnknownVariable):
        emb.variable_embedding(VariableIndex(0, "ask", 3, "price"))
    temporal, _ = make("temporal")
    with pytest.raises(BadParams):
        temporal.variable_vectors()


# -- given flag and composition -----------------------------------------------------------------

def test_given_rows_start_at_zero_and_are_independent():
    emb, p = make()
    assert (p["embed.given"].data == 0).all()
    (emb.given_embedding(True) * 3.0).sum().backward()
    g = p["embed.given"].grad
    assert (g[0] == 0).all() and (g[1] == 3.0).all()


def test_tokens_compose_additively():
    emb, p = make()
    rng = np.random.default_rng(4)
    p["embed.given"].assign(rng.normal(size=(2, 12)))
    n = emb.cfg.n_variables
    ctx, t_ctx, t_tgt = window(1, 2, 2, n)
    c, t = emb.embed(ctx, t_ctx, t_tgt)
    given = p["embed.given"].data
    tc = emb.time_features(np.arange(4) / 4.0).data
    var = emb.variable_vectors().data
    value = ctx[0, 0, 0] * p["embed.value.weight"].data[0] + p["embed.value.bias"].data
    expect_ctx = value + tc[0] + var[0] + given[0]
    expect_tgt = p["embed.placeholder"].data + tc[2] + var[0] + given[1]
    np.testing.assert_allclose(c.data[0, 0], expect_ctx, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(t.data[0], expect_tgt, rtol=1e-13, atol=1e-14)
    # toggling the flag moves a token by exactly the row difference
    toggled = (emb.given_embedding(True) - emb.given_embedding(False)).data[0]
    assert (toggled == given[1] - given[0]).all()


def test_zero_tables_leave_value_component():
    emb, p = make("compound")
    zero_all(p, keep=["embed.value.weight", "embed.value.bias"])
    p["embed.value.weight"].assign(np.ones((1, 12)))
    p["embed.value.bias"].assign(np.zeros(12))
    n = emb.cfg.n_variables
    ctx, t_ctx, t_tgt = window(1, 3, 1, n)
    c, t = emb.embed(ctx, t_ctx, t_tgt)
    expected = np.repeat(ctx.reshape(1, 3 * n, 1), 12, axis=-1)
    assert (c.data == expected).all()
    assert (t.data == 0).all()


def test_temporal_mode_projects_jointly():
    emb, p = make("temporal", levels=1)
    zero_all(p, keep=["embed.value.weight"])
    ctx, t_ctx, t_tgt = window(2, 3, 1, 4)
    c, _ = emb.embed(ctx, t_ctx, t_tgt)
    np.testing.assert_allclose(c.data, ctx @ p["embed.value.weight"].data, rtol=1e-14)


def test_absolute_time_mode_has_batch_axis():
    params = {}
    cfg = EmbeddingConfig(12, 4, "compound", 1, 1, time_mode="absolute", window=8)
    emb = Embedding(cfg, params, np.random.default_rng(0))
    ctx, t_ctx, t_tgt = window(3, 2, 2, 4)
    c, t = emb.embed(ctx, t_ctx, t_tgt)
    assert c.shape == (3, 8, 12) and t.shape == (3, 8, 12)
