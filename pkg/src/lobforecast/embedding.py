"""Token embeddings for LOB windows.

A token is the sum of four parts, all of width ``d_model``:

* value: projection of the scaled value (a learned placeholder vector for
  target tokens, whose values are unknown),
* time: Time2Vec features of the token's time, passed through an affine map,
* variable: which series the value belongs to (flattened modes only),
* given: whether the token comes from the context or the target.

Modes
-----
``temporal``      one token per time step; the N values of the step are
                  projected jointly and no variable part is added.
``per_variable``  one token per (time, variable); one table row per series.
``compound``      one token per (time, variable); the variable part is the
                  scaled sum of level, side, feature and ticker rows.

Flattened tokens are ordered time-major: token ``t * N + n`` holds variable
``n`` at step ``t``.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import FEATURES, SIDES, variable_table
from .errors import BadParams
from .numerics import init

EMBEDDING_MODES = ("temporal", "per_variable", "compound")
ATTRIBUTE_TABLES = ("embed.level", "embed.side", "embed.feature", "embed.ticker")
SECONDS_PER_DAY = 86400.0


@dataclass
class EmbeddingConfig:
    d_model: int = 48
    d_time: int = 8
    mode: str = "compound"
    levels: int = 5
    n_tickers: int = 1
    compound_scale: float = 0.5  # 1/sqrt(number of attribute tables)
    time_mode: str = "relative"
    window: int = 144  # L_c + L_t; sets the initial Time2Vec frequency range

    @property
    def n_variables(self):
        return self.n_tickers * 4 * self.levels

    def validate(self):
        if self.mode not in EMBEDDING_MODES:
            raise BadParams(f"unknown embedding mode {self.mode!r}")
        if self.d_time < 2 or self.d_model < self.d_time:
            raise BadParams("need d_time >= 2 and d_model >= d_time")
        if self.time_mode not in ("relative", "absolute"):
            raise BadParams(f"unknown time mode {self.time_mode!r}")


def time2vec(t, w, b):
    """Time2Vec features: one linear component followed by sinusoids.

    ``t`` is an array of times (any shape); ``w`` and ``b`` are Tensors of
    length ``d_time``. Returns a Tensor of shape ``t.shape + (d_time,)``.
    """
    t = np.asarray(t, dtype=np.float64)[..., None]
    z = w * t + b
    linear = nx.take(z, [0], axis=-1)
    periodic = nx.sin(nx.take(z, np.arange(1, w.shape[0]), axis=-1))
    return nx.concat([linear, periodic], axis=-1)


def time2vec_init(rng, d_time, window):
    """Initial Time2Vec weights for times normalized to [0, 1).

    The linear slope starts at 1. Sine frequencies are geometrically spaced
    from one cycle per window up to about a two-step period, so that
    neighbouring steps are distinguishable from the start. Phases are
    uniform on [-pi, pi).
    """
    w = np.ones(d_time)
    w[1:] = 2 * np.pi * np.geomspace(1.0, max(window / 2.0, 1.0), d_time - 1)
    b = np.zeros(d_time)
    b[1:] = rng.uniform(-np.pi, np.pi, d_time - 1)
    return w, b


class Embedding:
    def __init__(self, cfg, params, rng):
        cfg.validate()
        self.cfg = cfg
        d, n = cfg.d_model, cfg.n_variables
        self.variables = variable_table(cfg.n_tickers, cfg.levels)
        self.level_idx = np.array([v.level - 1 for v in self.variables])
        self.side_idx = np.array([SIDES.index(v.side) for v in self.variables])
        self.feature_idx = np.array([FEATURES.index(v.feature) for v in self.variables])
        self.ticker_idx = np.array([v.ticker for v in self.variables])

        if cfg.mode == "temporal":
            params["embed.value.weight"] = init.uniform(rng, (n, d), n)
        else:
            params["embed.value.weight"] = init.uniform(rng, (1, d), 1)
        params["embed.value.bias"] = init.uniform(rng, (d,), 1 if cfg.mode != "temporal" else n)
        params["embed.placeholder"] = init.uniform(rng, (d,), 1)
        w, b = time2vec_init(rng, cfg.d_time, cfg.window)
        params["embed.time.w"] = nx.Tensor(w, requires_grad=True)
        params["embed.time.b"] = nx.Tensor(b, requires_grad=True)
        params["embed.time.proj.weight"] = init.uniform(rng, (cfg.d_time, d), cfg.d_time)
        params["embed.time.proj.bias"] = init.uniform(rng, (d,), cfg.d_time)
        if cfg.mode == "compound":
            params["embed.level"] = init.uniform(rng, (cfg.levels, d), 1)
            params["embed.side"] = init.uniform(rng, (2, d), 1)
            params["embed.feature"] = init.uniform(rng, (2, d), 1)
            params["embed.ticker"] = init.uniform(rng, (cfg.n_tickers, d), 1)
        elif cfg.mode == "per_variable":
            params["embed.variable"] = init.uniform(rng, (n, d), 1)
        params["embed.given"] = init.zeros((2, d))
        self.p = params

    @property
    def flattened(self):
        return self.cfg.mode != "temporal"

    # -- parts ---------------------------------------------------------------
    def time_features(self, times):
        """Affine-mapped Time2Vec rows for ``times`` (shape ``(..., L)``)."""
        p = self.p
        z = time2vec(times, p["embed.time.w"], p["embed.time.b"])
        return z @ p["embed.time.proj.weight"] + p["embed.time.proj.bias"]

    def variable_vectors(self):
        """``(N, d_model)`` variable part of every series."""
        p = self.p
        if self.cfg.mode == "per_variable":
            return p["embed.variable"]
        if self.cfg.mode != "compound":
            raise BadParams("temporal mode has no variable embedding")
        acc = (nx.gather_rows(p["embed.level"], self.level_idx)
               + nx.gather_rows(p["embed.side"], self.side_idx)
               + nx.gather_rows(p["embed.feature"], self.feature_idx)
               + nx.gather_rows(p["embed.ticker"], self.ticker_idx))
        return nx.scale(acc, self.cfg.compound_scale)

    def variable_embedding(self, var):
        """Variable part of a single series, as a ``(d_model,)`` Tensor."""
        col = var.column(self.cfg.n_tickers, self.cfg.levels)
        return nx.take(self.variable_vectors(), [col], axis=0).reshape(self.cfg.d_model)

    def given_embedding(self, target):
        return nx.take(self.p["embed.given"], [1 if target else 0], axis=0)

    def _times(self, context_times, target_times):
        lc, lt = context_times.shape[-1], target_times.shape[-1]
        if self.cfg.time_mode == "relative":
            t = np.arange(lc + lt, dtype=np.float64) / (lc + lt)
            return t[:lc], t[lc:]
        return (np.asarray(context_times) / SECONDS_PER_DAY,
                np.asarray(target_times) / SECONDS_PER_DAY)

    # -- full window -----------------------------------------------------------
    def embed(self, context, context_times, target_times):
        """Context tokens and target tokens for a batch.

        ``context`` is a Tensor or array ``(B, L_c, N)`` of scaled values.
        Returns ``(ctx_tokens, tgt_tokens)``. Context tokens are
        ``(B, L_c*N, d)`` (flattened) or ``(B, L_c, d)``; target tokens
        carry no values and are ``(L_t*N, d)`` or ``(L_t, d)`` in relative
        time mode (broadcast over the batch), with a leading batch axis in
        absolute time mode.
        """
        p = self.p
        context = nx.as_tensor(context)
        b, lc, n = context.shape
        t_ctx, t_tgt = self._times(np.asarray(context_times), np.asarray(target_times))
        lt = t_tgt.shape[-1]
        time_ctx = self.time_features(t_ctx)
        time_tgt = self.time_features(t_tgt)
        placeholder = p["embed.placeholder"]
        if not self.flattened:
            value = context @ p["embed.value.weight"] + p["embed.value.bias"]
            ctx = value + time_ctx + self.given_embedding(False)
            tgt = time_tgt + placeholder + self.given_embedding(True)
            return ctx, tgt

        var = self.variable_vectors()
        ctx_time_rows = np.repeat(np.arange(lc), n)
        tgt_time_rows = np.repeat(np.arange(lt), n)
        ctx_vars = np.tile(np.arange(n), lc)
        tgt_vars = np.tile(np.arange(n), lt)
        value = context.reshape(b, lc * n, 1) @ p["embed.value.weight"] + p["embed.value.bias"]
        ctx = (value
               + nx.take(time_ctx, ctx_time_rows, axis=-2)
               + nx.gather_rows(var, ctx_vars)
               + self.given_embedding(False))
        tgt = (nx.take(time_tgt, tgt_time_rows, axis=-2)
               + nx.gather_rows(var, tgt_vars)
               + placeholder
               + self.given_embedding(True))
        return ctx, tgt

    def token_times(self, length):
        """Time index of every token of a ``length``-step block."""
        if self.flattened:
            return np.repeat(np.arange(length), self.cfg.n_variables)
        return np.arange(length)


def embedding_parameter_count(params, names=None):
    """Number of scalars held by the named embedding parameters."""
    if names is None:
        names = [k for k in params if k.startswith("embed.")]
    return int(sum(params[k].size for k in names if k in params))


def variable_embedding_parameter_count(params):
    """Scalars in the variable embedding (attribute tables or per-series table)."""
    return embedding_parameter_count(params, list(ATTRIBUTE_TABLES) + ["embed.variable"])
