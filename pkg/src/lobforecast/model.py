"""Attention encoder-decoder forecaster and the linear autoregressive baseline.

Blocks are post-norm: ``x = norm(x + sublayer(x))``. The decoder reads
value-free target tokens, attends causally over them (a token sees every
token whose time index is not later than its own) and unmasked over the
encoder memory; a read-out head turns each decoded token back into LOB
values.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numerics as nx
from .embedding import EMBEDDING_MODES, Embedding, EmbeddingConfig
from .errors import BadParams, NonFiniteActivation
from .numerics import init

MASK_FILL = -1e30
MODEL_KINDS = EMBEDDING_MODES + ("linear",)


@dataclass
class ModelConfig:
    mode: str = "compound"
    d_model: int = 48
    n_heads: int = 3
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 96
    d_time: int = 8
    revin: bool = True
    w_o: float = 0.01
    context: int = 120
    target: int = 24
    n_tickers: int = 1
    levels: int = 5
    compound_scale: float = 0.5
    time_mode: str = "relative"
    structure_space: str = "dollars"
    dropout: float = 0.0

    @property
    def n_variables(self):
        return self.n_tickers * 4 * self.levels

    def validate(self):
        if self.mode not in MODEL_KINDS:
            raise BadParams(f"unknown model mode {self.mode!r}; expected one of {MODEL_KINDS}")
        for name in ("d_model", "n_heads", "d_ff", "context", "target", "n_tickers", "levels"):
            if getattr(self, name) < 1:
                raise BadParams(f"{name} must be >= 1")
        if self.n_encoder_layers < 0 or self.n_decoder_layers < 0:
            raise BadParams("layer counts must be >= 0")
        if self.d_model % self.n_heads:
            raise BadParams(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.w_o < 0 or not 0 <= self.dropout < 1:
            raise BadParams("need w_o >= 0 and 0 <= dropout < 1")
        if self.structure_space not in ("dollars", "scaled"):
            raise BadParams(f"unknown structure space {self.structure_space!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def embedding_config(self):
        return EmbeddingConfig(self.d_model, self.d_time, self.mode, self.levels,
                               self.n_tickers, self.compound_scale, self.time_mode,
                               self.context + self.target)


# --------------------------------------------------------------------------
# attention
# --------------------------------------------------------------------------

def mask_bias(allowed):
    """Additive score bias: 0 where ``allowed`` is True, MASK_FILL elsewhere."""
    return np.where(np.asarray(allowed, dtype=bool), 0.0, MASK_FILL)


def attention(q, k, v, mask=None):
    """softmax(q k^T / sqrt(d) + mask) v for one head.

    ``mask`` is a boolean ``(L_q, L_k)`` array of visible positions.
    """
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    scores = nx.scale(q @ nx.transpose(k), 1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + mask_bias(mask)
    return nx.softmax(scores, axis=-1) @ v


def causal_mask(query_times, key_times):
    """Boolean mask letting a query see keys whose time is not later."""
    return np.asarray(key_times)[None, :] <= np.asarray(query_times)[:, None]


def _linear(p, prefix, fan_in, fan_out, rng, bias=True):
    p[f"{prefix}.weight"] = init.uniform(rng, (fan_in, fan_out), fan_in)
    if bias:
        p[f"{prefix}.bias"] = init.uniform(rng, (fan_out,), fan_in)


def _apply_linear(p, prefix, x):
    y = x @ p[f"{prefix}.weight"]
    bias = p.get(f"{prefix}.bias")
    return y if bias is None else y + bias


class MultiHeadAttention:
    def __init__(self, prefix, d_model, n_heads, params, rng):
        self.prefix, self.h, self.dh = prefix, n_heads, d_model // n_heads
        for name in ("q", "k", "v"):
            params[f"{prefix}.{name}"] = init.uniform(rng, (d_model, d_model), d_model)
        _linear(params, f"{prefix}.o", d_model, d_model, rng)
        self.p = params

    def _heads(self, x):
        lead = x.shape[:-1]
        x = x.reshape(lead + (self.h, self.dh))
        axes = list(range(x.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        return nx.transpose(x, axes)

    def __call__(self, x, memory, bias=None):
        p, pre = self.p, self.prefix
        q = self._heads(nx.scale(x @ p[f"{pre}.q"], 1.0 / np.sqrt(self.dh)))
        k = self._heads(memory @ p[f"{pre}.k"])
        v = self._heads(memory @ p[f"{pre}.v"])
        scores = q @ nx.transpose(k)
        if bias is not None:
            scores = scores + bias
        ctx = nx.softmax(scores, axis=-1) @ v
        axes = list(range(ctx.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        ctx = nx.transpose(ctx, axes)
        ctx = ctx.reshape(ctx.shape[:-2] + (self.h * self.dh,))
        return _apply_linear(p, f"{pre}.o", ctx)


class _Block:
    def _norm(self, x, i):
        return nx.layer_norm(x, self.p[f"{self.prefix}.norm.{i}.gain"],
                             self.p[f"{self.prefix}.norm.{i}.offset"])

    def _ff(self, x):
        h = nx.relu(_apply_linear(self.p, f"{self.prefix}.ff.1", x))
        return _apply_linear(self.p, f"{self.prefix}.ff.2", h)

    def _add_norms(self, params, d_model, count):
        for i in range(1, count + 1):
            params[f"{self.prefix}.norm.{i}.gain"] = init.ones((d_model,))
            params[f"{self.prefix}.norm.{i}.offset"] = init.zeros((d_model,))


class EncoderLayer(_Block):
    def __init__(self, prefix, cfg, params, rng):
        self.prefix, self.p = prefix, params
        self.attn = MultiHeadAttention(f"{prefix}.attn", cfg.d_model, cfg.n_heads, params, rng)
        _linear(params, f"{prefix}.ff.1", cfg.d_model, cfg.d_ff, rng)
        _linear(params, f"{prefix}.ff.2", cfg.d_ff, cfg.d_model, rng)
        self._add_norms(params, cfg.d_model, 2)

    def __call__(self, x, drop):
        x = self._norm(x + drop(self.attn(x, x)), 1)
        return self._norm(x + drop(self._ff(x)), 2)


class DecoderLayer(_Block):
    def __init__(self, prefix, cfg, params, rng):
        self.prefix, self.p = prefix, params
        self.attn = MultiHeadAttention(f"{prefix}.attn", cfg.d_model, cfg.n_heads, params, rng)
        self.cross = MultiHeadAttention(f"{prefix}.cross", cfg.d_model, cfg.n_heads, params, rng)
        _linear(params, f"{prefix}.ff.1", cfg.d_model, cfg.d_ff, rng)
        _linear(params, f"{prefix}.ff.2", cfg.d_ff, cfg.d_model, rng)
        self._add_norms(params, cfg.d_model, 3)

    def __call__(self, x, memory, self_bias, drop):
        x = self._norm(x + drop(self.attn(x, x, self_bias)), 1)
        x = self._norm(x + drop(self.cross(x, memory)), 2)
        return self._norm(x + drop(self._ff(x)), 3)


def _check_finite(x, where):
    if not np.isfinite(x.data).all():
        raise NonFiniteActivation(f"non-finite activation after {where}")
    return x


# --------------------------------------------------------------------------
# reversible window normalization
# --------------------------------------------------------------------------

STD_FLOOR = 1e-6


def window_stats(context):
    """Per-window, per-variable mean and floored standard deviation."""
    context = np.asarray(context, dtype=np.float64)
    mu = context.mean(axis=-2, keepdims=True)
    sd = np.maximum(context.std(axis=-2, keepdims=True), STD_FLOOR)
    return mu, sd


def revin_norm(context, gain, offset):
    """Normalize context values per variable; returns ``(Tensor, stats)``."""
    mu, sd = window_stats(context)
    z = (np.asarray(context, dtype=np.float64) - mu) / sd
    return nx.as_tensor(z) * gain + offset, (mu, sd)


def revin_denorm(pred, stats, gain, offset):
    mu, sd = stats
    return (pred - offset) / gain * sd + mu


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------

class Forecaster:
    """Embedding + encoder-decoder + read-out head."""

    kind = "attention"

    def __init__(self, cfg, seed=0):
        cfg.validate()
        if cfg.mode == "linear":
            raise BadParams("use LinearBaseline for mode 'linear'")
        self.config = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = {}
        p = self.params
        self.embedding = Embedding(cfg.embedding_config(), p, rng)
        self.encoder = [EncoderLayer(f"enc.{i}", cfg, p, rng) for i in range(cfg.n_encoder_layers)]
        self.decoder = [DecoderLayer(f"dec.{i}", cfg, p, rng) for i in range(cfg.n_decoder_layers)]
        n = cfg.n_variables
        if self.embedding.flattened:
            _linear(p, "head", cfg.d_model, 1, rng)
        else:
            _linear(p, "head", cfg.d_model, n, rng)
        if cfg.revin:
            p["revin.gain"] = init.ones((n,))
            p["revin.offset"] = init.zeros((n,))
        self._drop_rng = np.random.default_rng([seed, 2])

    # -- pieces ------------------------------------------------------------
    def _dropper(self, training):
        rate = self.config.dropout
        if not training or rate == 0:
            return lambda x: x

        def drop(x):
            keep = self._drop_rng.random(x.shape) >= rate
            return x * (keep / (1.0 - rate))

        return drop

    def encode(self, tokens, training=False):
        drop = self._dropper(training)
        x = tokens
        for layer in self.encoder:
            x = layer(x, drop)
        return _check_finite(x, "encoder") if self.encoder else x

    def decoder_mask(self):
        t = self.embedding.token_times(self.config.target)
        return causal_mask(t, t)

    def decode(self, tokens, memory, training=False):
        drop = self._dropper(training)
        bias = mask_bias(self.decoder_mask())
        x = tokens
        for layer in self.decoder:
            x = layer(x, memory, bias, drop)
        return _check_finite(x, "decoder")

    def readout(self, decoded):
        cfg = self.config
        y = _apply_linear(self.params, "head", decoded)
        b = y.shape[0]
        return y.reshape(b, cfg.target, cfg.n_variables)

    def forward(self, batch, training=False):
        """Predict model-space target values ``(B, L_t, N)`` for a WindowBatch."""
        p = self.params
        context = batch.context
        stats = None
        if self.config.revin:
            context, stats = revin_norm(context, p["revin.gain"], p["revin.offset"])
        ctx_tok, tgt_tok = self.embedding.embed(context, batch.context_times, batch.target_times)
        if tgt_tok.ndim == 2:
            tgt_tok = tgt_tok + np.zeros((len(batch), 1, 1))
        memory = self.encode(ctx_tok, training)
        decoded = self.decode(tgt_tok, memory, training)
        pred = self.readout(decoded)
        if stats is not None:
            pred = revin_denorm(pred, stats, p["revin.gain"], p["revin.offset"])
        return pred


class LinearBaseline:
    """Per-horizon lag regression with lag weights shared across variables.

    prediction[h, n] = sum_l lags[h, l-1] * context[L_c - l, n] + bias[h, n]
    """

    kind = "linear"

    def __init__(self, cfg, seed=0):
        cfg.validate()
        self.config = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = {
            "baseline.lags": init.uniform(rng, (cfg.target, cfg.context), cfg.context),
            "baseline.bias": init.uniform(rng, (cfg.target, cfg.n_variables), cfg.context),
        }

    def forward(self, batch, training=False):
        p = self.params
        lc = self.config.context
        aligned = nx.take(p["baseline.lags"], np.arange(lc - 1, -1, -1), axis=1)
        return aligned @ nx.as_tensor(batch.context) + p["baseline.bias"]


def build_model(cfg, seed=0):
    if cfg.mode == "linear":
        return LinearBaseline(cfg, seed)
    return Forecaster(cfg, seed)


def load_params(model, arrays):
    """Copy named arrays into a model's parameters (names must match)."""
    missing = [k for k in model.params if k not in arrays]
    if missing:
        raise BadParams(f"checkpoint lacks parameters: {missing[:5]}")
    for k, t in model.params.items():
        t.assign(arrays[k])
