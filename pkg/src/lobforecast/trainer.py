"""Deterministic training loop: Adam, warmup/plateau schedule, early stopping.

Each epoch shuffles the training windows with a dedicated RNG stream (seeded
independently of weight initialization), runs one Adam update per batch,
then scores the validation windows. The parameters with the lowest
validation total loss are kept and written to ``best.ckpt``; ``last.ckpt``
holds everything needed to resume the run bit-exactly.
"""

import csv
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numerics as nx
from .errors import BadParams, NonFiniteGradient, NonFiniteLoss
from .objective import LossBreakdown, total_loss
from .transforms import stack_windows

BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
DECAY_TRIGGERS = ("plateau", "epoch")
METRIC_COLUMNS = (
    ["epoch", "step", "lr"]
    + [f"train_{c}" for c in LossBreakdown.columns()]
    + [f"val_{c}" for c in LossBreakdown.columns()]
)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup_steps: int = 1000
    decay_factor: float = 0.8
    decay_trigger: str = "plateau"
    patience: int = 10
    batch_size: int = 8
    max_epochs: int = 100
    seed: int = 0
    w_o: float = 0.01
    structure_space: str = "dollars"
    checkpoint_dir: str = None
    max_steps: int = None    # hard cap on optimizer updates
    stop_loss: float = None  # stop once an epoch's train forecasting loss is below this

    def validate(self):
        if self.lr < 0 or self.warmup_steps < 0 or self.w_o < 0:
            raise BadParams("lr, warmup_steps and w_o must be nonnegative")
        if not 0 < self.decay_factor <= 1:
            raise BadParams("decay_factor must lie in (0, 1]")
        if self.decay_trigger not in DECAY_TRIGGERS:
            raise BadParams(f"decay_trigger must be one of {DECAY_TRIGGERS}")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise BadParams("patience, batch_size and max_epochs must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise BadParams("max_steps must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    best_val: float = math.inf
    best_epoch: int = 0
    since_improvement: int = 0
    plateau_count: int = 0
    rng_state: dict = None

    def header(self):
        return {
            "step": self.step,
            "epoch": self.epoch,
            "best_val": None if math.isinf(self.best_val) else self.best_val,
            "best_epoch": self.best_epoch,
            "since_improvement": self.since_improvement,
            "plateau_count": self.plateau_count,
            "rng_state": self.rng_state,
        }

    def arrays(self):
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def restore(cls, header, arrays):
        st = cls(step=header["step"], epoch=header["epoch"],
                 best_epoch=header["best_epoch"],
                 since_improvement=header["since_improvement"],
                 plateau_count=header["plateau_count"],
                 rng_state=header["rng_state"])
        st.best_val = math.inf if header["best_val"] is None else header["best_val"]
        for k, a in arrays.items():
            if k.startswith("adam.m."):
                st.m[k[len("adam.m."):]] = a.copy()
            elif k.startswith("adam.v."):
                st.v[k[len("adam.v."):]] = a.copy()
        return st


def lr_at(step, plateau_count, cfg):
    """Linear warmup to ``cfg.lr``, then ``cfg.lr * decay_factor ** plateau_count``."""
    if step < 0:
        raise BadParams("step must be nonnegative")
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    return cfg.lr * cfg.decay_factor ** plateau_count


def optimizer_step(params, state, lr, betas=BETAS, eps=ADAM_EPS):
    """One bias-corrected Adam update of every parameter in ``params``.

    Parameters without a gradient are treated as having a zero gradient.
    Raises NonFiniteGradient before touching any parameter.
    """
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros(p.shape)
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"gradient of {name} is not finite")
        grads[name] = g
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = b1 * m + (1 - b1) * g if m is not None else (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g if v is not None else (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.assign(p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        p.grad = None
    return state


def zero_grad(params):
    for p in params.values():
        p.grad = None


# --------------------------------------------------------------------------
# loss evaluation
# --------------------------------------------------------------------------

def _batches(windows, order, size):
    for i in range(0, len(order), size):
        yield stack_windows([windows[j] for j in order[i:i + size]])


def _accumulate(parts):
    """Window-weighted mean of (count, LossBreakdown) pairs, fixed order."""
    n = sum(c for c, _ in parts)
    f = sum(c * b.forecasting_loss for c, b in parts) / n
    s = sum(c * b.structure_loss for c, b in parts) / n
    t = sum(c * b.total_loss for c, b in parts) / n
    return LossBreakdown(f, s, t)


def evaluate_loss(model, windows, scaler, layout, w_o=0.01, space="dollars", batch_size=32):
    """Mean LossBreakdown of ``model`` over ``windows`` (no gradients)."""
    parts = []
    with nx.no_grad():
        for batch in _batches(windows, np.arange(len(windows)), batch_size):
            pred = model.forward(batch)
            _, br = total_loss(pred, batch, scaler, layout, w_o, space)
            parts.append((len(batch), br))
    return _accumulate(parts)


# --------------------------------------------------------------------------
# checkpoints and log
# --------------------------------------------------------------------------

def model_header(model, scaler, extra=None):
    h = {"model": model.config.to_dict(), "seed": model.seed,
         "transform": scaler.mode if scaler is not None else None}
    if extra:
        h.update(extra)
    return h


def save_model(path, model, scaler, extra=None, arrays=None):
    out = {k: p.data for k, p in model.params.items()}
    if scaler is not None:
        out.update(scaler.to_arrays())
    if arrays:
        out.update(arrays)
    nx.write_checkpoint(path, model_header(model, scaler, extra), out)


def _append_metrics(path, row):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(METRIC_COLUMNS)
        w.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c]))
                    for c in METRIC_COLUMNS])


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in r:
            r[k] = int(r[k]) if k in ("epoch", "step") else float(r[k])
    return rows


@dataclass
class TrainResult:
    best_val: float
    best_epoch: int
    epochs: int
    steps: int
    history: list
    stopped: str
    best_params: dict


def train(model, train_windows, val_windows, cfg, scaler=None, layout=None, resume=False,
          header=None):
    """Fit ``model`` and leave it holding the best parameters.

    ``val_windows=None`` monitors the training loss instead. ``header`` is
    extra JSON metadata stored in both checkpoints. Returns a
    TrainResult; ``stopped`` is one of ``max_epochs``, ``patience``,
    ``max_steps`` or ``stop_loss``.
    """
    cfg.validate()
    if not train_windows:
        raise BadParams("no training windows")
    ckdir = cfg.checkpoint_dir
    last_path = best_path = log_path = None
    if ckdir:
        os.makedirs(ckdir, exist_ok=True)
        last_path = os.path.join(ckdir, "last.ckpt")
        best_path = os.path.join(ckdir, "best.ckpt")
        log_path = os.path.join(ckdir, "metrics.csv")

    rng = np.random.default_rng([cfg.seed, 1])
    state = TrainState()
    best_params = {k: p.data.copy() for k, p in model.params.items()}
    history = []
    if resume and last_path and os.path.exists(last_path):
        header, arrays = nx.read_checkpoint(last_path)
        for k, p in model.params.items():
            p.assign(arrays[k])
        state = TrainState.restore(header["train_state"], arrays)
        rng.bit_generator.state = state.rng_state
        if os.path.exists(best_path):
            _, best_arrays = nx.read_checkpoint(best_path)
            best_params = {k: best_arrays[k].copy() for k in model.params}
        if os.path.exists(log_path):
            history = [r for r in read_metrics(log_path) if r["epoch"] <= state.epoch]

    params = model.params
    space = cfg.structure_space
    stopped = "max_epochs"
    while state.epoch < cfg.max_epochs:
        order = rng.permutation(len(train_windows))
        parts = []
        lr = lr_at(state.step, state.plateau_count, cfg)
        for batch in _batches(train_windows, order, cfg.batch_size):
            lr = lr_at(state.step + 1, state.plateau_count, cfg)
            zero_grad(params)
            pred = model.forward(batch, training=True)
            loss, br = total_loss(pred, batch, scaler, layout, cfg.w_o, space)
            if not math.isfinite(br.total_loss):
                model_restore(model, best_params)
                raise NonFiniteLoss(f"loss became non-finite at step {state.step + 1}")
            loss.backward()
            optimizer_step(params, state, lr)
            parts.append((len(batch), br))
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                break
        state.epoch += 1
        train_br = _accumulate(parts)
        if val_windows:
            val_br = evaluate_loss(model, val_windows, scaler, layout, cfg.w_o, space)
        else:
            val_br = train_br
        if not math.isfinite(val_br.total_loss):
            model_restore(model, best_params)
            raise NonFiniteLoss(f"validation loss became non-finite in epoch {state.epoch}")

        if val_br.total_loss < state.best_val:
            state.best_val = val_br.total_loss
            state.best_epoch = state.epoch
            state.since_improvement = 0
            best_params = {k: p.data.copy() for k, p in params.items()}
            if best_path:
                save_model(best_path, model, scaler,
                           {"epoch": state.epoch, "val_total_loss": state.best_val,
                            "train": cfg.to_dict(), **(header or {})})
        else:
            state.since_improvement += 1
            if cfg.decay_trigger == "plateau":
                state.plateau_count += 1
        if cfg.decay_trigger == "epoch":
            state.plateau_count += 1

        row = {"epoch": state.epoch, "step": state.step, "lr": lr}
        row.update({f"train_{k}": v for k, v in train_br.row().items()})
        row.update({f"val_{k}": v for k, v in val_br.row().items()})
        history.append(row)
        state.rng_state = rng.bit_generator.state
        if last_path:
            save_model(last_path, model, scaler,
                       {"train_state": state.header(), "train": cfg.to_dict(),
                        **(header or {})},
                       state.arrays())
            _append_metrics(log_path, row)

        if cfg.stop_loss is not None and train_br.forecasting_loss < cfg.stop_loss:
            stopped = "stop_loss"
            break
        if cfg.max_steps is not None and state.step >= cfg.max_steps:
            stopped = "max_steps"
            break
        if state.since_improvement >= cfg.patience:
            stopped = "patience"
            break

    model_restore(model, best_params)
    return TrainResult(state.best_val, state.best_epoch, state.epoch, state.step,
                       history, stopped, best_params)


def model_restore(model, arrays):
    for k, p in model.params.items():
        p.assign(arrays[k])
