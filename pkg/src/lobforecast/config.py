"""Flat experiment configuration.

The config file is a flat YAML mapping of ``key: value`` lines, one key per
field below; unknown keys are rejected. Command-line flags override file
values and the effective config is written next to every output.

Data source keys:
  source          synth | lobster | dataset
  synth_seed, synth_steps, tickers, volatility       (source: synth)
  orderbook, message, ticker_names                   (source: lobster; lists)
  dataset                                            (source: dataset; file path)
"""

from dataclasses import asdict, dataclass, fields

import yaml

from .errors import BadParams
from .model import ModelConfig
from .trainer import TrainConfig
from .transforms import MODES

SOURCES = ("synth", "lobster", "dataset")
MODEL_MODES = ("temporal", "per_variable", "compound", "linear")


@dataclass
class ExperimentConfig:
    # data
    source: str = "synth"
    synth_seed: int = 0
    synth_steps: int = 4681
    tickers: int = 1
    volatility: float = 2e-4
    orderbook: list = None
    message: list = None
    ticker_names: list = None
    dataset: str = None
    interval: float = 5.0
    levels: int = 5
    # windows
    context: int = 30
    target: int = 6
    stride: int = 1
    eval_stride: int = 1
    transform: str = "both"
    # model
    mode: str = "compound"
    d_model: int = 48
    n_heads: int = 3
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 96
    d_time: int = 8
    revin: bool = True
    compound_scale: float = 0.5
    time_mode: str = "relative"
    dropout: float = 0.0
    # training
    seed: int = 0
    lr: float = 1e-3
    warmup_steps: int = 1000
    decay_factor: float = 0.8
    decay_trigger: str = "plateau"
    patience: int = 10
    batch_size: int = 8
    max_epochs: int = 100
    max_steps: int = None
    w_o: float = 0.01
    structure_space: str = "dollars"
    out: str = None

    @property
    def n_tickers(self):
        if self.source == "lobster":
            return len(self.orderbook or [])
        return self.tickers

    def validate(self):
        if self.source not in SOURCES:
            raise BadParams(f"source must be one of {SOURCES}")
        if self.transform not in MODES:
            raise BadParams(f"transform must be one of {MODES}")
        if self.mode not in MODEL_MODES:
            raise BadParams(f"mode must be one of {MODEL_MODES}")
        if self.source == "lobster":
            if not self.orderbook or len(self.orderbook) != len(self.message or []):
                raise BadParams("lobster source needs matching orderbook and message lists")
        if self.source == "dataset" and not self.dataset:
            raise BadParams("dataset source needs a dataset path")
        if self.source == "synth" and (self.synth_steps < 1 or self.tickers < 1):
            raise BadParams("synth_steps and tickers must be positive")
        if min(self.levels, self.context, self.target, self.stride, self.eval_stride) < 1:
            raise BadParams("levels, context, target and strides must be positive")
        if self.interval <= 0:
            raise BadParams("interval must be positive")
        self.model_config().validate()
        self.train_config().validate()
        return self

    def model_config(self, n_tickers=None, levels=None):
        return ModelConfig(
            mode=self.mode, d_model=self.d_model, n_heads=self.n_heads,
            n_encoder_layers=self.n_encoder_layers, n_decoder_layers=self.n_decoder_layers,
            d_ff=self.d_ff, d_time=self.d_time, revin=self.revin, w_o=self.w_o,
            context=self.context, target=self.target,
            n_tickers=n_tickers or max(self.n_tickers, 1), levels=levels or self.levels,
            compound_scale=self.compound_scale, time_mode=self.time_mode,
            structure_space=self.structure_space, dropout=self.dropout)

    def train_config(self, checkpoint_dir=None):
        return TrainConfig(
            lr=self.lr, warmup_steps=self.warmup_steps, decay_factor=self.decay_factor,
            decay_trigger=self.decay_trigger, patience=self.patience,
            batch_size=self.batch_size, max_epochs=self.max_epochs, seed=self.seed,
            w_o=self.w_o, structure_space=self.structure_space,
            checkpoint_dir=checkpoint_dir, max_steps=self.max_steps)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise BadParams(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def override(self, **values):
        """Copy with the non-None ``values`` replaced."""
        d = self.to_dict()
        d.update({k: v for k, v in values.items() if v is not None})
        return ExperimentConfig.from_dict(d)


def load_config(path):
    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    if not isinstance(d, dict):
        raise BadParams(f"{path}: config must be a mapping")
    return ExperimentConfig.from_dict(d)


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))
