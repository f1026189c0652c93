"""Glue between an ExperimentConfig and the data, model and trainer modules."""

import os
from dataclasses import dataclass

from . import data
from . import numerics as nx
from .config import ExperimentConfig
from .errors import CheckpointFormatError
from .model import ModelConfig, build_model, load_params
from .trainer import train
from .transforms import ScalerParams, fit_pipeline, pipeline_forward


def load_data(cfg):
    """The gridded dataset described by ``cfg``."""
    if cfg.source == "synth":
        params = data.SynthParams(levels=cfg.levels, volatility=cfg.volatility,
                                  interval=cfg.interval)
        return data.synth_dataset(cfg.synth_seed, cfg.synth_steps, cfg.tickers, params)
    if cfg.source == "lobster":
        names = cfg.ticker_names or [f"T{i}" for i in range(len(cfg.orderbook))]
        series = [data.resample(data.parse_lobster(ob, msg, cfg.levels, name), cfg.interval)
                  for ob, msg, name in zip(cfg.orderbook, cfg.message, names)]
        return data.concat_tickers(series)
    return data.read_dataset(cfg.dataset)


@dataclass
class Prepared:
    dataset: data.LobDataset
    scaler: ScalerParams
    train: list  # model windows
    val: list
    test: list
    raw_test: list  # raw WindowPairs of the test split


def windows_for(segment, cfg, stride, tag):
    return data.make_windows(segment.values, cfg.context, cfg.target, stride,
                             times=segment.times, lead=1, tag=tag)


def prepare(cfg, ds=None):
    """Split, fit the scaler on the training rows and window every split."""
    ds = ds if ds is not None else load_data(cfg)
    tr, va, te = data.split(ds, min_length=cfg.context + cfg.target + 1)
    scaler = fit_pipeline(tr.values, ds.layout.is_price, cfg.transform)
    raw_train = windows_for(tr, cfg, cfg.stride, "train")
    raw_val = windows_for(va, cfg, cfg.eval_stride, "val")
    raw_test = windows_for(te, cfg, cfg.eval_stride, "test")
    return Prepared(ds, scaler, pipeline_forward(raw_train, scaler),
                    pipeline_forward(raw_val, scaler), pipeline_forward(raw_test, scaler),
                    raw_test)


def test_windows(cfg, scaler, ds):
    """Raw and model-space test windows of ``ds`` under a fitted scaler."""
    _, _, te = data.split(ds, min_length=cfg.context + cfg.target + 1)
    raw = windows_for(te, cfg, cfg.eval_stride, "test")
    return raw, pipeline_forward(raw, scaler)


def model_for(cfg, ds):
    return build_model(cfg.model_config(len(ds.tickers), ds.levels), cfg.seed)


def run_training(cfg, out_dir, resume=False, prepared=None):
    """Train per ``cfg``, writing checkpoints and the metrics log to ``out_dir``."""
    prep = prepared or prepare(cfg)
    model = model_for(cfg, prep.dataset)
    tcfg = cfg.train_config(checkpoint_dir=out_dir)
    result = train(model, prep.train, prep.val, tcfg, prep.scaler, prep.dataset.layout,
                   resume=resume, header={"experiment": cfg.to_dict()})
    return model, prep, result


def load_run(path):
    """``(ExperimentConfig, model, scaler)`` from a checkpoint or run directory."""
    if os.path.isdir(path):
        path = os.path.join(path, "best.ckpt")
    header, arrays = nx.read_checkpoint(path)
    try:
        cfg = ExperimentConfig.from_dict(header["experiment"])
        mcfg = ModelConfig.from_dict(header["model"])
        transform = header["transform"]
    except KeyError as exc:
        raise CheckpointFormatError(f"{path}: header lacks {exc}") from None
    model = build_model(mcfg, header.get("seed", cfg.seed))
    load_params(model, arrays)
    scaler = ScalerParams.from_arrays(transform, arrays)
    return cfg, model, scaler
