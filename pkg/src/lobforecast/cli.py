"""Command-line interface.

Commands: synth, ingest, train, evaluate, forecast, report. Every command
writes only under ``--out`` (guarded by a lock file) and exits 0 on success,
2 on usage errors, 3 on data errors and 4 on numeric divergence. Failures
print one line to stderr::

    lobforecast: error kind=<ErrorClass> exit=<code>: <message>
"""

import argparse
import os
import sys

from filelock import FileLock

from . import data
from .config import MODEL_MODES, ExperimentConfig, load_config, save_config
from .errors import BadParams, DataError, LobForecastError
from .evaluation import (EVAL_MODES, best_flags, count_violations, evaluate,
                         export_forecast, forecast_csv, table_csv)
from .experiment import load_data, load_run, run_training, test_windows
from .transforms import MODES


class UsageError(BadParams):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="flat YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODEL_MODES)
    p.add_argument("--transform", choices=MODES)
    p.add_argument("--out", help="output directory")
    p.add_argument("--interval", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--target", type=int)


def build_parser():
    parser = _Parser(prog="lobforecast", description="Limit order book forecasting")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--steps", type=int, default=4681)
    p.add_argument("--tickers", type=int, default=1)

    p = sub.add_parser("ingest", help="parse, resample and store LOBSTER files")
    _common(p)
    p.add_argument("--orderbook", action="append", required=True)
    p.add_argument("--message", action="append", required=True)
    p.add_argument("--ticker", action="append")

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    p.add_argument("--dataset", help="dataset file (default: the run's data source)")
    p.add_argument("--eval-mode", choices=EVAL_MODES + ("both",), default="both")

    p = sub.add_parser("forecast", help="export one test window forecast")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--window", type=int, default=0)

    p = sub.add_parser("report", help="compare trained runs on the test split")
    _common(p)
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--dataset")
    p.add_argument("--eval-mode", choices=EVAL_MODES, default="dollars")
    return parser


def _overrides(args):
    return {k: getattr(args, k, None)
            for k in ("seed", "mode", "transform", "interval", "levels", "context", "target")}


def _out_dir(args, cfg=None):
    out = args.out or (cfg.out if cfg is not None else None)
    if not out:
        raise UsageError("--out is required")
    os.makedirs(out, exist_ok=True)
    return out


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _run_config(args, cfg):
    """Apply ``--dataset`` and the common overrides to a stored run config."""
    over = _overrides(args)
    over.pop("seed")
    over.pop("mode")
    over.pop("transform")
    if getattr(args, "dataset", None):
        over.update(source="dataset", dataset=args.dataset)
    return cfg.override(**over)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(args):
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.tickers < 1:
        raise UsageError("--tickers must be >= 1")
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = cfg.override(source="synth", synth_steps=args.steps, tickers=args.tickers,
                       synth_seed=args.seed, **{k: v for k, v in _overrides(args).items()
                                                if k != "seed"})
    cfg.validate()
    out = _out_dir(args, cfg)
    with FileLock(os.path.join(out, ".lock")):
        ds = load_data(cfg)
        path = os.path.join(out, "dataset.csv")
        data.write_dataset(path, ds)
        save_config(cfg.override(source="dataset", dataset=path), os.path.join(out, "config.yaml"))
    bad = int(count_violations(ds.values, ds.layout).sum())
    print(f"snapshots={len(ds)} tickers={len(ds.tickers)} levels={ds.levels} "
          f"variables={ds.n_variables} violations={bad}")
    return 0


def cmd_ingest(args):
    if len(args.orderbook) != len(args.message):
        raise UsageError("give one --message per --orderbook")
    names = args.ticker or [f"T{i}" for i in range(len(args.orderbook))]
    if len(names) != len(args.orderbook):
        raise UsageError("give one --ticker per --orderbook")
    levels = args.levels or 5
    interval = args.interval or 5.0
    out = _out_dir(args)
    series, events = [], 0
    for ob, msg, name in zip(args.orderbook, args.message, names):
        s = data.parse_lobster(ob, msg, levels, name)
        events += len(s)
        series.append(data.resample(s, interval))
    ds = data.concat_tickers(series)
    with FileLock(os.path.join(out, ".lock")):
        path = os.path.join(out, "dataset.csv")
        data.write_dataset(path, ds)
        cfg = ExperimentConfig(source="dataset", dataset=path, levels=levels,
                               interval=interval, tickers=len(series))
        save_config(cfg, os.path.join(out, "config.yaml"))
    print(f"events={events} rejected=0 snapshots={len(ds)} tickers={len(ds.tickers)} "
          f"variables={ds.n_variables}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = cfg.override(**_overrides(args))
    out = _out_dir(args, cfg)
    cfg = cfg.override(out=out).validate()
    with FileLock(os.path.join(out, ".lock")):
        save_config(cfg, os.path.join(out, "config.yaml"))
        _, _, result = run_training(cfg, out, resume=args.resume)
    print(f"best_epoch={result.best_epoch} best_val_total_loss={result.best_val!r} "
          f"epochs={result.epochs} steps={result.steps} stopped={result.stopped}")
    return 0


def _evaluate_run(path, args, modes):
    cfg, model, scaler = load_run(path)
    cfg = _run_config(args, cfg)
    ds = load_data(cfg)
    raw, windows = test_windows(cfg, scaler, ds)
    name = cfg.mode
    rows = [evaluate(model, windows, scaler, ds.layout, m, cfg.w_o, cfg.structure_space, name)
            for m in modes]
    return cfg, rows


def cmd_evaluate(args):
    modes = EVAL_MODES if args.eval_mode == "both" else (args.eval_mode,)
    _, rows = _evaluate_run(args.checkpoint, args, modes)
    out = _out_dir(args)
    with FileLock(os.path.join(out, ".lock")):
        _write(os.path.join(out, "evaluation.csv"), table_csv(rows))
    for r in rows:
        print(f"mode={r['mode']} price_mse={r['price_mse']!r} "
              f"structure_loss={r['structure_loss']!r} violations={r['violations']}")
    return 0


def cmd_forecast(args):
    cfg, model, scaler = load_run(args.checkpoint)
    cfg = _run_config(args, cfg)
    ds = load_data(cfg)
    raw, _ = test_windows(cfg, scaler, ds)
    if not 0 <= args.window < len(raw):
        raise UsageError(f"--window must lie in [0, {len(raw)})")
    rows, summary = export_forecast(model, raw[args.window], scaler, ds.layout,
                                    ds.column_names())
    out = _out_dir(args)
    with FileLock(os.path.join(out, ".lock")):
        _write(os.path.join(out, "forecast.csv"), forecast_csv(rows, summary))
    print(f"rows={len(rows)} violations={sum(s[2] for s in summary)}")
    return 0


def cmd_report(args):
    rows = []
    for run in args.runs:
        _, r = _evaluate_run(run, args, (args.eval_mode,))
        rows.extend(r)
    flags = best_flags(rows)
    out = _out_dir(args)
    with FileLock(os.path.join(out, ".lock")):
        _write(os.path.join(out, "comparison.csv"), table_csv(rows, flags))
    print(f"models={len(rows)}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "report": cmd_report,
}


def _fail(exc, code):
    msg = " ".join(str(exc).split())
    print(f"lobforecast: error kind={type(exc).__name__} exit={code}: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(exc, 2)
    except LobForecastError as exc:
        return _fail(exc, exc.exit_code)
    except (OSError, ValueError) as exc:
        return _fail(exc, DataError.exit_code)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
