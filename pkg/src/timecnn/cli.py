"""Command-line entry point.

    timecnn train|eval|ablate|profile|correlate|noise|synth|sweep --config PATH [--set k=v]... [--out DIR]

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import sys
from pathlib import Path

from . import correlation
from .config import RunConfig, dump_config, load_config
from .data import SeriesDataset, load_csv, save_csv, synth_dynamic_corr
from .errors import ConfigError, DataError, FormatError, NonFiniteError
from .evaluation import count_macs, count_params, evaluate, time_inference
from .model import init_params, load_checkpoint, save_checkpoint
from .numeric import make_rng
from .pipeline import ablation_table, fit_and_test, lookback_sweep, noise_table, prepare
from .train import multi_seed_run

log = logging.getLogger("timecnn")

OUTPUT_ROOT_ENV = "TIMECNN_OUTPUT_ROOT"
COMMANDS = ("train", "eval", "ablate", "profile", "correlate", "noise", "synth", "sweep")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def synth_dataset(cfg: RunConfig) -> SeriesDataset:
    s = cfg.synth
    return synth_dynamic_corr(s.rows, s.n_vars, s.regime_length, s.seed, s.noise, lag=s.lag)


def load_dataset(cfg: RunConfig) -> SeriesDataset:
    if cfg.dataset.synthetic:
        return synth_dataset(cfg)
    return load_csv(cfg.dataset.path, cfg.dataset.has_date_column, name=cfg.dataset.preset or None)


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    ds = load_dataset(cfg)
    model_cfg = cfg.model_config(ds.n_vars)
    data = prepare(ds, cfg.split_spec(), model_cfg.lookback, model_cfg.horizon)
    seeds = cfg.seeds or [cfg.train_config().seed]
    outcomes = {}

    def run(seed):
        tcfg = dataclasses.replace(cfg.train_config(), seed=seed)
        outcomes[seed] = fit_and_test(model_cfg, data, tcfg)
        return {"mse": outcomes[seed].test.mse, "mae": outcomes[seed].test.mae}

    summary = multi_seed_run(seeds, run)
    first = outcomes[seeds[0]]
    save_checkpoint(first.result.params, model_cfg, out / "checkpoint.bin")
    (out / "history.jsonl").write_text(first.result.history_jsonl(), encoding="utf-8")
    metrics = {
        "dataset": ds.name,
        "lookback": model_cfg.lookback,
        "horizon": model_cfg.horizon,
        "mixer": model_cfg.mixer,
        "test": first.test.to_dict(),
        "best_epoch": first.result.best_epoch,
        "params": count_params(model_cfg),
        "macs": count_macs(model_cfg),
        "seeds": [{"seed": s, **m} for s, m in summary.per_seed],
        "mean": summary.mean,
        "std": summary.std,
        "formatted": summary.formatted(),
    }
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_eval(cfg: RunConfig, out: Path, checkpoint: Path | None) -> dict:
    path = checkpoint or out / "checkpoint.bin"
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    params, model_cfg = load_checkpoint(path)
    ds = load_dataset(cfg)
    if ds.n_vars != model_cfg.n_vars:
        raise DataError(f"checkpoint expects {model_cfg.n_vars} variables, dataset has {ds.n_vars}")
    data = prepare(ds, cfg.split_spec(), model_cfg.lookback, model_cfg.horizon)
    report = evaluate(params, model_cfg, data.test, per_horizon=True)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    metrics = {"dataset": ds.name, "checkpoint": path.name, "checkpoint_sha256": digest, "test": report.to_dict()}
    _write_json(out / "eval_metrics.json", metrics)
    return metrics


def cmd_ablate(cfg: RunConfig, out: Path) -> dict:
    ds = load_dataset(cfg)
    model_cfg = cfg.model_config(ds.n_vars)
    variants = cfg.ablate.variants
    for v in variants:
        model_cfg.replace(mixer=v)  # rejects unknown names before any training
    data = prepare(ds, cfg.split_spec(), model_cfg.lookback, model_cfg.horizon)
    rows = ablation_table(model_cfg, data, cfg.train_config(), variants)
    _write_rows(out / "ablation.csv", rows)
    metrics = {"dataset": ds.name, "ablation": rows}
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_profile(cfg: RunConfig, out: Path) -> dict:
    n_vars = cfg.synth.n_vars if cfg.dataset.synthetic else load_dataset(cfg).n_vars
    model_cfg = cfg.model_config(n_vars)
    params = init_params(model_cfg, make_rng(cfg.train_config().seed))
    report = time_inference(params, model_cfg, cfg.profile.warmup, cfg.profile.trials)
    payload = report.to_dict()
    _write_json(out / "profile.json", payload)
    return payload


def cmd_correlate(cfg: RunConfig, out: Path) -> dict:
    ds = load_dataset(cfg)
    c = cfg.correlate
    if c.start < 0 or c.start + c.length > ds.rows:
        raise ConfigError(f"slice [{c.start}, {c.start + c.length}) outside {ds.rows} rows")
    variables = c.variables or list(range(ds.n_vars))
    bad = [v for v in variables if not 0 <= v < ds.n_vars]
    if bad:
        raise ConfigError(f"variable indices {bad} out of range for {ds.n_vars} variables")
    window = ds.values[c.start : c.start + c.length][:, variables]
    if c.mode == "segments":
        result = correlation.segment_correlation(window, c.segments)
        correlation.write_segment_csv(result, out / "segments.csv")
        payload = {"mode": "segments", "segments": c.segments, "segment_length": result.segment_length,
                   "variables": variables, "matrices": [m.tolist() for m in result.matrices]}
    else:
        rows, summary = [], []
        for a, b in itertools.combinations(range(len(variables)), 2):
            r, flat = correlation.rolling_correlation(window[:, a], window[:, b], c.window)
            rows.append((variables[a], variables[b], r, flat))
            summary.append({"i": variables[a], "j": variables[b], "values": len(r)})
        correlation.write_rolling_csv(rows, out / "rolling.csv")
        payload = {"mode": "rolling", "window": c.window, "pairs": summary}
    _write_json(out / "correlation.json", payload)
    return payload


def cmd_noise(cfg: RunConfig, out: Path) -> dict:
    ds = load_dataset(cfg)
    if not 0 <= cfg.noise.variable < ds.n_vars:
        raise ConfigError(f"noise.variable {cfg.noise.variable} out of range for {ds.n_vars} variables")
    model_cfg = cfg.model_config(ds.n_vars)
    data = prepare(ds, cfg.split_spec(), model_cfg.lookback, model_cfg.horizon)
    outcome = fit_and_test(model_cfg, data, cfg.train_config())
    rows = noise_table(outcome, model_cfg, data.test, cfg.noise.variable, cfg.noise.sigmas, seed=cfg.train_config().seed)
    _write_rows(out / "noise.csv", rows)
    metrics = {"dataset": ds.name, "clean_test": outcome.test.to_dict(), "noise": rows}
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    ds = synth_dataset(cfg)
    save_csv(ds, out / "synth.csv")
    return {"rows": ds.rows, "n_vars": ds.n_vars, "path": str(out / "synth.csv")}


def cmd_sweep(cfg: RunConfig, out: Path) -> dict:
    ds = load_dataset(cfg)
    rows = lookback_sweep(ds, cfg.split_spec(), cfg.sweep.lookbacks, cfg.model_config(ds.n_vars), cfg.train_config())
    _write_rows(out / "sweep.csv", rows)
    metrics = {"dataset": ds.name, "sweep": rows}
    _write_json(out / "metrics.json", metrics)
    return metrics


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timecnn", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--checkpoint", type=Path, default=None, help="checkpoint for 'eval'")
    parser.add_argument("--seed", type=int, default=None, help="shorthand for --set train.seed=N")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"train.seed={args.seed}")
        cfg = load_config(args.config, overrides)
        out = args.out or (Path(cfg.output.dir) if cfg.output.dir else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / args.command)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.txt").write_text(dump_config(cfg), encoding="utf-8")
        if args.command == "eval":
            result = cmd_eval(cfg, out, args.checkpoint)
        else:
            result = globals()[f"cmd_{args.command}"](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(result, sort_keys=True, default=str)[:2000])
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
