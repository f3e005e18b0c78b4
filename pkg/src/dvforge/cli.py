"""Command-line entry point: ``dvforge {ingest,inject-noise,run,report,time-bench}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as D
from .config import ConfigError, ExperimentConfig, child_seed, load_config
from .evaluation import (
    RunRecord,
    aggregate_runs,
    best_and_worst,
    fill_grid,
    render_plots,
    roc_auc,
    timing_harness,
    write_roc_csv,
    write_scores_csv,
    write_summary,
    write_timing_csv,
    write_values_csv,
)
from .pipeline import METHODS, DegenerateSelection, run_method

log = logging.getLogger("dvforge")


def _out_dir(arg: str | None, default: str) -> Path:
    return Path(arg or os.environ.get("DVFORGE_OUT") or default)


def _file_sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- ingest / inject-noise -------------------------------------------------------------

def prepare_dataset(source: Path, fmt: str | None, splits, seed: int, binarize: int | None,
                    standardize: bool) -> D.Dataset:
    ds = D.load(source, fmt)
    if binarize is not None:
        ds = D.binarize(ds, int(binarize))
    if splits is not None:
        ds = D.split(ds, tuple(splits), seed)
    if standardize:
        ds = D.standardize(ds)
    return ds


def cmd_ingest(args) -> int:
    source = Path(args.source)
    if not source.exists():
        print(f"error: no such file: {source}", file=sys.stderr)
        return 2
    splits = [int(s) for s in args.splits.split(",")] if args.splits else None
    ds = prepare_dataset(source, args.format, splits, args.seed, args.binarize, not args.no_standardize)
    out = _out_dir(args.out, "dataset")
    manifest = D.save_dataset(ds, out, {
        "source": {"path": str(source), "format": args.format or "auto", "sha256": _file_sha(source)},
        "seed": args.seed,
    })
    print(json.dumps({"out": str(out), "splits": manifest["splits"]}))
    return 0


def cmd_inject_noise(args) -> int:
    ds = D.load_dataset(args.dataset)
    spec = D.NoiseSpec(args.rate, args.kind, args.seed)
    noisy = D.inject_noise(ds, spec)
    out = _out_dir(args.out, "dataset_noisy")
    D.save_dataset(noisy, out, {"noise": {"rate": spec.rate, "kind": spec.kind, "seed": spec.seed}})
    print(json.dumps({"out": str(out), "corrupted": int(noisy.noise_mask.sum())}))
    return 0


# -- run ----------------------------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig) -> D.Dataset:
    spec = cfg.dataset
    if spec.synthetic is not None:
        syn = dict(spec.synthetic)
        sizes = tuple(int(s) for s in syn.get("sizes", spec.splits or (1000, 300, 2000)))
        ds = D.synthetic_task(sizes, int(syn.get("dim", 20)), float(syn.get("separation", 1.5)),
                              int(syn.get("seed", spec.split_seed)))
        return D.standardize(ds) if spec.standardize else ds
    if spec.path.is_dir() or spec.path.name == "manifest.json":
        return D.load_dataset(spec.path)
    return prepare_dataset(spec.path, spec.format, spec.splits, spec.split_seed, spec.binarize,
                           spec.standardize)


def _cell_name(method: str, noise: D.NoiseSpec, run: int) -> str:
    return f"{method}_noise{noise.rate:g}_{noise.kind}_run{run}"


def _run_cell(ds: D.Dataset, cfg: ExperimentConfig, noise: D.NoiseSpec, method: str, run: int,
              deterministic: bool) -> RunRecord:
    # noise depends on (noise, run) only so that every method sees the same corruption
    noise_seed = child_seed(cfg.master_seed, noise.rate, noise.kind, noise.seed, run)
    noisy = D.inject_noise(ds, D.NoiseSpec(noise.rate, noise.kind, noise_seed))
    seed = child_seed(cfg.master_seed, noise.rate, noise.kind, method, run)
    ckpt = cfg.output_dir / "checkpoints" / _cell_name(method, noise, run)
    attempts = cfg.retries + 1 if method == "dvrl_lite" else 1
    for attempt in range(attempts):
        try:
            rec = run_method(method, noisy, cfg.methods[method], child_seed(seed, attempt) if attempt else seed,
                             noise.rate, ckpt if method == "rlboost" else None)
            break
        except DegenerateSelection:
            if attempt == attempts - 1:
                raise
            log.warning("%s: degenerate selection, retry %d", _cell_name(method, noise, run), attempt + 1)
    rec.run_seed = run
    rec.extra["child_seed"] = seed
    if deterministic:
        rec.wall_clock_s = 0.0
    return rec


def _run_cell_job(payload):
    ds, cfg, noise, method, run, deterministic = payload
    try:
        return _run_cell(ds, cfg, noise, method, run, deterministic), None
    except Exception as exc:  # isolate cell failures
        return None, f"{type(exc).__name__}: {exc}"


def execute(cfg: ExperimentConfig, jobs: int = 1, deterministic: bool = False) -> tuple[list[RunRecord], list[dict]]:
    ds = build_dataset(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True, default=str) + "\n")
    cells = list(cfg.cells())
    payloads = [(ds, cfg, n, m, r, deterministic) for n, m, r in cells]
    if jobs > 1 and not deterministic:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_job, payloads))
    else:
        results = [_run_cell_job(p) for p in payloads]
    records, failures = [], []
    for (noise, method, run), (rec, err) in zip(cells, results):
        if rec is None:
            log.error("cell %s failed: %s", _cell_name(method, noise, run), err)
            failures.append({"method": method, "noise_rate": noise.rate, "run": run, "error": err})
        else:
            log.info("cell %s: test accuracy %.4f", _cell_name(method, noise, run), rec.test_accuracy)
            records.append(rec)
    with open(out / "runs.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    (out / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n")
    write_reports(out, records, list(cfg.methods), [n.rate for n in cfg.noise])
    return records, failures


def write_reports(out: Path, records: list[RunRecord], methods=None, noise_rates=None) -> None:
    write_scores_csv(records, out / "scores.csv")
    write_values_csv(records, out / "values.csv")
    rows = aggregate_runs(records)
    if methods is not None:
        rows = fill_grid(rows, methods, noise_rates)
    write_summary(rows, out)
    curves: dict[str, list] = {}
    roc_rows = []
    for noise in sorted({r.noise_rate for r in records}):
        best, worst = [], []
        for method in sorted({r.method for r in records}):
            cell = [r for r in records if r.method == method and r.noise_rate == noise and r.auc is not None]
            if not cell:
                continue
            hi, lo = best_and_worst(cell)
            best.append((method, roc_auc(hi.values, hi.noise_mask)))
            worst.append((method, roc_auc(lo.values, lo.noise_mask)))
            roc_rows.extend((f"{method}@{noise:g}/best", c) for _, c in best[-1:])
            roc_rows.extend((f"{method}@{noise:g}/worst", c) for _, c in worst[-1:])
        if best:
            curves[f"{noise:g}_best"] = best
            curves[f"{noise:g}_worst"] = worst
    write_roc_csv(roc_rows, out / "roc.csv")
    tables = {f"{nr:g}": [r for r in rows if r["noise_rate"] == nr] for nr in sorted({r["noise_rate"] for r in rows})}
    render_plots(out / "plots", curves, tables)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.out:
        cfg.output_dir = Path(args.out)
    jobs = 1 if args.deterministic else args.jobs
    _, failures = execute(cfg, jobs, args.deterministic)
    print(json.dumps({"out": str(cfg.output_dir), "failed_cells": len(failures)}))
    return 1 if failures else 0


def cmd_report(args) -> int:
    out = Path(args.output_dir)
    runs = out / "runs.jsonl"
    if not out.is_dir() or not runs.exists():
        print(f"error: no run outputs in {out}", file=sys.stderr)
        return 2
    records = [RunRecord.from_json(json.loads(line)) for line in runs.read_text().splitlines() if line]
    methods = noise_rates = None
    cfg_path = out / "config.json"
    if cfg_path.exists():
        raw = json.loads(cfg_path.read_text())
        methods = list(raw.get("methods") or {"baseline": {}})
        noise_rates = [float(n["rate"]) for n in raw.get("noise") or [{"rate": 0.0}]]
    write_reports(out, records, methods, noise_rates)
    print(json.dumps({"out": str(out), "records": len(records)}))
    return 0


# -- time-bench --------------------------------------------------------------------------------

def bench_runner(method: str, seed: int, params: dict):
    from . import agent as ag
    from . import baselines as bl
    from .env import ValuationEnv
    from .estimator import SubsetScorer
    from .nn import EncoderConfig, PolicyValueNet

    def run(size: int) -> int:
        ds = D.synthetic_task((size, max(50, size // 4), 10), seed=seed)
        if method == "loo":
            scorer = SubsetScorer(*ds.train, *ds.validation)
            bl.loo_values(scorer)
            return scorer.fit_count
        if method == "tmc_shap":
            scorer = SubsetScorer(*ds.train, *ds.validation)
            bl.tmc_shapley(scorer, bl.ShapleyConfig(max_permutations=int(params.get("permutations", 3)), seed=seed))
            return scorer.fit_count
        if method == "dvrl_lite":
            scorer = SubsetScorer(*ds.train, *ds.validation)
            bl.dvrl_lite(scorer, bl.DvrlConfig(steps=int(params.get("steps", 50)),
                                               batch_size=min(size, 100), seed=seed))
            return scorer.fit_count
        if method == "rlboost":
            n = int(params.get("state_size", 50))
            env = ValuationEnv(ds.train, ds.validation, n)
            net = PolicyValueNet(EncoderConfig(env.input_dim, 16, 2, 1, 32), seed=seed)
            ag.train(env, net, ag.AgentConfig(total_steps=int(params.get("total_steps", 32)), seed=seed))
            return env.fit_count
        raise ValueError(f"unknown method {method!r}")

    return run


def cmd_time_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    methods = args.methods.split(",")
    rows = []
    for m in methods:
        rows.extend(timing_harness(m, sizes, bench_runner(m, args.seed or 0, {})))
    out = _out_dir(args.out, "timing")
    out.mkdir(parents=True, exist_ok=True)
    write_timing_csv(rows, out / "timing.csv")
    for r in rows:
        print(f"{r.method:10s} size={r.size:6d} fits={r.inner_fit_count:7d} wall={r.wall_clock_s:.3f}s")
    return 0


# -- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--deterministic", action="store_true",
                        help="single worker, wall-clock columns written as 0")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dvforge", description="Data valuation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse, split and standardize a dataset")
    s.add_argument("source")
    s.add_argument("--format", choices=["libsvm", "csv", "embeddings"], default=None)
    s.add_argument("--splits", help="train,validation,test counts")
    s.add_argument("--binarize", type=int, default=None, metavar="POSITIVE_CLASS")
    s.add_argument("--no-standardize", action="store_true")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("inject-noise", parents=[common], help="corrupt training labels")
    s.add_argument("dataset", help="directory written by ingest")
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--kind", choices=["binary_flip", "circular_shift"], default="binary_flip")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_inject_noise)

    s = sub.add_parser("run", parents=[common], help="run an experiment grid from a TOML config")
    s.add_argument("config")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", parents=[common], help="rebuild tables and plots from stored runs")
    s.add_argument("output_dir")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("time-bench", parents=[common], help="wall-clock and fit counts vs train size")
    s.add_argument("--methods", default="loo,tmc_shap,rlboost")
    s.add_argument("--sizes", default="100,200,400")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_time_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is None and args.command in ("ingest", "inject-noise"):
        args.seed = 0
    try:
        return args.func(args)
    except (D.DataError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
