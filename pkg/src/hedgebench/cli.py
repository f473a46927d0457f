"""Command-line pipeline: simulate, train, evaluate, compare, and the full A/B run.

Every artifact is written to ``<name>.partial`` and renamed on completion,
so an aborted stage leaves only ``.partial`` files behind.  The pipeline
writes a manifest listing each output with a sha256 content hash; the
``timings`` block of the manifest is wall-clock telemetry and is the one
part of a run that is not reproducible bit-for-bit.

``HEDGEBENCH_THREADS`` caps the simulation worker count (default: all
cores).  Path generation assigns each path its own counter-based random
stream, so results are identical for any worker count.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from importlib import metadata

import numpy as np

from . import config as config_mod
from . import market, objective, stats
from .errors import HedgebenchError
from .training import TrainConfig, convergence_epoch, load_model, save_model, write_curve
from .training import train as run_training

_MANIFEST_FORMAT = "hedgebench-manifest"
_MANIFEST_VERSION = 1
_LEVELS_SAMPLE_PATHS = 50


def _workers():
    env = os.environ.get("HEDGEBENCH_THREADS")
    cores = os.cpu_count() or 1
    if env is None:
        return cores
    try:
        cap = int(env)
    except ValueError:
        raise HedgebenchError(f"HEDGEBENCH_THREADS must be an integer, got {env!r}")
    return max(1, min(cores, cap))


def _write_file(path, writer):
    """Write through a .partial file, renaming only on success."""
    partial = str(path) + ".partial"
    writer(partial)
    os.replace(partial, str(path))


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _package_version():
    try:
        return metadata.version("hedgebench")
    except metadata.PackageNotFoundError:
        return "unknown"


def _load_config(path):
    return config_mod.load_config(path)


def cmd_simulate(args):
    cfg = _load_config(args.config)
    seed = cfg.sim.seed if args.seed is None else args.seed
    n_paths = cfg.sim.n_train_paths + cfg.sim.n_val_paths
    batch = market.simulate_paths(cfg.heston, n_paths, seed,
                                  price_floor=cfg.price_floor, workers=_workers())
    _write_file(args.out, lambda p: market.write_paths(batch, p))
    print(f"wrote {n_paths} paths ({batch.n_steps} steps, seed {seed}, "
          f"{batch.price_clamps} price clamps) to {args.out}")
    return 0


def _split_per_config(batch, cfg):
    expected = cfg.sim.n_train_paths + cfg.sim.n_val_paths
    if batch.n_paths != expected:
        raise HedgebenchError(
            f"paths file has {batch.n_paths} paths but config asks for "
            f"{cfg.sim.n_train_paths} train + {cfg.sim.n_val_paths} validation"
        )
    return market.split(batch, cfg.sim.n_train_paths / expected)


def _train_one(cfg, train_batch, val_batch, optimizer, record_timing):
    tc = cfg.training
    tc = TrainConfig(
        epochs=tc.epochs, batch_size=tc.batch_size, optimizer=optimizer,
        learning_rate=tc.learning_rate, beta1=tc.beta1, beta2=tc.beta2,
        epsilon=tc.epsilon, weight_decay=tc.weight_decay, kfac_lr=tc.kfac_lr,
        kfac_damping=tc.kfac_damping, kfac_ema_decay=tc.kfac_ema_decay,
        cost_weight=tc.cost_weight, seed=tc.seed,
        convergence_threshold=tc.convergence_threshold,
        record_timing=record_timing,
    )
    return run_training(train_batch, val_batch, cfg.arch, tc, cfg.option,
                        cfg.cost_model)


def cmd_train(args):
    cfg = _load_config(args.config)
    batch = market.read_paths(args.paths)
    train_batch, val_batch = _split_per_config(batch, cfg)
    optimizer = args.optimizer or cfg.training.optimizer
    result = _train_one(cfg, train_batch, val_batch, optimizer, record_timing=True)
    _write_file(args.model_out, lambda p: save_model(
        p, result.params, result.norm_stats, cfg.training.seed, cfg.option,
        cfg.cost_model, cfg.training.cost_weight))
    _write_file(args.curve_out, lambda p: write_curve(result.curve, p))
    final = result.curve[-1]
    print(f"trained {optimizer} for {len(result.curve)} epochs; "
          f"final validation loss {final.val_loss!r}")
    return 0


def cmd_evaluate(args):
    model = load_model(args.model)
    batch = market.read_paths(args.paths)
    provenance = {
        "model_file": os.path.basename(args.model),
        "model_sha256": _sha256(args.model),
        "paths_file": os.path.basename(args.paths),
        "paths_sha256": _sha256(args.paths),
        "train_seed": model.train_seed,
        "sim_seed": batch.seed,
    }
    report = stats.evaluate(model.params, model.norm_stats, batch, model.option,
                            model.cost_model, provenance)
    _write_file(args.report_out, lambda p: stats.write_report(report, p))
    print(f"evaluated {report.n_paths} paths: variance {report.pnl_variance!r}, "
          f"mean cost {report.mean_cost!r}, Sharpe {report.sharpe!r}")
    return 0


def cmd_compare(args):
    report_a = stats.read_report(args.report_a)
    report_b = stats.read_report(args.report_b)
    comparison = stats.compare(report_a, report_b)
    _write_file(args.out, lambda p: _write_text(p, comparison.render()))
    hist_path = args.out + ".histogram.csv"
    _write_file(hist_path, lambda p: stats.write_histogram_csv(
        report_a.pnl, report_b.pnl, p))
    print(comparison.render())
    return 0


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_levels_csv(batch, norm_stats, destination):
    """Standardized level series behind the correlation diagnostic plot."""
    n = min(_LEVELS_SAMPLE_PATHS, batch.n_paths)
    features = market.normalize(
        market.PathBatch(batch.prices[:n].copy(), batch.variances[:n].copy(),
                         batch.seed, batch.params, price_clamps=batch.price_clamps),
        norm_stats,
    )
    lines = ["path,step,price_norm,variance_norm"]
    for i in range(n):
        for t in range(features.shape[1]):
            lines.append(f"{i},{t},{float(features[i, t, 0])!r},{float(features[i, t, 1])!r}")
    lines.append("")
    _write_text(destination, "\n".join(lines))


def cmd_pipeline(args):
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    timings = {}
    stage = "load-config"
    try:
        cfg = _load_config(args.config)
        path = lambda name: os.path.join(out_dir, name)

        stage = "simulate"
        t0 = time.perf_counter()
        n_paths = cfg.sim.n_train_paths + cfg.sim.n_val_paths
        batch = market.simulate_paths(cfg.heston, n_paths, cfg.sim.seed,
                                      price_floor=cfg.price_floor,
                                      workers=_workers())
        train_batch, val_batch = _split_per_config(batch, cfg)
        _write_file(path("paths_train.csv"), lambda p: market.write_paths(train_batch, p))
        _write_file(path("paths_val.csv"), lambda p: market.write_paths(val_batch, p))
        timings["simulate_seconds"] = time.perf_counter() - t0

        results = {}
        for optimizer in ("adam", "kfac"):
            stage = f"train-{optimizer}"
            t0 = time.perf_counter()
            result = _train_one(cfg, train_batch, val_batch, optimizer,
                                record_timing=False)
            timings[f"train_{optimizer}_seconds"] = time.perf_counter() - t0
            results[optimizer] = result
            _write_file(path(f"model_{optimizer}.json"), lambda p, r=result: save_model(
                p, r.params, r.norm_stats, cfg.training.seed, cfg.option,
                cfg.cost_model, cfg.training.cost_weight))
            _write_file(path(f"curve_{optimizer}.csv"),
                        lambda p, r=result: write_curve(r.curve, p))

        reports = {}
        for optimizer in ("adam", "kfac"):
            stage = f"evaluate-{optimizer}"
            result = results[optimizer]
            provenance = {
                "optimizer": optimizer,
                "config_hash": cfg.content_hash,
                "sim_seed": cfg.sim.seed,
                "train_seed": cfg.training.seed,
            }
            report, records = stats.evaluate_with_records(
                result.params, result.norm_stats, val_batch, cfg.option,
                cfg.cost_model, provenance)
            reports[optimizer] = report
            _write_file(path(f"report_{optimizer}.json"),
                        lambda p, r=report: stats.write_report(r, p))
            _write_file(path(f"eval_{optimizer}.csv"),
                        lambda p, r=records: objective.write_pnl_csv(r, p))

        stage = "compare"
        threshold = cfg.training.convergence_threshold
        if threshold is None:
            threshold = 1.1 * results["adam"].curve[-1].val_loss
        comparison = stats.compare(reports["adam"], reports["kfac"])
        comparison.convergence_threshold = threshold
        comparison.convergence_epoch_a = convergence_epoch(
            results["adam"].curve, threshold)
        comparison.convergence_epoch_b = convergence_epoch(
            results["kfac"].curve, threshold)
        _write_file(path("comparison.txt"),
                    lambda p: _write_text(p, comparison.render()))
        _write_file(path("histogram.csv"), lambda p: stats.write_histogram_csv(
            reports["adam"].pnl, reports["kfac"].pnl, p))

        stage = "diagnostics"
        level_r = stats.level_series_correlation(val_batch)
        _write_file(path("levels.csv"), lambda p: _write_levels_csv(
            val_batch, results["adam"].norm_stats, p))

        stage = "manifest"
        artifact_names = sorted(
            name for name in os.listdir(out_dir)
            if not name.endswith(".partial") and name != "manifest.json"
        )
        manifest = {
            "format": _MANIFEST_FORMAT,
            "version": _MANIFEST_VERSION,
            "config_hash": cfg.content_hash,
            "config": cfg.values,
            "seeds": {"sim": cfg.sim.seed, "train": cfg.training.seed},
            "versions": {
                "hedgebench": _package_version(),
                "numpy": np.__version__,
                "python": ".".join(str(v) for v in sys.version_info[:2]),
            },
            "files": {name: _sha256(path(name)) for name in artifact_names},
            "diagnostics": {
                "level_series_correlation": level_r,
                "price_clamps": batch.price_clamps,
                "convergence_threshold": threshold,
                "convergence_epoch_adam": comparison.convergence_epoch_a,
                "convergence_epoch_kfac": comparison.convergence_epoch_b,
                "cost_reduction_pct": comparison.cost_reduction_pct,
                "variance_reduction_pct": comparison.variance_reduction_pct,
            },
            "timings": timings,  # wall clock; excluded from determinism checks
        }
        _write_file(path("manifest.json"), lambda p: _write_text(
            p, json.dumps(manifest, indent=1) + "\n"))
    except Exception as exc:
        print(f"pipeline failed at stage {stage!r}: {exc}", file=sys.stderr)
        return 1
    print(f"pipeline complete: {len(artifact_names) + 1} artifacts in {out_dir}")
    print(comparison.render())
    return 0


def verify_manifest(out_dir):
    """Recompute artifact hashes against the manifest; returns mismatches."""
    with open(os.path.join(out_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    bad = []
    for name, digest in manifest["files"].items():
        target = os.path.join(out_dir, name)
        if not os.path.exists(target) or _sha256(target) != digest:
            bad.append(name)
    return bad


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hedgebench",
        description="Simulated-market hedging benchmark: path generation, policy "
                    "training, evaluation, and optimizer A/B comparison.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a correlated path CSV")
    p.add_argument("--config", default=None, help="config file (defaults when omitted)")
    p.add_argument("--out", required=True, help="destination path CSV")
    p.add_argument("--seed", type=int, default=None, help="override sim.seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a hedging policy on a path CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--paths", required=True, help="path CSV from 'simulate'")
    p.add_argument("--optimizer", choices=("adam", "kfac"), default=None,
                   help="override optim.kind")
    p.add_argument("--model-out", required=True)
    p.add_argument("--curve-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run a saved model over a path CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--paths", required=True)
    p.add_argument("--report-out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="A/B comparison of two evaluation reports")
    p.add_argument("--report-a", required=True)
    p.add_argument("--report-b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pipeline", help="simulate, train both optimizers, evaluate, compare")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (HedgebenchError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
