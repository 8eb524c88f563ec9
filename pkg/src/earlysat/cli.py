"""Command-line entry point: synth | train | eval | report | gradcheck.

Every command is driven by one config file and is idempotent: identical
inputs and seeds produce identical output bytes. The TET_THREADS
environment variable caps worker parallelism for the train command.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .checkpoint import CheckpointError
from .checks import run_gradcheck_suite
from .config import ConfigError, RunConfig, load_config
from .data import EventFileError, event_vocab, load_events, split_chronological, split_enrollments
from .evaluation import (
    MetricRow,
    aggregate_rows,
    evaluate_model,
    per_seed_tsv,
    relative_improvement,
    report_kv,
    report_tsv,
)
from .models import build_model
from .pipeline import load_trained_params, prepare_horizon, save_trained, train_variant
from .synth import generate
from .text import CacheError, load_embedding_cache


def _fail(message: str, code: int = 2) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _require(path: str, what: str) -> None:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _load_corpus(cfg: RunConfig):
    _require(cfg.paths.events, "event file")
    _require(cfg.paths.embeddings, "embedding cache")
    enrollments = load_events(cfg.paths.events)
    vocab = event_vocab(cfg.paths.events)
    cache = load_embedding_cache(cfg.paths.embeddings)
    runs = sorted({(e.course_run_id, e.run_start_date) for e in enrollments})
    assignment = split_chronological(runs)
    splits = split_enrollments(enrollments, assignment)
    return splits, vocab, cache


def _job_dir(out: str, horizon: int, tag: str, seed: int) -> str:
    return os.path.join(out, f"h{horizon}", tag, f"seed{seed}")


def _train_job(cfg: RunConfig, horizon: int, kind: str, seed: int) -> str:
    splits, vocab, cache = _load_corpus(cfg)
    data = prepare_horizon(splits, horizon, cache, cfg.encoder, cfg.text, vocab, cfg.run.topic_seed)
    variant = cfg.variant_for(kind)
    trained = train_variant(data, variant, cfg.encoder, cfg.fusion, cfg.text, cfg.train, seed)
    job_dir = _job_dir(cfg.paths.out, horizon, variant.tag(), seed)
    os.makedirs(job_dir, exist_ok=True)
    save_trained(trained, os.path.join(job_dir, "checkpoint.tetp"))
    with open(os.path.join(job_dir, "train_report.tsv"), "w", encoding="utf-8") as f:
        f.write(trained.report.to_tsv())
    return job_dir


def cmd_synth(cfg: RunConfig) -> int:
    corpus = generate(
        cfg.synth,
        out_dir=os.path.dirname(os.path.abspath(cfg.paths.events)) or ".",
        events_path=cfg.paths.events,
        cache_path=cfg.paths.embeddings,
    )
    print(f"wrote {len(corpus.enrollments)} enrollments to {corpus.events_path}")
    print(f"wrote {len(corpus.cache_items)} snippet embeddings to {corpus.cache_path}")
    print(f"wrote latents to {corpus.latents_path}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    jobs = [
        (horizon, kind, seed)
        for horizon in cfg.run.horizons
        for kind in cfg.run.models
        for seed in cfg.run.seeds
    ]
    threads = int(os.environ.get("TET_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_train_job, cfg, h, k, s) for h, k, s in jobs]
            for fut in futures:
                print(f"trained {fut.result()}")
    else:
        for h, k, s in jobs:
            print(f"trained {_train_job(cfg, h, k, s)}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    splits, vocab, cache = _load_corpus(cfg)
    for horizon in cfg.run.horizons:
        data = prepare_horizon(splits, horizon, cache, cfg.encoder, cfg.text, vocab, cfg.run.topic_seed)
        rows: list[MetricRow] = []
        for kind in cfg.run.models:
            variant = cfg.variant_for(kind)
            for seed in cfg.run.seeds:
                job_dir = _job_dir(cfg.paths.out, horizon, variant.tag(), seed)
                ckpt = os.path.join(job_dir, "checkpoint.tetp")
                _require(ckpt, f"checkpoint for {variant.tag()} h{horizon} seed {seed}")
                model = build_model(
                    variant, vocab, cfg.encoder, cfg.fusion, cfg.text,
                    data.examples["train"], np.random.default_rng(seed),
                )
                load_trained_params(ckpt, model, expected_edges=data.edges)
                rows.append(
                    evaluate_model(
                        model, data.examples["test"], variant.tag(), horizon, seed,
                        risk_method=cfg.run.risk_method,
                    )
                )
        out = cfg.paths.out
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, f"rows_h{horizon}.tsv"), "w", encoding="utf-8") as f:
            f.write(per_seed_tsv(rows))
        aggregates = aggregate_rows(rows)
        with open(os.path.join(out, f"metrics_h{horizon}.tsv"), "w", encoding="utf-8") as f:
            f.write(report_tsv(aggregates))
        with open(os.path.join(out, f"metrics_h{horizon}.kv"), "w", encoding="utf-8") as f:
            f.write(report_kv(aggregates))
        print(f"wrote metrics for horizon {horizon} to {out}")
    return 0


def _parse_rows(path: str) -> list[MetricRow]:
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        for line in f:
            cells = dict(zip(header, line.rstrip("\n").split("\t")))
            rows.append(
                MetricRow(
                    model=cells["model"],
                    horizon=int(cells["horizon"]),
                    seed=int(cells["seed"]),
                    rmse=float(cells["rmse"]),
                    mae=float(cells["mae"]),
                    auc=float(cells["auc"]),
                    recall_at_budget=float(cells["recall_at_budget"]),
                    coverage=float(cells["coverage"]),
                    width=float(cells["width"]),
                )
            )
    return rows


def cmd_report(cfg: RunConfig) -> int:
    rows: list[MetricRow] = []
    for horizon in cfg.run.horizons:
        path = os.path.join(cfg.paths.out, f"rows_h{horizon}.tsv")
        _require(path, f"per-seed metrics for horizon {horizon} (run eval first)")
        rows.extend(_parse_rows(path))
    aggregates = aggregate_rows(rows)
    by_model: dict[str, dict[int, object]] = {}
    for agg in aggregates:
        by_model.setdefault(agg.model, {})[agg.horizon] = agg

    header = ["model"]
    for h in cfg.run.horizons:
        header += [f"rmse_{h}d", f"mae_{h}d"]
    lines = ["\t".join(header)]
    for model in sorted(by_model):
        cells = [model]
        for h in cfg.run.horizons:
            agg = by_model[model].get(h)
            if agg is None:
                cells += ["-", "-"]
            else:
                cells += [
                    f"{agg.means['rmse']:.4f}±{agg.sds['rmse']:.4f}",
                    f"{agg.means['mae']:.4f}±{agg.sds['mae']:.4f}",
                ]
        lines.append("\t".join(cells))

    # fractional RMSE reduction of the full model vs the best other model
    for h in cfg.run.horizons:
        here = {m: aggs[h].means["rmse"] for m, aggs in by_model.items() if h in aggs}
        full_kinds = [m for m in here if m.startswith("full")]
        others = {m: v for m, v in here.items() if not m.startswith("full")}
        if full_kinds and others:
            best_other = min(others, key=others.get)
            imp = relative_improvement(others[best_other], here[full_kinds[0]])
            lines.append(f"# h{h}: rmse reduction of {full_kinds[0]} vs {best_other} = {imp:.4f}")

    path = os.path.join(cfg.paths.out, "report.tsv")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def cmd_gradcheck() -> int:
    ok = run_gradcheck_suite(range(5))
    return 0 if ok else 1


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    import dataclasses

    run = cfg.run
    if args.horizon is not None:
        run = dataclasses.replace(run, horizons=(args.horizon,))
    if args.seed is not None:
        run = dataclasses.replace(run, seeds=(args.seed,))
    cfg.run = run
    if args.out is not None:
        cfg.paths = dataclasses.replace(cfg.paths, out=args.out)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="earlysat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "train", "eval", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="restrict to one seed")
        p.add_argument("--horizon", type=int, default=None, help="restrict to one horizon (days)")
        p.add_argument("--out", default=None, help="override the output directory")
    sub.add_parser("gradcheck")

    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()
        cfg = _apply_overrides(load_config(args.config), args)
        return {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}[
            args.command
        ](cfg)
    except (ConfigError, EventFileError, CacheError, CheckpointError, FileNotFoundError) as e:
        return _fail(str(e))
    except (ValueError, RuntimeError) as e:
        return _fail(str(e), code=3)


if __name__ == "__main__":
    sys.exit(main())
