"""Regression, ranking, and calibration metrics, the baseline runner,
and the tabular/key-value report formats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .fusion import GaussianPrediction, interval
from .models import ExampleFeatures, ModelVariant
from .pipeline import HorizonData, TrainedModel, train_variant
from .training import predict_example

_ERF_SQRT2 = math.sqrt(2.0)

METRIC_NAMES = ("rmse", "mae", "auc", "recall_at_budget", "coverage", "width")


def rmse(preds, labels) -> float:
    p, y = _paired(preds, labels)
    return float(np.sqrt(np.mean((p - y) ** 2)))


def mae(preds, labels) -> float:
    p, y = _paired(preds, labels)
    return float(np.mean(np.abs(p - y)))


def _paired(preds, labels):
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.size == 0:
        raise ValueError(f"predictions and labels must have equal non-zero length, got {p.shape} and {y.shape}")
    return p, y


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_low_satisfaction(risk_scores, labels, threshold: float = 3.0) -> float:
    """Probability that a random low-satisfaction enrollment (label <=
    threshold) outranks a random other one by risk score; ties count 1/2."""
    r, y = _paired(risk_scores, labels)
    pos = y <= threshold
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"degenerate labels: {n_pos} positives, {n_neg} negatives")
    ranks = _midranks(r)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def recall_at_budget(risk_scores, labels, budget: float = 0.10, threshold: float = 3.0) -> float:
    """Fraction of all positives inside the top ceil(budget*N) risk
    ranks; ties broken by stable input order."""
    r, y = _paired(risk_scores, labels)
    if not 0.0 < budget <= 1.0:
        raise ValueError(f"budget must be in (0, 1], got {budget}")
    pos = y <= threshold
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("no positive (low-satisfaction) labels")
    k = math.ceil(budget * len(y))
    top = np.argsort(-r, kind="stable")[:k]
    return float(pos[top].sum() / n_pos)


def coverage_and_width(preds: list[GaussianPrediction], labels, level: float = 0.90) -> tuple[float, float]:
    if len(preds) == 0 or len(preds) != len(labels):
        raise ValueError("need equal non-zero numbers of predictions and labels")
    hits = 0
    width_sum = 0.0
    for pred, y in zip(preds, labels):
        lo, hi = interval(pred, level)
        hits += lo <= y <= hi
        width_sum += hi - lo
    return hits / len(preds), width_sum / len(preds)


def relative_improvement(a: float, b: float) -> float:
    """(a - b) / a: the fractional error reduction of b relative to a."""
    if a <= 0:
        raise ValueError(f"reference value must be positive, got {a}")
    return (a - b) / a


def risk_scores(preds: list[GaussianPrediction], method: str = "neg_mu", threshold: float = 3.0) -> np.ndarray:
    """Default risk is the negated predicted mean; the Gaussian-tail
    alternative scores Pr(label <= threshold) under each prediction."""
    if method == "neg_mu":
        return np.array([-p.mu for p in preds])
    if method == "tail_probability":
        return np.array([0.5 * (1.0 + math.erf((threshold - p.mu) / (p.sigma * _ERF_SQRT2))) for p in preds])
    raise ValueError(f"unknown risk method {method!r}")


@dataclass(frozen=True)
class MetricRow:
    model: str
    horizon: int
    seed: int
    rmse: float
    mae: float
    auc: float
    recall_at_budget: float
    coverage: float
    width: float


def evaluate_model(
    model,
    examples: list[ExampleFeatures],
    model_name: str,
    horizon: int,
    seed: int,
    level: float = 0.90,
    budget: float = 0.10,
    threshold: float = 3.0,
    risk_method: str = "neg_mu",
) -> MetricRow:
    preds = [predict_example(model, ex) for ex in examples]
    labels = np.array([ex.label for ex in examples])
    reported = np.array([p.mu_reported for p in preds])
    risks = risk_scores(preds, risk_method, threshold)
    cov, width = coverage_and_width(preds, labels, level)
    return MetricRow(
        model=model_name,
        horizon=horizon,
        seed=seed,
        rmse=rmse(reported, labels),
        mae=mae(reported, labels),
        auc=auc_low_satisfaction(risks, labels, threshold),
        recall_at_budget=recall_at_budget(risks, labels, budget, threshold),
        coverage=cov,
        width=width,
    )


def run_baseline(
    variant: ModelVariant,
    data: HorizonData,
    encoder_cfg,
    fusion_cfg,
    text_cfg,
    train_cfg,
    seed: int,
    risk_method: str = "neg_mu",
) -> tuple[MetricRow, TrainedModel]:
    """Train one model family on prepared horizon data and score it on
    the test split."""
    trained = train_variant(data, variant, encoder_cfg, fusion_cfg, text_cfg, train_cfg, seed)
    row = evaluate_model(
        trained.model,
        data.examples["test"],
        model_name=variant.tag(),
        horizon=data.horizon,
        seed=seed,
        risk_method=risk_method,
    )
    return row, trained


@dataclass(frozen=True)
class AggregateRow:
    model: str
    horizon: int
    n_seeds: int
    means: dict[str, float]
    sds: dict[str, float]


def aggregate_rows(rows: list[MetricRow]) -> list[AggregateRow]:
    """Group per-seed rows by (model, horizon); report mean and sample
    standard deviation (0 for a single seed) per metric."""
    grouped: dict[tuple[str, int], list[MetricRow]] = {}
    for row in rows:
        grouped.setdefault((row.model, row.horizon), []).append(row)
    out = []
    for (model, horizon), group in sorted(grouped.items()):
        means, sds = {}, {}
        for name in METRIC_NAMES:
            vals = np.array([getattr(r, name) for r in group])
            means[name] = float(vals.mean())
            sds[name] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(AggregateRow(model=model, horizon=horizon, n_seeds=len(group), means=means, sds=sds))
    return out


def report_tsv(aggregates: list[AggregateRow]) -> str:
    header = ["model", "horizon", "seeds"]
    for name in METRIC_NAMES:
        header += [f"{name}_mean", f"{name}_sd"]
    lines = ["\t".join(header)]
    for agg in aggregates:
        cells = [agg.model, str(agg.horizon), str(agg.n_seeds)]
        for name in METRIC_NAMES:
            cells += [repr(agg.means[name]), repr(agg.sds[name])]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def report_kv(aggregates: list[AggregateRow]) -> str:
    lines = []
    for agg in aggregates:
        prefix = f"{agg.model}.h{agg.horizon}"
        lines.append(f"{prefix}.seeds = {agg.n_seeds}")
        for name in METRIC_NAMES:
            lines.append(f"{prefix}.{name}_mean = {agg.means[name]!r}")
            lines.append(f"{prefix}.{name}_sd = {agg.sds[name]!r}")
    return "\n".join(lines) + "\n"


def per_seed_tsv(rows: list[MetricRow]) -> str:
    names = [f.name for f in fields(MetricRow)]
    lines = ["\t".join(names)]
    for row in sorted(rows, key=lambda r: (r.model, r.horizon, r.seed)):
        lines.append(
            "\t".join(
                repr(v) if isinstance(v, float) else str(v)
                for v in (getattr(row, n) for n in names)
            )
        )
    return "\n".join(lines) + "\n"
