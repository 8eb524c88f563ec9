"""End-to-end orchestration: per-horizon feature preparation with
train-split-only statistics, model training, and checkpoint round trips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Enrollment, HorizonView, slice_horizon
from .encoder import BucketEdges, EncoderConfig, calibrate_buckets, event_indices
from .models import (
    ExampleFeatures,
    FullModel,
    ModelVariant,
    TextConfig,
    aggregate_features,
    build_model,
)
from .fusion import FusionConfig
from .text import EmbeddingCache, TopicModel, build_text_features, fit_topics
from .training import TrainConfig, TrainReport, train_model


@dataclass
class HorizonData:
    """Everything a model needs for one horizon, preprocessing already
    fitted on the training split only."""

    horizon: int
    vocab: list[str]
    edges: BucketEdges
    topics: TopicModel
    examples: dict[str, list[ExampleFeatures]]


def _fallback_topics(k: int, d_llm: int) -> TopicModel:
    # no usable training text: distinct basis centroids give a uniform,
    # well-defined simplex for any query vector
    centroids = np.zeros((k, d_llm))
    for j in range(k):
        centroids[j, j % d_llm] = 1.0
    return TopicModel(centroids=centroids, temperature=1.0)


def fit_horizon_topics(
    train_views: list[HorizonView], cache: EmbeddingCache, k: int, seed: int
) -> TopicModel:
    vectors = []
    for view in train_views:
        for sid in view.snippet_ids:
            vectors.append(cache.vectors[sid])
    if len(vectors) >= k and np.unique(np.stack(vectors), axis=0).shape[0] >= k:
        return fit_topics(vectors, k, seed)
    return _fallback_topics(k, cache.d_llm)


def prepare_horizon(
    splits: dict[str, list[Enrollment]],
    horizon: int,
    cache: EmbeddingCache,
    encoder_cfg: EncoderConfig,
    text_cfg: TextConfig,
    vocab: list[str],
    topic_seed: int = 0,
) -> HorizonData:
    views = {name: [slice_horizon(e, horizon) for e in enrs] for name, enrs in splits.items()}
    edges = calibrate_buckets(views["train"], encoder_cfg.bins)
    topics = fit_horizon_topics(views["train"], cache, text_cfg.k_topics, topic_seed)
    vocab_index = {sym: i for i, sym in enumerate(vocab)}

    examples: dict[str, list[ExampleFeatures]] = {}
    for name, view_list in views.items():
        rows = []
        for view in view_list:
            ev_idx, bin_idx = event_indices(view, vocab_index, edges, encoder_cfg.max_seq_len)
            snippets, theta, _missing = build_text_features(view.snippet_ids, cache, topics)
            rows.append(
                ExampleFeatures(
                    view=view,
                    ev_idx=ev_idx,
                    bin_idx=bin_idx,
                    snippets=snippets,
                    theta=theta,
                    agg=aggregate_features(view, vocab_index),
                    label=view.label,
                )
            )
        examples[name] = rows
    return HorizonData(horizon=horizon, vocab=list(vocab), edges=edges, topics=topics, examples=examples)


@dataclass
class TrainedModel:
    model: object
    variant: ModelVariant
    report: TrainReport
    data: HorizonData


def train_variant(
    data: HorizonData,
    variant: ModelVariant,
    encoder_cfg: EncoderConfig,
    fusion_cfg: FusionConfig,
    text_cfg: TextConfig,
    train_cfg: TrainConfig,
    seed: int,
) -> TrainedModel:
    """Deterministic training of one variant at one horizon: a single
    seeded generator drives init, shuffling, and every stochastic draw."""
    rng = np.random.default_rng(seed)
    model = build_model(variant, data.vocab, encoder_cfg, fusion_cfg, text_cfg, data.examples["train"], rng)
    report = train_model(
        model,
        data.examples["train"],
        data.examples["validation"],
        train_cfg,
        rng,
        seed=seed,
        checkpoint_id=f"{variant.tag()}_h{data.horizon}_seed{seed}",
    )
    return TrainedModel(model=model, variant=variant, report=report, data=data)


def checkpoint_tensors(trained: TrainedModel) -> dict[str, np.ndarray]:
    tensors = {name: p.data for name, p in trained.model.params.items()}
    tensors["bucket_edges"] = trained.data.edges.edges
    tensors["bucket_max_gap"] = np.array([trained.data.edges.max_gap])
    tensors["topic_centroids"] = trained.data.topics.centroids
    tensors["topic_temperature"] = np.array([trained.data.topics.temperature])
    return tensors


def save_trained(trained: TrainedModel, path) -> None:
    save_checkpoint(path, checkpoint_tensors(trained))


def load_trained_params(path, model, expected_edges: BucketEdges | None = None):
    """Load a checkpoint into an already-shaped model; returns the stored
    bucket edges and topic model."""
    tensors = load_checkpoint(path)
    edges = BucketEdges(edges=tensors.pop("bucket_edges"), max_gap=float(tensors.pop("bucket_max_gap")[0]))
    topics = TopicModel(
        centroids=tensors.pop("topic_centroids"),
        temperature=float(tensors.pop("topic_temperature")[0]),
    )
    missing = set(model.params) - set(tensors)
    extra = set(tensors) - set(model.params)
    if missing or extra:
        raise ValueError(f"checkpoint/model mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, p in model.params.items():
        if p.data.shape != tensors[name].shape:
            raise ValueError(f"shape mismatch for {name}: {p.data.shape} vs {tensors[name].shape}")
        p.data = tensors[name]
    if expected_edges is not None and not np.array_equal(expected_edges.edges, edges.edges):
        raise ValueError("checkpoint bucket edges disagree with recomputed training edges")
    return edges, topics
