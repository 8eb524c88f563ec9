"""Model families: the full multi-modal forecaster, its ablation
variants, and the simpler baselines trained with the same loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Param, Tensor, add, clamp, constant, dropout, matmul, relu, slice_cols, uniform_init
from .data import HorizonView, SECONDS_PER_DAY
from .encoder import EncoderConfig, attention_pool, encode, embed_events, init_encoder_params
from .fusion import LOG_VAR_MAX, LOG_VAR_MIN, FusionConfig, fuse, init_fusion_params, predict
from .text import TextFeatures, init_pooling_params, pool_snippets

BASELINE_KINDS = ("aggregate_features", "text_only", "static_mm", "behavior_only", "full")


@dataclass(frozen=True)
class TextConfig:
    d_llm: int = 768
    k_topics: int = 6
    attn_dim: int = 64


@dataclass(frozen=True)
class ModelVariant:
    """Which model family to train, plus the ablation toggles that only
    apply to the encoder-based kinds."""

    kind: str = "full"
    mean_pool: bool = False  # replace attention pooling with uniform mean pooling
    modality_dropout: bool = True
    mse_loss: bool = False  # freeze log_var at 0; NLL then equals MSE/2

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {BASELINE_KINDS}")

    def tag(self) -> str:
        bits = [self.kind]
        if self.mean_pool:
            bits.append("meanpool")
        if not self.modality_dropout:
            bits.append("nomoddrop")
        if self.mse_loss:
            bits.append("mse")
        return "-".join(bits)


@dataclass
class ExampleFeatures:
    """Frozen per-view model inputs; everything here is a pure function
    of pre-horizon data plus train-split-fitted preprocessing."""

    view: HorizonView
    ev_idx: np.ndarray
    bin_idx: np.ndarray
    snippets: np.ndarray | None  # (n, d_llm) or None when text is missing
    theta: np.ndarray  # (K,), zero when missing
    agg: np.ndarray  # aggregate count features
    label: float


def aggregate_features(view: HorizonView, vocab_index: dict[str, int]) -> np.ndarray:
    """Order-invariant summary: per-type counts, active days, total count."""
    counts = np.zeros(len(vocab_index))
    days = set()
    for e in view.events:
        counts[vocab_index[e.event_type]] += 1.0
        days.add(int(e.timestamp // SECONDS_PER_DAY))
    return np.concatenate([counts, [float(len(days)), float(len(view.events))]])


def _standardize(agg: np.ndarray, stats: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mean, sd = stats
    return (agg - mean) / sd


def aggregate_stats(train_examples: list[ExampleFeatures]) -> tuple[np.ndarray, np.ndarray]:
    mat = np.stack([ex.agg for ex in train_examples])
    mean = mat.mean(axis=0)
    sd = mat.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return mean, sd


def _mean_snippet(ex: ExampleFeatures, d_llm: int) -> tuple[np.ndarray, float]:
    if ex.snippets is None:
        return np.zeros(d_llm), 1.0
    return ex.snippets.mean(axis=0), 0.0


def _split_head(out: Tensor) -> tuple[Tensor, Tensor]:
    return slice_cols(out, 0, 1), clamp(slice_cols(out, 1, 2), LOG_VAR_MIN, LOG_VAR_MAX)


class FullModel:
    """Temporal event Transformer + text pooling + topic projection,
    fused into the heteroscedastic head. Also covers behavior_only and
    the ablation variants."""

    def __init__(
        self,
        vocab: list[str],
        encoder_cfg: EncoderConfig,
        fusion_cfg: FusionConfig,
        text_cfg: TextConfig,
        variant: ModelVariant,
        rng: np.random.Generator,
    ):
        if variant.kind not in ("full", "behavior_only"):
            raise ValueError(f"FullModel cannot realize kind {variant.kind!r}")
        self.vocab = list(vocab)
        self.encoder_cfg = encoder_cfg
        self.fusion_cfg = fusion_cfg
        self.text_cfg = text_cfg
        self.variant = variant
        self.params: dict[str, Param] = {}
        self.params.update(init_encoder_params(rng, len(vocab), encoder_cfg))
        self.params.update(init_pooling_params(rng, text_cfg.d_llm, text_cfg.attn_dim))
        self.params.update(init_fusion_params(rng, encoder_cfg.d, text_cfg.d_llm, text_cfg.k_topics, fusion_cfg))

    def param_list(self) -> list[Param]:
        return list(self.params.values())

    def _behavior(self, ex: ExampleFeatures, train_mode: bool, rng) -> Tensor:
        if len(ex.ev_idx) == 0:
            return self.params["enc.empty_seq"]
        x = embed_events(ex.ev_idx, ex.bin_idx, self.params)
        h = encode(x, self.encoder_cfg, self.params, train_mode=train_mode, rng=rng)
        if self.variant.mean_pool:
            m = h.data.shape[0]
            return matmul(constant(np.full((1, m), 1.0 / m)), h)
        pooled, _ = attention_pool(h, self.params["enc.pool_q"], self.encoder_cfg.d)
        return pooled

    def _text(self, ex: ExampleFeatures) -> TextFeatures:
        if self.variant.kind == "behavior_only" or ex.snippets is None:
            return TextFeatures(
                pooled=np.zeros((1, self.text_cfg.d_llm)),
                theta=np.zeros(self.text_cfg.k_topics),
                missing=True,
            )
        pooled, _ = pool_snippets(ex.snippets, self.params["text.score_u"], self.params["text.score_w"])
        return TextFeatures(pooled=pooled, theta=ex.theta, missing=False)

    def forward(self, ex: ExampleFeatures, train_mode: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        b = self._behavior(ex, train_mode, rng)
        text = self._text(ex)
        mod_train = train_mode and self.variant.modality_dropout
        z = fuse(b, text, self.fusion_cfg, self.params, train_mode=mod_train, rng=rng)
        mu, log_var = predict(z, self.fusion_cfg, self.params, train_mode=train_mode, rng=rng)
        if self.variant.mse_loss:
            log_var = constant([[0.0]])
        return mu, log_var


class AggregateLinearModel:
    """Standardized aggregate count features into a linear (mu, log_var) head."""

    def __init__(self, n_features: int, stats, rng: np.random.Generator):
        self.stats = stats
        self.params = {
            "agg.w": Param("agg.w", uniform_init(rng, (n_features, 2), n_features)),
            "agg.b": Param("agg.b", np.zeros((1, 2))),
        }
        self.params["agg.w"].data[:, 1] = 0.0

    def param_list(self):
        return list(self.params.values())

    def forward(self, ex: ExampleFeatures, train_mode: bool = False, rng=None):
        x = constant(_standardize(ex.agg, self.stats)[None, :])
        return _split_head(add(matmul(x, self.params["agg.w"]), self.params["agg.b"]))


class TextOnlyModel:
    """Mean-pooled cached embeddings (zero when missing) + missing bit,
    into a linear head."""

    def __init__(self, d_llm: int, rng: np.random.Generator):
        self.d_llm = d_llm
        n = d_llm + 1
        self.params = {
            "text_only.w": Param("text_only.w", uniform_init(rng, (n, 2), n)),
            "text_only.b": Param("text_only.b", np.zeros((1, 2))),
        }
        self.params["text_only.w"].data[:, 1] = 0.0

    def param_list(self):
        return list(self.params.values())

    def forward(self, ex: ExampleFeatures, train_mode: bool = False, rng=None):
        vec, missing = _mean_snippet(ex, self.d_llm)
        x = constant(np.concatenate([vec, [missing]])[None, :])
        return _split_head(add(matmul(x, self.params["text_only.w"]), self.params["text_only.b"]))


class StaticMMModel:
    """Concatenated aggregates and mean text embedding through a 2-layer MLP."""

    def __init__(self, n_agg: int, d_llm: int, stats, hidden: int, p_drop: float, rng: np.random.Generator):
        self.stats = stats
        self.d_llm = d_llm
        self.p_drop = p_drop
        n_in = n_agg + d_llm + 1
        self.params = {
            "mm.w1": Param("mm.w1", uniform_init(rng, (n_in, hidden), n_in)),
            "mm.b1": Param("mm.b1", np.zeros((1, hidden))),
            "mm.w2": Param("mm.w2", uniform_init(rng, (hidden, 2), hidden)),
            "mm.b2": Param("mm.b2", np.zeros((1, 2))),
        }
        self.params["mm.w2"].data[:, 1] = 0.0

    def param_list(self):
        return list(self.params.values())

    def forward(self, ex: ExampleFeatures, train_mode: bool = False, rng=None):
        vec, missing = _mean_snippet(ex, self.d_llm)
        x = constant(np.concatenate([_standardize(ex.agg, self.stats), vec, [missing]])[None, :])
        h = relu(add(matmul(x, self.params["mm.w1"]), self.params["mm.b1"]))
        if train_mode and self.p_drop > 0.0:
            h = dropout(h, self.p_drop, rng)
        return _split_head(add(matmul(h, self.params["mm.w2"]), self.params["mm.b2"]))


def build_model(
    variant: ModelVariant,
    vocab: list[str],
    encoder_cfg: EncoderConfig,
    fusion_cfg: FusionConfig,
    text_cfg: TextConfig,
    train_examples: list[ExampleFeatures],
    rng: np.random.Generator,
):
    if variant.kind in ("full", "behavior_only"):
        return FullModel(vocab, encoder_cfg, fusion_cfg, text_cfg, variant, rng)
    stats = aggregate_stats(train_examples)
    n_agg = len(train_examples[0].agg)
    if variant.kind == "aggregate_features":
        return AggregateLinearModel(n_agg, stats, rng)
    if variant.kind == "text_only":
        return TextOnlyModel(text_cfg.d_llm, rng)
    if variant.kind == "static_mm":
        return StaticMMModel(n_agg, text_cfg.d_llm, stats, fusion_cfg.d_f, fusion_cfg.p_drop, rng)
    raise ValueError(f"unknown model kind {variant.kind!r}")
