"""Temporal event Transformer: event-type and time-gap embeddings, a
pre-norm self-attention stack, random event masking, and attention
pooling into a fixed-width behavior vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Param,
    Tensor,
    add,
    concat_cols,
    constant,
    gather_rows,
    layernorm_rows,
    matmul,
    mul,
    relu,
    slice_cols,
    softmax_rows,
    transpose,
    uniform_init,
)
from .data import HorizonView


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 256
    layers: int = 3
    heads: int = 4
    bins: int = 32
    p_mask: float = 0.1
    max_seq_len: int = 512

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"hidden size {self.d} not divisible by heads {self.heads}")
        if self.bins < 2 or self.layers < 1:
            raise ValueError("need bins >= 2 and layers >= 1")
        if not 0.0 <= self.p_mask < 1.0:
            raise ValueError(f"p_mask must be in [0, 1), got {self.p_mask}")

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    @property
    def d_ff(self) -> int:
        return 2 * self.d


@dataclass(frozen=True)
class BucketEdges:
    """Interior bin edges over log(1 + gap_seconds), strictly ascending."""

    edges: np.ndarray  # (bins - 1,)
    max_gap: float  # calibration gap ceiling (seconds)

    def bin_of(self, gap_seconds) -> np.ndarray:
        """Total, monotone bucketization; gaps past the last edge clamp
        to the final bin."""
        g = np.log1p(np.maximum(np.asarray(gap_seconds, dtype=np.float64), 0.0))
        return np.searchsorted(self.edges, g, side="right")


def calibrate_buckets(train_views: list[HorizonView], bins: int) -> BucketEdges:
    """Place bins-1 equally spaced edges over [0, log(1 + g99.5)] where
    g99.5 is the 99.5th-percentile inter-event gap of the training split.
    """
    gaps: list[float] = []
    for view in train_views:
        ts = [e.timestamp for e in view.events]
        gaps.extend(ts[i] - ts[i - 1] for i in range(1, len(ts)))
    if not gaps:
        raise ValueError(
            "no inter-event gaps in the training views; supply more data or reduce bins"
        )
    max_gap = float(np.percentile(gaps, 99.5))
    if max_gap <= 0.0:
        raise ValueError("all training gaps are zero; time-gap buckets are degenerate")
    top = math.log1p(max_gap)
    edges = top * np.arange(1, bins) / bins
    return BucketEdges(edges=edges, max_gap=max_gap)


def init_encoder_params(rng: np.random.Generator, vocab_size: int, config: EncoderConfig) -> dict[str, Param]:
    d, dff = config.d, config.d_ff
    p: dict[str, Param] = {}

    def mk(name, shape, fan_in):
        p[name] = Param(name, uniform_init(rng, shape, fan_in))

    mk("enc.event_embed", (vocab_size, d), d)
    mk("enc.gap_embed", (config.bins, d), d)
    mk("enc.pos_embed", (config.max_seq_len, d), d)
    mk("enc.mask_vec", (1, d), d)
    mk("enc.empty_seq", (1, d), d)
    for i in range(config.layers):
        pre = f"enc.layer{i}"
        p[f"{pre}.ln1.gamma"] = Param(f"{pre}.ln1.gamma", np.ones((1, d)))
        p[f"{pre}.ln1.beta"] = Param(f"{pre}.ln1.beta", np.zeros((1, d)))
        for w in ("wq", "wk", "wv", "wo"):
            mk(f"{pre}.attn.{w}", (d, d), d)
        p[f"{pre}.ln2.gamma"] = Param(f"{pre}.ln2.gamma", np.ones((1, d)))
        p[f"{pre}.ln2.beta"] = Param(f"{pre}.ln2.beta", np.zeros((1, d)))
        mk(f"{pre}.ff.w1", (d, dff), d)
        p[f"{pre}.ff.b1"] = Param(f"{pre}.ff.b1", np.zeros((1, dff)))
        mk(f"{pre}.ff.w2", (dff, d), dff)
        p[f"{pre}.ff.b2"] = Param(f"{pre}.ff.b2", np.zeros((1, d)))
    mk("enc.pool_q", (d, 1), d)
    return p


def event_indices(view: HorizonView, vocab_index: dict[str, int], edges: BucketEdges, max_seq_len: int):
    """Precompute (event ids, gap-bin ids) for a view, keeping the most
    recent ``max_seq_len`` events. The first kept event's gap is 0."""
    events = view.events[-max_seq_len:] if len(view.events) > max_seq_len else view.events
    try:
        ev_idx = np.array([vocab_index[e.event_type] for e in events], dtype=np.intp)
    except KeyError as e:
        raise KeyError(f"event type {e.args[0]!r} not in vocabulary") from None
    ts = np.array([e.timestamp for e in events])
    gaps = np.zeros(len(events))
    if len(events) > 1:
        gaps[1:] = ts[1:] - ts[:-1]
    return ev_idx, edges.bin_of(gaps)


def embed_events(ev_idx: np.ndarray, bin_idx: np.ndarray, params: dict[str, Param]) -> Tensor:
    """x_j = event_embed[e_j] + gap_embed[bin_j] + pos_embed[j]."""
    m = len(ev_idx)
    if m == 0:
        raise ValueError("embed_events requires at least one event")
    x = add(gather_rows(params["enc.event_embed"], ev_idx), gather_rows(params["enc.gap_embed"], bin_idx))
    return add(x, gather_rows(params["enc.pos_embed"], np.arange(m, dtype=np.intp)))


def apply_event_mask(x: Tensor, p_mask: float, mask_vec: Param, rng: np.random.Generator) -> Tensor:
    """Replace each row by the learned mask vector independently with
    probability p_mask (training-time robustness to incomplete logs)."""
    m = x.data.shape[0]
    dropped = rng.random(m) < p_mask
    if not dropped.any():
        return x
    keep_col = constant((~dropped).astype(np.float64)[:, None])
    drop_col = constant(dropped.astype(np.float64)[:, None])
    return add(mul(x, keep_col), mul(drop_col, mask_vec))


def _mhsa(x: Tensor, params: dict[str, Param], prefix: str, config: EncoderConfig) -> Tensor:
    q = matmul(x, params[f"{prefix}.attn.wq"])
    k = matmul(x, params[f"{prefix}.attn.wk"])
    v = matmul(x, params[f"{prefix}.attn.wv"])
    scale = 1.0 / math.sqrt(config.d_k)
    heads = []
    for h in range(config.heads):
        j0, j1 = h * config.d_k, (h + 1) * config.d_k
        qh, kh, vh = slice_cols(q, j0, j1), slice_cols(k, j0, j1), slice_cols(v, j0, j1)
        attn = softmax_rows(mul(matmul(qh, transpose(kh)), constant(scale)))
        heads.append(matmul(attn, vh))
    return matmul(concat_cols(heads), params[f"{prefix}.attn.wo"])


def encode(
    x: Tensor,
    config: EncoderConfig,
    params: dict[str, Param],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Pre-norm Transformer stack: x + MHSA(LN(x)), then x + FF(LN(x))."""
    h = x
    if train_mode and config.p_mask > 0.0:
        h = apply_event_mask(h, config.p_mask, params["enc.mask_vec"], rng)
    for i in range(config.layers):
        pre = f"enc.layer{i}"
        a = layernorm_rows(h, params[f"{pre}.ln1.gamma"], params[f"{pre}.ln1.beta"])
        h = add(h, _mhsa(a, params, pre, config))
        b = layernorm_rows(h, params[f"{pre}.ln2.gamma"], params[f"{pre}.ln2.beta"])
        ff = matmul(relu(add(matmul(b, params[f"{pre}.ff.w1"]), params[f"{pre}.ff.b1"])), params[f"{pre}.ff.w2"])
        h = add(h, add(ff, params[f"{pre}.ff.b2"]))
    return h


def attention_pool(h: Tensor, pool_q: Param, d: int) -> tuple[Tensor, np.ndarray]:
    """alpha = softmax_j(q . H_j / sqrt(d)); returns (sum_j alpha_j H_j, alpha)."""
    logits = mul(matmul(h, pool_q), constant(1.0 / math.sqrt(d)))  # (m, 1)
    alpha = softmax_rows(transpose(logits))  # (1, m)
    return matmul(alpha, h), alpha.data[0].copy()


def encode_view(
    ev_idx: np.ndarray,
    bin_idx: np.ndarray,
    config: EncoderConfig,
    params: dict[str, Param],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Full behavior path for one view: embed, encode, pool.

    An empty event sequence maps to the dedicated learned vector rather
    than an error (attention pooling is undefined at m = 0)."""
    if len(ev_idx) == 0:
        return params["enc.empty_seq"]
    x = embed_events(ev_idx, bin_idx, params)
    h = encode(x, config, params, train_mode=train_mode, rng=rng)
    pooled, _ = attention_pool(h, params["enc.pool_q"], config.d)
    return pooled
