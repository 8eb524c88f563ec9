"""Cached snippet embeddings, deterministic stub embedder, snippet
attention pooling, and k-means topic features.

The embedding cache file is the bit-exact interchange contract with the
offline exporter tool: magic ``TETE``, version u32, d_llm u32, count u64,
then per record a u16 id length, the UTF-8 snippet id, and d_llm 32-bit
little-endian floats.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Param, Tensor, constant, matmul, softmax_rows, tanh, transpose

MAGIC = b"TETE"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class CacheError(Exception):
    pass


@dataclass(frozen=True)
class EmbeddingCache:
    d_llm: int
    vectors: dict[str, np.ndarray]  # snippet_id -> float64 vector of width d_llm

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class TopicModel:
    centroids: np.ndarray  # (K, d_llm)
    temperature: float

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass
class TextFeatures:
    """Per-enrollment text bundle fed to fusion.

    When ``missing`` is true both ``pooled`` and ``theta`` are exactly
    zero; otherwise ``theta`` lies on the K-simplex and ``pooled`` is the
    attention-pooled snippet embedding (a graph Tensor during training).
    """

    pooled: object  # Tensor (1, d_llm) or ndarray
    theta: np.ndarray  # (K,)
    missing: bool

    def validate(self, atol: float = 1e-9) -> None:
        pooled = self.pooled.data if isinstance(self.pooled, Tensor) else np.asarray(self.pooled)
        if self.missing:
            if np.any(pooled != 0.0) or np.any(self.theta != 0.0):
                raise ValueError("missing text features must be exactly zero")
        else:
            if np.any(self.theta < 0) or abs(float(self.theta.sum()) - 1.0) > atol:
                raise ValueError(f"theta must lie on the simplex, got sum {self.theta.sum()}")


# -- cache file I/O ----------------------------------------------------


def write_embedding_cache(path, d_llm: int, items: list[tuple[str, np.ndarray]]) -> None:
    """Write snippet vectors in input order, rounding payloads to float32."""
    seen: set[str] = set()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIQ", VERSION, d_llm, len(items)))
        for sid, vec in items:
            if sid in seen:
                raise CacheError(f"duplicate snippet_id {sid!r}")
            seen.add(sid)
            vec32 = np.asarray(vec, dtype="<f4")
            if vec32.shape != (d_llm,):
                raise CacheError(f"snippet {sid!r}: vector width {vec32.shape} != ({d_llm},)")
            encoded = sid.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(vec32.tobytes())


def load_embedding_cache(path) -> EmbeddingCache:
    """Load a cache file, widening stored float32 values to float64."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CacheError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    try:
        version, d_llm, count = struct.unpack_from("<IIQ", blob, 4)
    except struct.error:
        raise CacheError(f"{path}: truncated header") from None
    if version != VERSION:
        raise CacheError(f"{path}: unsupported version {version}")
    vectors: dict[str, np.ndarray] = {}
    off = 4 + struct.calcsize("<IIQ")
    for i in range(count):
        try:
            (id_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            sid = blob[off : off + id_len].decode("utf-8")
            off += id_len
            if off + 4 * d_llm > len(blob):
                raise ValueError("payload extends past end of file")
            vec = np.frombuffer(blob, dtype="<f4", count=d_llm, offset=off)
            off += 4 * d_llm
        except (struct.error, ValueError) as e:
            raise CacheError(f"{path}: truncated at record {i}: {e}") from None
        if sid in vectors:
            raise CacheError(f"{path}: duplicate snippet_id {sid!r}")
        vectors[sid] = vec.astype(np.float64)
    return EmbeddingCache(d_llm=int(d_llm), vectors=vectors)


# -- deterministic stub embedder ---------------------------------------


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class _SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_unit(self) -> float:
        # double in (0, 1]; never 0, so log() below is safe
        return ((self.next_u64() >> 11) + 1) * 2.0**-53


def stub_embed(snippet_text: str, d_llm: int) -> np.ndarray:
    """Deterministic unit-norm pseudo-embedding of a text snippet.

    Pipeline is fixed bit-for-bit so independent implementations produce
    identical float32 cache payloads: FNV-1a 64 over the UTF-8 bytes
    seeds a SplitMix64 stream, Box-Muller maps unit doubles to normals,
    and the vector is L2-normalized in float64.
    """
    rng = _SplitMix64(_fnv1a64(snippet_text.encode("utf-8")))
    out = np.empty(d_llm, dtype=np.float64)
    i = 0
    while i < d_llm:
        u1 = rng.next_unit()
        u2 = rng.next_unit()
        r = math.sqrt(-2.0 * math.log(u1))
        out[i] = r * math.cos(2.0 * math.pi * u2)
        if i + 1 < d_llm:
            out[i + 1] = r * math.sin(2.0 * math.pi * u2)
        i += 2
    return out / math.sqrt(float(np.dot(out, out)))


# -- snippet aggregation ------------------------------------------------


def init_pooling_params(rng: np.random.Generator, d_llm: int, attn_dim: int) -> dict[str, Param]:
    from .autodiff import uniform_init

    return {
        "text.score_u": Param("text.score_u", uniform_init(rng, (d_llm, attn_dim), d_llm)),
        "text.score_w": Param("text.score_w", uniform_init(rng, (attn_dim, 1), attn_dim)),
    }


def pool_snippets(vectors: np.ndarray, score_u: Param, score_w: Param) -> tuple[Tensor, np.ndarray]:
    """Additive-attention pooling over a (n, d_llm) snippet matrix.

    Weights beta = softmax_k( w^T tanh(U h_k) ); returns the pooled
    (1, d_llm) tensor and the beta weights as a plain array.
    """
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("pool_snippets requires a non-empty (n, d_llm) matrix")
    h = constant(vectors)
    scores = matmul(tanh(matmul(h, score_u)), score_w)  # (n, 1)
    beta = softmax_rows(transpose(scores))  # (1, n)
    pooled = matmul(beta, h)  # (1, d_llm)
    return pooled, beta.data[0].copy()


# -- topic features ------------------------------------------------------


def fit_topics(train_vectors: list[np.ndarray], k: int, seed: int) -> TopicModel:
    """k-means with k-means++ seeding and a fixed 50 Lloyd iterations.

    Fit on training-split vectors only. Temperature is the mean squared
    nearest-centroid distance, the scale used by the soft assignment.
    """
    if k < 2:
        raise ValueError(f"topic count must be >= 2, got {k}")
    x = np.asarray(train_vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("train_vectors must be a list of equal-width vectors")
    if np.unique(x, axis=0).shape[0] < k:
        raise ValueError(f"need at least {k} distinct vectors to fit {k} topics")
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(len(x))]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        probs = d2 / d2.sum()
        centroids[j] = x[rng.choice(len(x), p=probs)]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))

    for _ in range(50):
        dists = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = dists.argmin(axis=1)
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            # empty clusters keep their previous centroid

    dists = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    temperature = float(dists.min(axis=1).mean())
    if temperature <= 0.0:
        temperature = 1e-12
    return TopicModel(centroids=centroids, temperature=temperature)


def topic_distribution(vectors: np.ndarray, model: TopicModel) -> np.ndarray:
    """Mean over snippets of softmax(-||h - c_j||^2 / temperature); K-simplex."""
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    d2 = ((x[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    logits = -d2 / model.temperature
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    per_snippet = e / e.sum(axis=1, keepdims=True)
    return per_snippet.mean(axis=0)


def build_text_features(
    snippet_ids: tuple[str, ...],
    cache: EmbeddingCache,
    topic_model: TopicModel,
) -> tuple[np.ndarray | None, np.ndarray, bool]:
    """Resolve a view's snippet ids to (matrix, theta, missing).

    theta is frozen at feature time; pooling happens inside the model so
    its weights can learn.
    """
    if not snippet_ids:
        return None, np.zeros(topic_model.k), True
    try:
        mat = np.stack([cache.vectors[sid] for sid in snippet_ids])
    except KeyError as e:
        raise CacheError(f"snippet id {e.args[0]!r} not present in embedding cache") from None
    return mat, topic_distribution(mat, topic_model), False
