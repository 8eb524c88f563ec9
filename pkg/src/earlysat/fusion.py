"""Modality fusion, heteroscedastic output head, Gaussian NLL, and
predictive intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Param,
    Tensor,
    add,
    clamp,
    concat_cols,
    constant,
    dropout,
    exp,
    matmul,
    mul,
    relu,
    slice_cols,
    uniform_init,
)
from .text import TextFeatures

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0

# Hard-coded standard-normal quantiles z_{(1+level)/2}; keeps intervals
# bit-stable with no inverse-CDF dependency.
_NORMAL_QUANTILES = {
    0.80: 1.2815516,
    0.90: 1.6448536,
    0.95: 1.9599640,
    0.99: 2.5758293,
}


@dataclass(frozen=True)
class FusionConfig:
    d_c: int = 256  # common projection width per modality
    d_f: int = 512  # output MLP hidden size
    p_drop: float = 0.3
    p_mod_text: float = 0.3
    p_mod_behavior: float = 0.1

    def __post_init__(self):
        for name in ("p_drop", "p_mod_text", "p_mod_behavior"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")

    @property
    def z_width(self) -> int:
        return 3 * self.d_c + 1


@dataclass(frozen=True)
class GaussianPrediction:
    mu: float
    log_var: float  # clamped to [LOG_VAR_MIN, LOG_VAR_MAX] by construction

    @property
    def var(self) -> float:
        return math.exp(self.log_var)

    @property
    def sigma(self) -> float:
        return math.exp(0.5 * self.log_var)

    @property
    def mu_reported(self) -> float:
        """Mean clamped to the label range; used for reporting/metrics only."""
        return min(5.0, max(1.0, self.mu))


def init_fusion_params(
    rng: np.random.Generator, d: int, d_llm: int, k: int, config: FusionConfig
) -> dict[str, Param]:
    p: dict[str, Param] = {}

    def mk(name, shape, fan_in):
        p[name] = Param(name, uniform_init(rng, shape, fan_in))

    mk("fuse.w_behavior", (d, config.d_c), d)
    mk("fuse.w_text", (d_llm, config.d_c), d_llm)
    mk("fuse.w_topic", (k, config.d_c), k)
    mk("head.w1", (config.z_width, config.d_f), config.z_width)
    p["head.b1"] = Param("head.b1", np.zeros((1, config.d_f)))
    mk("head.w2", (config.d_f, 2), config.d_f)
    # zero-init the output row so training starts at sigma^2 = 1
    p["head.w2"].data[:, 1] = 0.0
    p["head.b2"] = Param("head.b2", np.zeros((1, 2)))
    return p


def fuse(
    b: Tensor,
    text: TextFeatures,
    config: FusionConfig,
    params: dict[str, Param],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """z = [W_b b ; W_h pooled ; W_theta theta ; missing_bit].

    In train mode the text block (and the missing bit, forced to 1) is
    zeroed with probability p_mod_text, and independently the behavior
    block with probability p_mod_behavior. Evaluation is deterministic.
    """
    drop_text = False
    drop_behavior = False
    if train_mode:
        # fixed draw order keeps runs reproducible for a given rng state
        drop_text = rng.random() < config.p_mod_text
        drop_behavior = rng.random() < config.p_mod_behavior

    if drop_behavior:
        b_block = constant(np.zeros((1, config.d_c)))
    else:
        b_block = matmul(b, params["fuse.w_behavior"])

    if text.missing or drop_text:
        text_block = constant(np.zeros((1, config.d_c)))
        topic_block = constant(np.zeros((1, config.d_c)))
        missing_bit = 1.0
    else:
        pooled = text.pooled if isinstance(text.pooled, Tensor) else constant(text.pooled)
        text_block = matmul(pooled, params["fuse.w_text"])
        topic_block = matmul(constant(text.theta[None, :]), params["fuse.w_topic"])
        missing_bit = 0.0

    return concat_cols([b_block, text_block, topic_block, constant([[missing_bit]])])


def predict(
    z: Tensor,
    config: FusionConfig,
    params: dict[str, Param],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Two-layer output MLP; returns (mu, log_var) graph nodes, with the
    log-variance clamped to [-10, 10]. The loss consumes the raw mu;
    clamping to the label range happens only at reporting time.
    """
    h = relu(add(matmul(z, params["head.w1"]), params["head.b1"]))
    if train_mode and config.p_drop > 0.0:
        h = dropout(h, config.p_drop, rng)
    out = add(matmul(h, params["head.w2"]), params["head.b2"])
    mu = slice_cols(out, 0, 1)
    log_var = clamp(slice_cols(out, 1, 2), LOG_VAR_MIN, LOG_VAR_MAX)
    return mu, log_var


def nll_loss(mu: Tensor, log_var: Tensor, y: float) -> Tensor:
    """Heteroscedastic Gaussian NLL (constant terms dropped):
    (y - mu)^2 / (2 sigma^2) + log(sigma^2) / 2."""
    err = constant([[float(y)]]) - mu
    return 0.5 * (err * err * exp(-log_var) + log_var)


def prediction_from_nodes(mu: Tensor, log_var: Tensor) -> GaussianPrediction:
    return GaussianPrediction(mu=float(mu.data[0, 0]), log_var=float(log_var.data[0, 0]))


def interval(pred: GaussianPrediction, level: float = 0.90) -> tuple[float, float]:
    """Central predictive interval mu +- z * sigma at a supported level."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    z = _NORMAL_QUANTILES.get(round(level, 6))
    if z is None:
        raise ValueError(
            f"unsupported interval level {level}; available: {sorted(_NORMAL_QUANTILES)}"
        )
    sigma = pred.sigma
    return pred.mu - z * sigma, pred.mu + z * sigma
