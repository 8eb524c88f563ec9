"""Training loop: shuffled mini-batches, Adam updates, early stopping on
validation RMSE with best-checkpoint restoration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Param, backward, concat_rows, mean_all, zero_grads
from .fusion import GaussianPrediction, nll_loss, prediction_from_nodes
from .models import ExampleFeatures


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 64  # desk-scale default; production-scale logs want 512
    max_epochs: int = 100
    patience: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        # zero is allowed so no-op training is constructible in tests
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainReport:
    seed: int
    checkpoint_id: str
    epochs: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, train_loss, val_rmse)
    best_epoch: int = 0
    best_val_rmse: float = math.inf

    def to_tsv(self) -> str:
        lines = ["epoch\ttrain_loss\tval_rmse"]
        lines.extend(f"{e}\t{tl!r}\t{vr!r}" for e, tl, vr in self.epochs)
        lines.append(f"# best_epoch={self.best_epoch} best_val_rmse={self.best_val_rmse!r} seed={self.seed}")
        return "\n".join(lines) + "\n"


class Adam:
    """Standard bias-corrected first/second-moment optimizer."""

    def __init__(self, params: list[Param], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.adam_beta1**self.t
        bc2 = 1.0 - cfg.adam_beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * g
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def adam_step(params: list[Param], state: Adam) -> None:
    """Functional alias: apply one update using the grads on ``params``."""
    assert state.params is params or list(state.params) == list(params)
    state.step()


def predict_example(model, ex: ExampleFeatures) -> GaussianPrediction:
    mu, log_var = model.forward(ex, train_mode=False)
    return prediction_from_nodes(mu, log_var)


def validation_rmse(model, examples: list[ExampleFeatures]) -> float:
    """RMSE of reported (clamped) means in evaluation mode."""
    se = 0.0
    for ex in examples:
        pred = predict_example(model, ex)
        se += (pred.mu_reported - ex.label) ** 2
    return math.sqrt(se / len(examples))


def train_model(
    model,
    train_examples: list[ExampleFeatures],
    val_examples: list[ExampleFeatures],
    cfg: TrainConfig,
    rng: np.random.Generator,
    seed: int = 0,
    checkpoint_id: str = "",
) -> TrainReport:
    """Run the loop until early stopping or the epoch cap; the model is
    left holding the parameters of its best validation epoch."""
    if not train_examples or not val_examples:
        raise ValueError("train and validation splits must be non-empty")
    params = model.param_list()
    opt = Adam(params, cfg)
    report = TrainReport(seed=seed, checkpoint_id=checkpoint_id)
    best_snapshot = {p.name: p.data.copy() for p in params}
    epochs_since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_examples))
        loss_sum = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0 : b0 + cfg.batch_size]
            zero_grads(params)
            losses = []
            for idx in batch:
                ex = train_examples[idx]
                mu, log_var = model.forward(ex, train_mode=True, rng=rng)
                losses.append(nll_loss(mu, log_var, ex.label))
            batch_loss = mean_all(concat_rows(losses))
            if not np.isfinite(batch_loss.data):
                raise RuntimeError(
                    f"non-finite loss in epoch {epoch}, batch starting at example {b0}"
                )
            backward(batch_loss)
            opt.step()
            loss_sum += float(batch_loss.data) * len(batch)
        train_loss = loss_sum / len(order)
        val_rmse = validation_rmse(model, val_examples)
        report.epochs.append((epoch, train_loss, val_rmse))

        if val_rmse < report.best_val_rmse:
            report.best_val_rmse = val_rmse
            report.best_epoch = epoch
            best_snapshot = {p.name: p.data.copy() for p in params}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break

    for p in params:
        p.data = best_snapshot[p.name]
    return report
