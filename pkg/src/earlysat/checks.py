"""Finite-difference verification of the full model, runnable from the
CLI (`earlysat gradcheck`) and reused by the test suite.
"""

from __future__ import annotations

import numpy as np

from .data import EventRecord, HorizonView
from .encoder import BucketEdges, EncoderConfig
from .fusion import FusionConfig, nll_loss
from .gradcheck import finite_difference_check
from .models import ExampleFeatures, FullModel, ModelVariant, TextConfig


def random_tiny_setup(seed: int):
    """A randomly shaped full model plus one example, small enough to
    finite-difference every coordinate (m <= 8, d <= 16, d_llm = 8, K = 3)."""
    rng = np.random.default_rng(seed)
    d = int(rng.choice([8, 16]))
    # two layers only at d=8; d=16 doubles the per-coordinate cost and
    # one layer already exercises the full residual/attention path
    encoder_cfg = EncoderConfig(
        d=d,
        layers=int(rng.integers(1, 3)) if d == 8 else 1,
        heads=2,
        bins=4,
        p_mask=0.25,
        max_seq_len=16,
    )
    text_cfg = TextConfig(d_llm=8, k_topics=3, attn_dim=4)
    fusion_cfg = FusionConfig(d_c=4, d_f=8, p_drop=0.2, p_mod_text=0.3, p_mod_behavior=0.2)
    vocab = [f"t{i}" for i in range(int(rng.integers(3, 6)))]
    variant = ModelVariant(kind="full")
    model = FullModel(vocab, encoder_cfg, fusion_cfg, text_cfg, variant, rng)

    m = int(rng.integers(0, 9))
    ev_idx = rng.integers(0, len(vocab), size=m)
    bin_idx = rng.integers(0, encoder_cfg.bins, size=m)
    n_snip = int(rng.integers(0, 3))
    snippets = rng.normal(size=(n_snip, text_cfg.d_llm)) if n_snip else None
    theta = rng.dirichlet(np.ones(text_cfg.k_topics)) if n_snip else np.zeros(text_cfg.k_topics)
    label = float(rng.uniform(1.0, 5.0))
    view = HorizonView("probe", 7, tuple(EventRecord("probe", vocab[i], float(j)) for j, i in enumerate(ev_idx)), (), n_snip == 0, label)
    ex = ExampleFeatures(
        view=view,
        ev_idx=ev_idx.astype(np.intp),
        bin_idx=bin_idx.astype(np.intp),
        snippets=snippets,
        theta=theta,
        agg=np.zeros(len(vocab) + 2),
        label=label,
    )
    return model, ex


def full_model_gradcheck(seed: int, rel_tol: float = 1e-4) -> float:
    """Check every parameter coordinate of a random tiny full model
    against central differences, through the training-mode forward pass
    (event masking, modality dropout, and MLP dropout all active, with
    draws frozen per evaluation). Returns the worst relative error."""
    model, ex = random_tiny_setup(seed)

    def loss_fn():
        fwd_rng = np.random.default_rng(seed + 1)
        mu, log_var = model.forward(ex, train_mode=True, rng=fwd_rng)
        return nll_loss(mu, log_var, ex.label)

    return finite_difference_check(loss_fn, model.param_list(), rel_tol=rel_tol)


def run_gradcheck_suite(seeds: range, rel_tol: float = 1e-4, verbose: bool = True) -> bool:
    ok = True
    for seed in seeds:
        try:
            worst = full_model_gradcheck(seed, rel_tol)
            if verbose:
                print(f"gradcheck seed {seed}: PASS (worst rel err {worst:.3g})")
        except AssertionError as e:
            ok = False
            if verbose:
                print(f"gradcheck seed {seed}: FAIL ({e})")
    return ok
