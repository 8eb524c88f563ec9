import math

import numpy as np
import pytest

from earlysat.autodiff import Param, constant
from earlysat.fusion import (
    FusionConfig,
    GaussianPrediction,
    fuse,
    init_fusion_params,
    interval,
    nll_loss,
    predict,
    prediction_from_nodes,
)
from earlysat.gradcheck import finite_difference_check
from earlysat.text import TextFeatures

CFG = FusionConfig(d_c=4, d_f=8, p_drop=0.2, p_mod_text=0.3, p_mod_behavior=0.1)


def make_params(seed=0, d=6, d_llm=5, k=3, cfg=CFG):
    return init_fusion_params(np.random.default_rng(seed), d, d_llm, k, cfg)


def behavior(seed=1, d=6):
    return constant(np.random.default_rng(seed).normal(size=(1, d)))


def present_text(seed=2, d_llm=5, k=3):
    rng = np.random.default_rng(seed)
    theta = rng.dirichlet(np.ones(k))
    return TextFeatures(pooled=constant(rng.normal(size=(1, d_llm))), theta=theta, missing=False)


def missing_text(d_llm=5, k=3):
    return TextFeatures(pooled=np.zeros((1, d_llm)), theta=np.zeros(k), missing=True)


class TestFuse:
    def test_missing_text_zero_blocks_and_bit(self):
        params = make_params()
        z = fuse(behavior(), missing_text(), CFG, params)
        assert np.all(z.data[0, CFG.d_c : 3 * CFG.d_c] == 0.0)
        assert z.data[0, -1] == 1.0

    def test_forced_text_dropout_ignores_text(self):
        cfg = FusionConfig(d_c=4, d_f=8, p_drop=0.0, p_mod_text=0.999999, p_mod_behavior=0.0)
        params = make_params(cfg=cfg)
        rng = np.random.default_rng(0)
        z1 = fuse(behavior(), present_text(seed=10), cfg, params, train_mode=True, rng=np.random.default_rng(0))
        z2 = fuse(behavior(), present_text(seed=11), cfg, params, train_mode=True, rng=np.random.default_rng(0))
        assert np.array_equal(z1.data, z2.data)
        assert z1.data[0, -1] == 1.0  # dropped text presents as missing

    def test_eval_mode_deterministic(self):
        params = make_params()
        z1 = fuse(behavior(), present_text(), CFG, params)
        z2 = fuse(behavior(), present_text(), CFG, params)
        assert z1.data.tobytes() == z2.data.tobytes()

    def test_behavior_dropout_zeroes_behavior_block(self):
        cfg = FusionConfig(d_c=4, d_f=8, p_drop=0.0, p_mod_text=0.0, p_mod_behavior=0.999999)
        params = make_params(cfg=cfg)
        z = fuse(behavior(), present_text(), cfg, params, train_mode=True, rng=np.random.default_rng(1))
        assert np.all(z.data[0, : cfg.d_c] == 0.0)
        assert z.data[0, -1] == 0.0  # no behavior-missing bit exists

    def test_z_width(self):
        params = make_params()
        z = fuse(behavior(), present_text(), CFG, params)
        assert z.data.shape == (1, 3 * CFG.d_c + 1)


class TestPredict:
    def test_zero_weights_give_standard_gaussian(self):
        params = make_params()
        for p in params.values():
            p.data[:] = 0.0
        z = constant(np.random.default_rng(0).normal(size=(1, CFG.z_width)))
        mu, log_var = predict(z, CFG, params)
        pred = prediction_from_nodes(mu, log_var)
        assert pred.mu == 0.0
        assert pred.log_var == 0.0
        assert pred.var == 1.0

    def test_log_var_clamped_under_adversarial_weights(self):
        params = make_params()
        params["head.b2"].data[0, 1] = 1e3
        z = constant(np.zeros((1, CFG.z_width)))
        _, log_var = predict(z, CFG, params)
        assert log_var.data[0, 0] == 10.0
        params["head.b2"].data[0, 1] = -1e3
        _, log_var = predict(z, CFG, params)
        assert log_var.data[0, 0] == -10.0

    def test_reported_mean_clamped_loss_mean_raw(self):
        pred = GaussianPrediction(mu=7.3, log_var=0.0)
        assert pred.mu_reported == 5.0
        assert pred.mu == 7.3


class TestNLL:
    def test_perfect_mean_unit_variance_zero_loss(self):
        loss = nll_loss(constant([[4.0]]), constant([[0.0]]), 4.0)
        assert loss.data[0, 0] == 0.0

    def test_direct_evaluation(self):
        # (5-4)^2 / (2*1) + log(1)/2 = 0.5
        loss = nll_loss(constant([[4.0]]), constant([[0.0]]), 5.0)
        assert loss.data[0, 0] == 0.5

    def test_unit_variance_reduces_to_half_mse(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mu, y = rng.normal(), float(rng.uniform(1, 5))
            loss = nll_loss(constant([[mu]]), constant([[0.0]]), y)
            assert loss.data[0, 0] == 0.5 * (y - mu) ** 2

    def test_gradient_through_fuse_predict_nll(self):
        params = make_params(seed=5)
        b = behavior(seed=6)
        text = present_text(seed=7)

        def loss_fn():
            rng = np.random.default_rng(3)
            z = fuse(b, text, CFG, params, train_mode=True, rng=rng)
            mu, log_var = predict(z, CFG, params, train_mode=True, rng=rng)
            return nll_loss(mu, log_var, 4.2)

        worst = finite_difference_check(loss_fn, list(params.values()))
        assert worst < 1e-4


class TestInterval:
    def test_ninety_percent_example(self):
        lo, hi = interval(GaussianPrediction(mu=4.0, log_var=0.0), 0.90)
        assert lo == pytest.approx(2.3551464, abs=1e-7)
        assert hi == pytest.approx(5.6448536, abs=1e-7)
        # matches the coarser hand-rounded values too
        assert lo == pytest.approx(2.3551, abs=1e-4)
        assert hi == pytest.approx(5.6449, abs=1e-4)

    def test_tiny_sigma_collapses_to_mu(self):
        lo, hi = interval(GaussianPrediction(mu=3.3, log_var=-700.0), 0.90)
        assert lo == pytest.approx(3.3, abs=1e-9)
        assert hi == pytest.approx(3.3, abs=1e-9)

    def test_monotone_in_level(self):
        pred = GaussianPrediction(mu=2.0, log_var=0.4)
        widths = []
        for level in (0.80, 0.90, 0.95, 0.99):
            lo, hi = interval(pred, level)
            widths.append(hi - lo)
            assert (lo + hi) / 2 == pytest.approx(2.0)
        assert widths == sorted(widths)

    def test_unsupported_level(self):
        with pytest.raises(ValueError, match="unsupported"):
            interval(GaussianPrediction(0.0, 0.0), 0.85)
        with pytest.raises(ValueError, match="level"):
            interval(GaussianPrediction(0.0, 0.0), 1.5)

    def test_monte_carlo_coverage(self):
        # standard-normal residuals: nominal 90% interval covers 90% +- 0.5%
        rng = np.random.default_rng(0)
        n = 100_000
        labels = rng.normal(size=n)
        hits = 0
        pred = GaussianPrediction(mu=0.0, log_var=0.0)
        lo, hi = interval(pred, 0.90)
        hits = np.sum((labels >= lo) & (labels <= hi))
        assert abs(hits / n - 0.90) <= 0.005
