import numpy as np
import pytest

from earlysat.data import EventRecord, HorizonView, TextSnippetRef, slice_horizon
from earlysat.encoder import EncoderConfig
from earlysat.fusion import FusionConfig
from earlysat.models import (
    AggregateLinearModel,
    ExampleFeatures,
    FullModel,
    ModelVariant,
    StaticMMModel,
    TextConfig,
    TextOnlyModel,
    aggregate_features,
    aggregate_stats,
    build_model,
)
from earlysat.training import predict_example

DAY = 86400.0

ENC = EncoderConfig(d=8, layers=1, heads=2, bins=4, p_mask=0.1, max_seq_len=16)
TXT = TextConfig(d_llm=6, k_topics=3, attn_dim=4)
FUS = FusionConfig(d_c=4, d_f=8, p_drop=0.1)
VOCAB = ["a", "b", "c"]


def example(seed, with_text=False, m=4):
    rng = np.random.default_rng(seed)
    ev = rng.integers(0, 3, size=m).astype(np.intp)
    bins = rng.integers(0, 4, size=m).astype(np.intp)
    label = float(rng.uniform(1, 5))
    view = HorizonView("e", 7, (), (), not with_text, label)
    snips = rng.normal(size=(2, 6)) if with_text else None
    theta = rng.dirichlet(np.ones(3)) if with_text else np.zeros(3)
    agg = rng.uniform(0, 10, size=5)
    return ExampleFeatures(view, ev, bins, snips, theta, agg, label)


class TestAggregateFeatures:
    def test_hand_computed(self):
        events = (
            EventRecord("e", "a", 0.5 * DAY),
            EventRecord("e", "a", 0.6 * DAY),
            EventRecord("e", "b", 2.4 * DAY),
        )
        view = HorizonView("e", 7, events, (), True, 4.0)
        feats = aggregate_features(view, {"a": 0, "b": 1, "c": 2})
        # counts per type, active days, total events
        assert feats.tolist() == [2.0, 1.0, 0.0, 2.0, 3.0]

    def test_stats_floor_constant_features(self):
        exs = [example(i) for i in range(5)]
        for ex in exs:
            ex.agg[2] = 7.0  # constant column
        mean, sd = aggregate_stats(exs)
        assert sd[2] == 1.0  # guarded against zero division


class TestVariants:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown model kind"):
            ModelVariant(kind="xgboost")

    def test_tag_encodes_ablations(self):
        v = ModelVariant(kind="full", mean_pool=True, modality_dropout=False, mse_loss=True)
        assert v.tag() == "full-meanpool-nomoddrop-mse"

    def test_full_model_rejects_baseline_kinds(self):
        with pytest.raises(ValueError, match="realize"):
            FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="text_only"), np.random.default_rng(0))


class TestBehaviorOnlyEquivalence:
    def test_matches_full_on_text_missing_data(self):
        # same init seed -> identical parameters; on text-missing examples
        # the text pathway is zero either way, so outputs agree exactly
        full = FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="full"), np.random.default_rng(3))
        behav = FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="behavior_only"), np.random.default_rng(3))
        for i in range(5):
            ex = example(100 + i, with_text=False)
            p1 = predict_example(full, ex)
            p2 = predict_example(behav, ex)
            assert p1 == p2

    def test_behavior_only_ignores_text(self):
        behav = FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="behavior_only"), np.random.default_rng(3))
        ex_text = example(7, with_text=True)
        ex_missing = ExampleFeatures(
            ex_text.view, ex_text.ev_idx, ex_text.bin_idx, None, np.zeros(3), ex_text.agg, ex_text.label
        )
        assert predict_example(behav, ex_text) == predict_example(behav, ex_missing)


class TestMeanPoolAblation:
    def test_single_event_sequences_match_attention_pooling(self):
        # attention over one row is the identity, so both pooling modes
        # agree exactly when m = 1 and all weights are shared
        attn = FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="full"), np.random.default_rng(5))
        mean = FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="full", mean_pool=True), np.random.default_rng(5))
        ex = example(9, with_text=False, m=1)
        assert predict_example(attn, ex) == predict_example(mean, ex)

    def test_multi_event_sequences_differ(self):
        attn = FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="full"), np.random.default_rng(5))
        mean = FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="full", mean_pool=True), np.random.default_rng(5))
        ex = example(9, with_text=False, m=6)
        assert predict_example(attn, ex) != predict_example(mean, ex)


class TestMseAblation:
    def test_log_var_frozen_at_zero(self):
        model = FullModel(VOCAB, ENC, FUS, TXT, ModelVariant(kind="full", mse_loss=True), np.random.default_rng(0))
        ex = example(3)
        pred = predict_example(model, ex)
        assert pred.log_var == 0.0
        assert pred.var == 1.0


class TestBaselineModels:
    def test_aggregate_linear_is_order_invariant_by_construction(self):
        exs = [example(i) for i in range(6)]
        stats = aggregate_stats(exs)
        model = AggregateLinearModel(5, stats, np.random.default_rng(0))
        ex = exs[0]
        p1 = predict_example(model, ex)
        # scrambling the sequence view changes nothing: only agg is read
        ex2 = ExampleFeatures(ex.view, ex.ev_idx[::-1].copy(), ex.bin_idx[::-1].copy(), None, ex.theta, ex.agg, ex.label)
        assert predict_example(model, ex2) == p1

    def test_text_only_handles_missing(self):
        model = TextOnlyModel(6, np.random.default_rng(0))
        pred = predict_example(model, example(1, with_text=False))
        assert np.isfinite(pred.mu)

    def test_static_mm_forward(self):
        exs = [example(i, with_text=(i % 2 == 0)) for i in range(6)]
        model = StaticMMModel(5, 6, aggregate_stats(exs), hidden=8, p_drop=0.2, rng=np.random.default_rng(0))
        for ex in exs:
            assert np.isfinite(predict_example(model, ex).mu)

    def test_build_model_dispatch(self):
        exs = [example(i) for i in range(4)]
        rng = np.random.default_rng(0)
        for kind, cls in (
            ("full", FullModel),
            ("behavior_only", FullModel),
            ("aggregate_features", AggregateLinearModel),
            ("text_only", TextOnlyModel),
            ("static_mm", StaticMMModel),
        ):
            model = build_model(ModelVariant(kind=kind), VOCAB, ENC, FUS, TXT, exs, rng)
            assert isinstance(model, cls)
