import math

import numpy as np
import pytest

from earlysat.autodiff import Param, backward, constant, mean_all, mul, zero_grads
from earlysat.data import EventRecord, HorizonView
from earlysat.encoder import (
    BucketEdges,
    EncoderConfig,
    attention_pool,
    calibrate_buckets,
    embed_events,
    encode,
    encode_view,
    event_indices,
    init_encoder_params,
)
from earlysat.gradcheck import finite_difference_check


def view_with_timestamps(ts, event_type="a", label=4.0):
    events = tuple(EventRecord("e", event_type, float(t)) for t in ts)
    return HorizonView("e", 7, events, (), True, label)


def small_params(seed=0, vocab=3, cfg=None):
    cfg = cfg or EncoderConfig(d=8, layers=1, heads=2, bins=4, max_seq_len=16)
    return cfg, init_encoder_params(np.random.default_rng(seed), vocab, cfg)


class TestCalibrateBuckets:
    def test_equal_spacing_in_log_space(self):
        # max gap e^3 - 1 puts the top of the log axis at 3.0; with 4 bins
        # the three interior edges sit at 0.75, 1.5, 2.25
        gap = math.exp(3.0) - 1.0
        views = [view_with_timestamps([0.0, gap])] * 300
        edges = calibrate_buckets(views, 4)
        assert np.allclose(edges.edges, [0.75, 1.5, 2.25])

    def test_degenerate_equal_gaps(self):
        views = [view_with_timestamps([0.0, 5.0, 10.0])] * 10
        edges = calibrate_buckets(views, 4)
        # every observed gap maps to one consistent bin
        bins = edges.bin_of(np.array([5.0, 5.0]))
        assert bins[0] == bins[1] == 3

    def test_no_gaps_is_an_error(self):
        with pytest.raises(ValueError, match="gaps"):
            calibrate_buckets([view_with_timestamps([1.0])], 4)

    def test_all_zero_gaps_is_an_error(self):
        with pytest.raises(ValueError, match="zero"):
            calibrate_buckets([view_with_timestamps([2.0, 2.0, 2.0])], 4)

    def test_uses_percentile_not_max(self):
        ts = [0.0]
        for _ in range(999):
            ts.append(ts[-1] + 10.0)
        views = [view_with_timestamps(ts), view_with_timestamps([0.0, 1e9])]
        edges = calibrate_buckets(views, 8)
        assert edges.max_gap < 1e6  # the outlier gap must not set the scale

    def test_train_only_calibration(self):
        train = [view_with_timestamps([0.0, 10.0, 30.0])] * 5
        e1 = calibrate_buckets(train, 4)
        # "mutating" unrelated test views cannot matter: same train input,
        # identical edges, bit for bit
        e2 = calibrate_buckets(list(train), 4)
        assert np.array_equal(e1.edges, e2.edges)


class TestBinning:
    def setup_method(self):
        self.edges = BucketEdges(edges=np.array([1.0, 2.0, 3.0]), max_gap=math.exp(3) - 1)

    def test_total_and_clamped(self):
        gaps = np.array([0.0, 0.5, math.exp(1.5) - 1, math.exp(2.5) - 1, 1e12])
        bins = self.edges.bin_of(gaps)
        assert bins.tolist() == [0, 0, 1, 2, 3]

    def test_monotone(self):
        gaps = np.linspace(0, 100.0, 500)
        bins = self.edges.bin_of(gaps)
        assert np.all(np.diff(bins) >= 0)

    def test_brute_force_bin_search_agrees(self):
        rng = np.random.default_rng(0)
        gaps = rng.uniform(0, 60, size=200)
        for g in gaps:
            x = math.log1p(g)
            expected = sum(1 for e in self.edges.edges if e <= x)
            assert self.edges.bin_of(g) == expected

    def test_ten_times_max_gap_clamps_to_last_bin(self):
        assert self.edges.bin_of(10 * self.edges.max_gap) == 3


class TestEmbedEvents:
    def test_single_event_composition(self):
        cfg, params = small_params()
        edges = BucketEdges(edges=np.array([1.0, 2.0, 3.0]), max_gap=10.0)
        view = view_with_timestamps([100.0])
        ev_idx, bin_idx = event_indices(view, {"a": 0, "b": 1, "c": 2}, edges, cfg.max_seq_len)
        assert bin_idx.tolist() == [0]  # log1p(0) = 0 lands in bin 0
        x = embed_events(ev_idx, bin_idx, params)
        expected = (
            params["enc.event_embed"].data[0]
            + params["enc.gap_embed"].data[0]
            + params["enc.pos_embed"].data[0]
        )
        assert np.array_equal(x.data[0], expected)

    def test_simultaneous_events_share_bin_zero(self):
        cfg, params = small_params()
        edges = BucketEdges(edges=np.array([1.0, 2.0]), max_gap=10.0)
        view = view_with_timestamps([50.0, 50.0])
        _, bin_idx = event_indices(view, {"a": 0}, edges, cfg.max_seq_len)
        assert bin_idx.tolist() == [0, 0]

    def test_unknown_event_type(self):
        cfg, _ = small_params()
        edges = BucketEdges(edges=np.array([1.0]), max_gap=2.0)
        view = view_with_timestamps([1.0], event_type="mystery")
        with pytest.raises(KeyError, match="mystery"):
            event_indices(view, {"a": 0}, edges, cfg.max_seq_len)

    def test_truncation_keeps_most_recent(self):
        cfg = EncoderConfig(d=8, layers=1, heads=2, bins=4, max_seq_len=4)
        edges = BucketEdges(edges=np.array([1.0, 2.0, 3.0]), max_gap=10.0)
        view = view_with_timestamps(list(range(10)))
        ev_idx, bin_idx = event_indices(view, {"a": 0}, edges, cfg.max_seq_len)
        assert len(ev_idx) == 4


class TestEncode:
    def test_eval_mode_deterministic(self):
        cfg, params = small_params()
        x = embed_events(np.array([0, 1, 2]), np.array([0, 1, 2]), params)
        h1 = encode(x, cfg, params, train_mode=False)
        h2 = encode(x, cfg, params, train_mode=False)
        assert h1.data.tobytes() == h2.data.tobytes()

    def test_permutation_equivariance(self):
        # with the positional table zeroed and identical time-gap bins,
        # permuting tokens must permute the outputs identically
        cfg, params = small_params(seed=1)
        params["enc.pos_embed"].data[:] = 0.0
        ev = np.array([0, 1, 2, 1])
        bins = np.zeros(4, dtype=np.intp)
        perm = np.array([2, 0, 3, 1])
        h = encode(embed_events(ev, bins, params), cfg, params).data
        h_perm = encode(embed_events(ev[perm], bins[perm], params), cfg, params).data
        assert np.allclose(h_perm, h[perm], atol=1e-12)

    def test_masking_rate(self):
        # p_mask=0.5 over 10^4 token draws: empirical rate within 1% absolute
        cfg = EncoderConfig(d=8, layers=1, heads=2, bins=4, p_mask=0.5, max_seq_len=128)
        params = init_encoder_params(np.random.default_rng(0), 3, cfg)
        params["enc.mask_vec"].data[:] = 999.0  # sentinel
        rng = np.random.default_rng(7)
        masked = total = 0
        for _ in range(100):
            x = embed_events(np.zeros(100, dtype=np.intp), np.zeros(100, dtype=np.intp), params)
            from earlysat.encoder import apply_event_mask

            out = apply_event_mask(x, cfg.p_mask, params["enc.mask_vec"], rng)
            masked += int((out.data == 999.0).all(axis=1).sum())
            total += 100
        assert abs(masked / total - 0.5) <= 0.01


class TestAttentionPool:
    def test_single_row_identity(self):
        q = Param("q", np.random.default_rng(0).normal(size=(4, 1)))
        h = constant(np.array([[1.0, 2.0, 3.0, 4.0]]))
        pooled, alpha = attention_pool(h, q, 4)
        assert np.array_equal(pooled.data, h.data)
        assert np.array_equal(alpha, [1.0])

    def test_identical_rows_uniform(self):
        q = Param("q", np.random.default_rng(0).normal(size=(4, 1)))
        h = constant(np.tile([[1.0, -1.0, 0.5, 2.0]], (5, 1)))
        pooled, alpha = attention_pool(h, q, 4)
        assert np.allclose(alpha, 0.2)
        assert np.allclose(pooled.data, h.data[:1])

    def test_two_row_hand_computation(self):
        q = Param("q", np.array([[1.0], [0.0]]))
        h = constant(np.array([[2.0, 5.0], [0.0, -1.0]]))
        logits = np.array([2.0, 0.0]) / math.sqrt(2.0)
        e = np.exp(logits - logits.max())
        alpha_hand = e / e.sum()
        pooled, alpha = attention_pool(h, q, 2)
        assert np.allclose(alpha, alpha_hand, atol=1e-15)
        assert np.allclose(pooled.data[0], alpha_hand @ h.data, atol=1e-15)

    def test_weights_sum_to_one(self):
        q = Param("q", np.random.default_rng(3).normal(size=(6, 1)))
        h = constant(np.random.default_rng(4).normal(size=(9, 6)))
        _, alpha = attention_pool(h, q, 6)
        assert abs(alpha.sum() - 1.0) <= 1e-12
        assert np.all(alpha > 0)

    def test_empty_sequence_uses_learned_vector(self):
        cfg, params = small_params()
        out = encode_view(np.array([], dtype=np.intp), np.array([], dtype=np.intp), cfg, params)
        assert out is params["enc.empty_seq"]


class TestEncoderGradients:
    @pytest.mark.parametrize("m", [1, 3, 8])
    def test_full_path_gradcheck(self, m):
        cfg = EncoderConfig(d=8, layers=1, heads=2, bins=4, p_mask=0.0, max_seq_len=16)
        params = init_encoder_params(np.random.default_rng(m), 3, cfg)
        ev = np.random.default_rng(m + 1).integers(0, 3, size=m)
        bins = np.random.default_rng(m + 2).integers(0, 4, size=m)
        readout = Param("readout", np.random.default_rng(9).normal(size=(8, 1)))

        def loss_fn():
            pooled = encode_view(ev, bins, cfg, params)
            return mean_all(mul(pooled @ readout, pooled @ readout))

        worst = finite_difference_check(loss_fn, list(params.values()) + [readout])
        assert worst < 1e-4
