import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdmask.dynamic import (
    CascadeEntry,
    DMConfig,
    cascade_depth,
    overlay_threshold,
    run_dm,
    stack_masks,
    threshold_overlay,
    train_benchmark,
    train_cascade,
)
from hdmask.errors import ConfigError
from hdmask.maskmath import GuidedChain, loss_and_gradient, reference_score
from hdmask.testbed import ConstantClassifier

from oracles import cascade_depth_logs, central_difference, normwise_relative_error, sum_of_upsamples


def desk_dm(**kw):
    base = DMConfig(benchmark_sizes=((4, 4), (5, 5), (6, 6)), scale_factors=(2,), epochs=200)
    return dataclasses.replace(base, **kw)


def overlapping_cells(shape, rect, size=32):
    """Boolean grid of cells whose pixel footprint intersects ``rect``."""
    top, left, ph, pw = rect
    a, b = shape
    out = np.zeros(shape, dtype=bool)
    for r in range(a):
        for c in range(b):
            y0, y1 = r * size / a, (r + 1) * size / a
            x0, x1 = c * size / b, (c + 1) * size / b
            out[r, c] = y0 < top + ph and y1 > top and x0 < left + pw and x1 > left
    return out


class TestCascadeDepth:
    @pytest.mark.parametrize("h,w,a,b,t,k", [
        (224, 224, 6, 6, 2, 5),
        (224, 224, 6, 6, 3, 3),
        (224, 224, 224, 224, 5, 0),
        (224, 224, 7, 7, 2, 5),   # 7 * 32 == 224 exactly
        (32, 32, 4, 4, 2, 3),
        (32, 32, 5, 5, 2, 2),
        (32, 48, 4, 4, 2, 3),
    ])
    def test_table(self, h, w, a, b, t, k):
        assert cascade_depth(h, w, a, b, t) == k

    @given(st.integers(1, 300), st.integers(1, 300), st.integers(1, 40), st.integers(1, 40), st.integers(2, 7))
    def test_matches_log_formula(self, h, w, a, b, t):
        if a > h or b > w:
            with pytest.raises(ConfigError):
                cascade_depth(h, w, a, b, t)
        else:
            assert cascade_depth(h, w, a, b, t) == cascade_depth_logs(h, w, a, b, t)


class TestConfig:
    def test_defaults_follow_natural_profile(self):
        cfg = DMConfig()
        assert cfg.benchmark_sizes == tuple((i + 5, i + 5) for i in range(1, 7))
        assert cfg.scale_factors == (2, 3, 5)
        assert (cfg.eta, cfg.epochs, cfg.learning_rate, cfg.gamma_percentile) == (100.0, 800, 1e-2, 0.25)

    @pytest.mark.parametrize("kw", [
        {"benchmark_sizes": ((4, 4), (4, 4))},
        {"scale_factors": (1,)},
        {"gamma_percentile": 0.0},
        {"gamma_percentile": 1.0},
        {"eta": -1.0},
        {"stack_mode": "product"},
        {"epochs": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            desk_dm(**kw)

    def test_eta_overrides(self):
        cfg = desk_dm(eta_overrides={(0, 0, 1): 5.0})
        assert cfg.eta_for(0, 0, 1) == 5.0
        assert cfg.eta_for(0, 0, 2) == 100.0


class TestBenchmark:
    def test_constant_model_without_regularizer_stays_at_tau(self):
        model = ConstantClassifier([1.0, 0.0], (32, 32, 1))
        res = train_benchmark(model, np.ones((32, 32, 1)), (4, 4), desk_dm(eta=0.0, tau=0.4), 0)
        np.testing.assert_array_equal(res.values, np.full((4, 4), 0.4))

    @pytest.mark.parametrize("n", [0, 17, 40])
    def test_patch_cells_outweigh_rest(self, single_model, single_data, n):
        x = single_data.images[n]
        p = int(single_data.labels[n])
        for size in [(4, 4), (5, 5)]:
            res = train_benchmark(single_model, x, size, desk_dm(), p)
            cells = overlapping_cells(size, single_data.patches[p][0])
            assert res.values[cells].mean() > res.values[~cells].mean()
            assert res.final_loss <= res.initial_loss


class TestCascade:
    def test_zero_depth_returns_benchmark_only(self, single_model, single_data):
        d = np.full((32, 32), 0.5)
        entries = train_cascade(single_model, single_data.images[0], d, 2, desk_dm(), 0)
        assert len(entries) == 1 and entries[0].k == 0
        np.testing.assert_array_equal(entries[0].grid, d)

    def test_shapes_follow_scale_powers(self, single_model, single_data):
        d = np.full((4, 4), 0.5)
        entries = train_cascade(single_model, single_data.images[0], d, 2, desk_dm(epochs=5), 0)
        assert [e.grid.shape for e in entries] == [(4, 4), (8, 8), (16, 16), (32, 32)]

    def test_zero_predecessor_decays_monotonically(self, single_model, single_data):
        d = np.zeros((8, 8))
        entries = train_cascade(single_model, single_data.images[0], d, 2, desk_dm(epochs=30), 0)
        child = entries[1]
        assert child.grid.max() < 0.5
        assert np.all(np.diff(child.trace) <= 0)

    def test_predecessor_frozen_and_participating(self, single_model, single_data):
        x = single_data.images[0]
        d = np.random.default_rng(0).uniform(0.2, 0.8, size=(4, 4))
        before = d.copy()
        train_cascade(single_model, x, d, 2, desk_dm(epochs=10), 0)
        np.testing.assert_array_equal(d, before)
        c = np.full((8, 8), 0.5)
        l1 = loss_and_gradient(single_model, x, c, GuidedChain(d), 100.0, 0)[0].total
        l2 = loss_and_gradient(single_model, x, c, GuidedChain(d * 0.5), 100.0, 0)[0].total
        assert l1 != l2

    def test_level_one_gradient_matches_finite_differences(self, single_model, single_data):
        x = single_data.images[0]
        ref = reference_score(single_model, x, 0)
        pred = np.random.default_rng(2).uniform(0.2, 0.8, size=(4, 4))
        c = np.random.default_rng(3).uniform(0.2, 0.8, size=(8, 8))
        chain = GuidedChain(pred)
        _, g = loss_and_gradient(single_model, x, c, chain, 100.0, 0, ref)
        fd = central_difference(lambda v: loss_and_gradient(single_model, x, v, chain, 100.0, 0, ref)[0].total, c, 1e-4)
        assert normwise_relative_error(g, fd) < 1e-4


class TestStack:
    def test_single_full_resolution_entry(self, rng):
        g = rng.uniform(size=(6, 6))
        np.testing.assert_array_equal(stack_masks([CascadeEntry(0, 0, 0, g)], 6, 6), g)

    def test_linearity_on_constants(self):
        e = [CascadeEntry(0, 0, 0, np.full((2, 2), 0.2)), CascadeEntry(1, 0, 0, np.full((4, 4), 0.3))]
        np.testing.assert_allclose(stack_masks(e, 8, 8), np.full((8, 8), 0.5), atol=1e-15)

    def test_full_cascade_matches_oracle(self, single_model, single_data):
        res = run_dm(single_model, single_data.images[5], desk_dm(epochs=15))
        expected = sum_of_upsamples([e.grid for e in res.cascade], 32, 32)
        np.testing.assert_allclose(res.stacked_mask, expected, atol=1e-6)

    def test_chained_mode_multiplies_down_the_chain(self):
        d = np.full((2, 2), 0.5)
        c1 = np.full((4, 4), 0.4)
        e = [CascadeEntry(0, 0, 0, d), CascadeEntry(0, 0, 1, c1)]
        np.testing.assert_allclose(stack_masks(e, 4, 4, "chained"), np.full((4, 4), 0.5 + 0.2))

    def test_empty(self):
        with pytest.raises(ConfigError):
            stack_masks([], 4, 4)


class TestThreshold:
    # golden cases fixed with the nearest-rank oracle: the top ceil(q*n) values
    # stay positive, everything else is zero, and the maximum becomes one
    GOLDEN = [
        ([0.0, 1.0, 2.0, 3.0], 0.25, [0.0, 0.0, 0.0, 1.0]),
        ([0.0, 1.0, 2.0, 3.0], 0.5, [0.0, 0.0, 0.5, 1.0]),
        ([3.0, 0.0, 2.0, 1.0, 4.0, 5.0, 6.0, 7.0], 0.25, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 1.0]),
        ([1.0, 1.0, 1.0, 5.0], 0.5, [0.0, 0.0, 0.0, 1.0]),
    ]

    @pytest.mark.parametrize("stacked,q,expected", GOLDEN)
    def test_golden(self, stacked, q, expected):
        np.testing.assert_allclose(threshold_overlay(np.array(stacked), q), expected, atol=1e-15)

    def test_keep_all_is_plain_normalization(self, rng):
        m = rng.uniform(size=(6, 6))
        np.testing.assert_allclose(threshold_overlay(m, 1.0), (m - m.min()) / (m.max() - m.min()))

    def test_constant(self):
        assert not threshold_overlay(np.full((4, 4), 2.0), 0.25).any()

    @given(st.lists(st.floats(0, 100), min_size=2, max_size=64), st.floats(0.05, 0.95))
    def test_support(self, vals, q):
        m = np.array(vals)
        gamma = overlay_threshold(m, q)
        out = threshold_overlay(m, q)
        assert out.min() >= 0 and out.max() <= 1
        assert not out[m < gamma].any()
        np.testing.assert_array_equal(out > 0, m > gamma)
        n_keep = int(np.ceil(q * m.size - 1e-9))
        if len(np.unique(m)) == m.size:
            # keeping everything puts gamma at the minimum, which normalizes to zero
            assert np.count_nonzero(out) == min(n_keep, m.size - 1)


class TestRunDM:
    def test_localizes_planted_patch(self, single_model, single_data):
        for n in (0, 16, 32, 48):
            res = run_dm(single_model, single_data.images[n], desk_dm())
            fg = single_data.foreground(int(single_data.labels[n]))
            proportion = res.overlay_mask[fg].sum() / res.overlay_mask.sum()
            assert proportion >= 3 * fg.mean()

    def test_constant_model_gives_empty_overlay(self):
        model = ConstantClassifier([0.0, 2.0], (32, 32, 1))
        # the full-resolution level needs about 0.5 / (lr * eta / 1024) = 512 steps to reach zero
        res = run_dm(model, np.ones((32, 32, 1)), desk_dm(epochs=800))
        assert res.stacked_mask.max() == 0.0
        assert res.overlay_mask.max() == 0.0

    def test_deterministic(self, single_model, single_data):
        a = run_dm(single_model, single_data.images[2], desk_dm(epochs=30))
        b = run_dm(single_model, single_data.images[2], desk_dm(epochs=30))
        assert a.overlay_mask.tobytes() == b.overlay_mask.tobytes()

    def test_every_grid_improves(self, single_model, single_data):
        res = run_dm(single_model, single_data.images[9], desk_dm())
        traces = res.traces()
        assert len(traces) == 3 + 3 + 2 + 2
        for key, trace in traces.items():
            assert trace[-1] <= trace[0], key

    def test_overlay_in_unit_range(self, single_model, single_data):
        res = run_dm(single_model, single_data.images[1], desk_dm(epochs=40))
        assert res.overlay_mask.min() == 0.0 and res.overlay_mask.max() == 1.0
        assert not res.overlay_mask[res.stacked_mask < res.gamma].any()
