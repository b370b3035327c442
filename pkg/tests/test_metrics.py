import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdmask.errors import ConfigError, InputError
from hdmask.gateway import PreparedImage
from hdmask.metrics import (
    aggregate,
    average_drop,
    average_increase,
    deletion_insertion,
    energy_proportion,
    evaluate_image,
    mute_below_percentile,
    trapezoid_auc,
)
from hdmask.saliency_io import SaliencyRecord
from hdmask.testbed import ConstantClassifier


class Recorder:
    """Constant scores; remembers every input it was shown."""

    num_classes = 2

    def __init__(self, shape):
        self.input_shape = shape
        self.seen = []

    def scores(self, x):
        self.seen.append(np.array(x))
        return np.array([1.0, 0.0])


class TestDrop:
    def test_half(self):
        assert average_drop([1.0], [0.5]) == 50.0

    def test_clamped(self):
        assert average_drop([0.3, 0.5], [0.4, 0.9]) == 0.0

    def test_two_images(self):
        assert average_drop([0.8, 0.4], [0.4, 0.4]) == 25.0

    def test_empty(self):
        with pytest.raises(InputError):
            average_drop([], [])

    def test_nonpositive_original(self):
        with pytest.raises(InputError):
            average_drop([0.0], [0.1])

    @given(st.lists(st.tuples(st.floats(0.01, 1), st.floats(0, 1)), min_size=1, max_size=20), st.randoms())
    def test_order_invariant(self, pairs, rnd):
        shuffled = pairs[:]
        rnd.shuffle(shuffled)
        a = average_drop(*zip(*pairs))
        b = average_drop(*zip(*shuffled))
        assert a == pytest.approx(b, rel=1e-12)
        assert average_increase(*zip(*pairs)) == average_increase(*zip(*shuffled))


class TestIncrease:
    def test_half(self):
        assert average_increase([0.2, 0.4], [0.3, 0.1]) == 0.5

    def test_strict(self):
        assert average_increase([0.2, 0.4], [0.2, 0.4]) == 0.0

    def test_all(self):
        assert average_increase([0.2, 0.4], [0.3, 0.5]) == 1.0


class TestMute:
    def test_keeps_top_pixel(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        s = np.array([[0.1, 0.2], [0.3, 0.4]])
        out = mute_below_percentile(x, s, 0.25)
        np.testing.assert_array_equal(out[:, :, 0], [[0, 0], [0, 4.0]])

    def test_keep_all(self, rng):
        x = rng.uniform(size=(4, 4, 3))
        np.testing.assert_array_equal(mute_below_percentile(x, rng.uniform(size=(4, 4)), 1.0), x)

    def test_uniform_saliency_keeps_all(self, rng):
        x = rng.uniform(size=(4, 4, 1))
        np.testing.assert_array_equal(mute_below_percentile(x, np.ones((4, 4)), 0.2), x)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
    def test_keep_count_for_distinct_saliency(self, seed, frac):
        r = np.random.default_rng(seed)
        s = r.permutation(64).reshape(8, 8).astype(float)
        out = mute_below_percentile(np.ones((8, 8, 1)), s, frac)
        assert int(out.sum()) == int(np.ceil(frac * 64 - 1e-9))

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            mute_below_percentile(np.ones((2, 2, 1)), np.ones((2, 2)), 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            mute_below_percentile(np.ones((2, 2, 1)), np.ones((3, 3)), 0.5)


class TestCurves:
    @pytest.mark.parametrize("c", [0.1, 0.37, 0.9])
    @pytest.mark.parametrize("mode", ["deletion", "insertion"])
    def test_constant_probability(self, c, mode, rng):
        model = ConstantClassifier([np.log(c), np.log(1 - c)], (6, 6, 1))
        curve, auc = deletion_insertion(model, rng.uniform(size=(6, 6, 1)), rng.uniform(size=(6, 6)), mode, 0)
        assert auc == pytest.approx(c, abs=1e-6)
        assert curve.fractions.shape == curve.probabilities.shape == (101,)

    def test_endpoints(self, rng):
        x = rng.uniform(0.1, 1.0, size=(5, 7, 3))
        s = rng.uniform(size=(5, 7))
        rec = Recorder((5, 7, 3))
        deletion_insertion(rec, x, s, "deletion", 0)
        np.testing.assert_array_equal(rec.seen[0], x)
        assert not rec.seen[-1].any()
        rec = Recorder((5, 7, 3))
        deletion_insertion(rec, x, s, "insertion", 0)
        np.testing.assert_array_equal(rec.seen[0], np.ones_like(x))
        np.testing.assert_array_equal(rec.seen[-1], x)

    def test_deletion_order_follows_saliency(self):
        x = np.ones((10, 10, 1))
        s = np.arange(100.0).reshape(10, 10)
        rec = Recorder((10, 10, 1))
        deletion_insertion(rec, x, s, "deletion", 0)
        # after one step the single most salient pixel (the last one) is gone
        assert rec.seen[1][9, 9, 0] == 0 and rec.seen[1].sum() == 99

    def test_ties_row_major(self):
        rec = Recorder((10, 10, 1))
        deletion_insertion(rec, np.ones((10, 10, 1)), np.zeros((10, 10)), "deletion", 0)
        assert rec.seen[1][0, 0, 0] == 0 and rec.seen[1].sum() == 99

    def test_oracle_patch_orders_curves(self, single_model, single_data):
        for n in (0, 16, 32, 48):
            p = int(single_data.labels[n])
            s = single_data.foreground(p).astype(float)
            _, d = deletion_insertion(single_model, single_data.images[n], s, "deletion", p)
            _, i = deletion_insertion(single_model, single_data.images[n], s, "insertion", p)
            assert d < i
            assert 0 <= d <= 1 and 0 <= i <= 1

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            deletion_insertion(Recorder((2, 2, 1)), np.ones((2, 2, 1)), np.ones((2, 2)), "blur", 0)

    def test_trapezoid(self):
        assert trapezoid_auc([0, 0.5, 1], [0, 1, 0]) == 0.5


class TestProportion:
    def test_inside(self):
        fg = np.zeros((4, 4), bool)
        fg[:2] = True
        s = np.zeros((4, 4))
        s[0, 1] = 3
        assert energy_proportion(s, fg) == 1.0

    def test_uniform_quarter(self):
        fg = np.zeros((4, 4), bool)
        fg[:2, :2] = True
        assert energy_proportion(np.ones((4, 4)), fg) == 0.25

    def test_zero_total(self):
        assert energy_proportion(np.zeros((3, 3)), np.ones((3, 3))) == 0.0

    def test_mismatch(self):
        with pytest.raises(InputError):
            energy_proportion(np.ones((3, 3)), np.ones((4, 4)))

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    def test_scale_invariant(self, seed, k):
        r = np.random.default_rng(seed)
        s = r.uniform(size=(5, 5))
        fg = r.uniform(size=(5, 5)) > 0.5
        a = energy_proportion(s, fg)
        assert 0 <= a <= 1
        assert energy_proportion(k * s, fg) == pytest.approx(a, rel=1e-12, abs=1e-15)


class TestEvaluateImage:
    def test_keys(self, single_model, single_data):
        x = PreparedImage(single_data.images[0], (32, 32), (0.0,), (1.0,))
        p = int(single_data.labels[0])
        rec = SaliencyRecord(single_data.foreground(p).astype(float), target=p)
        out = evaluate_image(single_model, x, rec, foreground=single_data.foreground(p))
        assert set(out) == {"class", "Y", "O_80", "O_70", "drop_80", "drop_70", "increase_80",
                            "increase_70", "deletion", "insertion", "proportion"}
        assert out["proportion"] == 1.0
        assert out["drop_80"] == pytest.approx(average_drop([out["Y"]], [out["O_80"]]))

    def test_proportion_needs_foreground(self, single_model, single_data):
        x = PreparedImage(single_data.images[0], (32, 32), (0.0,), (1.0,))
        out = evaluate_image(single_model, x, SaliencyRecord(np.ones((32, 32))), metrics=("proportion",))
        assert "proportion" not in out

    def test_unknown_metric(self, single_model, single_data):
        x = PreparedImage(single_data.images[0], (32, 32), (0.0,), (1.0,))
        with pytest.raises(ConfigError):
            evaluate_image(single_model, x, SaliencyRecord(np.ones((32, 32))), metrics=("iou",))


def test_aggregate_uses_raw_pairs():
    recs = [
        {"Y": 0.8, "O_80": 0.4, "drop_80": 50.0, "increase_80": 0.0, "deletion": 0.2},
        {"Y": 0.4, "O_80": 0.4, "drop_80": 0.0, "increase_80": 0.0, "deletion": 0.4},
    ]
    agg = aggregate(recs)
    assert agg["count"] == 2 and agg["type"] == "aggregate"
    assert agg["drop_80"] == 25.0
    assert agg["increase_80"] == 0.0
    assert agg["deletion"] == pytest.approx(0.3)
    json.dumps(agg)
