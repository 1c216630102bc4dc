import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dssdn.augment import (
    MixupConfig,
    SpecAugmentConfig,
    SpectrumCorrector,
    apply_correction,
    correct_log_mel,
    device_mean_spectra,
    fit_spectrum_corrector,
    mixup,
    mixup_batch,
    spec_augment,
)
from dssdn.errors import ConfigurationError, DimensionError, ValidationError


def one_hot(k, n=10):
    y = np.zeros(n)
    y[k] = 1.0
    return y


class TestMixup:
    def test_lambda_one_returns_first(self):
        x_i, x_j = np.arange(6.0).reshape(2, 3), np.ones((2, 3))
        xm, ym = mixup(x_i, x_j, one_hot(1), one_hot(2), lam=1.0)
        np.testing.assert_array_equal(xm, x_i)
        np.testing.assert_array_equal(ym, one_hot(1))

    def test_midpoint(self):
        xm, ym = mixup(np.zeros((3, 4)), np.full((3, 4), 2.0), one_hot(0), one_hot(1), lam=0.5)
        np.testing.assert_array_equal(xm, np.ones((3, 4)))
        assert ym[0] == ym[1] == 0.5

    def test_convex_and_label_sum_over_1000_draws(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            x_i, x_j = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
            y_i, y_j = rng.dirichlet(np.ones(10)), one_hot(int(rng.integers(10)))
            xm, ym = mixup(x_i, x_j, y_i, y_j, rng)
            assert np.all(xm >= np.minimum(x_i, x_j) - 1e-12)
            assert np.all(xm <= np.maximum(x_i, x_j) + 1e-12)
            assert abs(ym.sum() - 1.0) <= 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mixup(np.zeros((2, 3)), np.zeros((3, 2)), one_hot(0), one_hot(1), lam=0.3)

    def test_needs_rng_or_lambda(self):
        with pytest.raises(ValidationError):
            mixup(np.zeros(2), np.zeros(2), one_hot(0), one_hot(1))

    def test_batch_rows_remain_distributions(self):
        rng = np.random.default_rng(1)
        y = np.eye(10)[rng.integers(0, 10, 16)]
        _, ym = mixup_batch(rng.standard_normal((16, 4, 4)), y, rng)
        np.testing.assert_allclose(ym.sum(axis=1), 1.0, atol=1e-12)

    def test_schedule(self):
        cfg = MixupConfig()
        assert [cfg.probability(e, 10) for e in (0, 4, 5, 9)] == [1.0, 1.0, 0.5, 0.5]
        assert MixupConfig(enabled=False).probability(0, 10) == 0.0

    def test_alpha_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            MixupConfig(alpha=0)


class TestSpecAugment:
    def test_zero_width_is_identity(self):
        x = np.random.default_rng(0).standard_normal((20, 16))
        np.testing.assert_array_equal(spec_augment(x, SpecAugmentConfig(max_mask_width=0), np.random.default_rng(1)), x)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t=st.integers(5, 30), m=st.integers(5, 30))
    def test_changed_rows_and_columns_bounded(self, seed, t, m):
        x = np.random.default_rng(seed).standard_normal((t, m)) + 5.0
        out = spec_augment(x, SpecAugmentConfig(), np.random.default_rng(seed + 1))
        diff = out != x
        full_rows = np.all(diff, axis=1).sum()
        full_cols = np.all(diff, axis=0).sum()
        assert full_rows <= 4 and full_cols <= 4
        assert diff.sum() <= 4 * m + 4 * t
        # every changed cell lies in a fully masked row or column
        masked = np.all(diff, axis=1)[:, None] | np.all(diff, axis=0)[None, :]
        assert np.all(masked[diff])

    def test_fill_is_input_mean(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((30, 20))
        mean = float(np.sum(x) / x.size)
        for s in range(20):
            out = spec_augment(x, SpecAugmentConfig(), np.random.default_rng(s))
            changed = out != x
            if changed.any():
                np.testing.assert_allclose(out[changed], mean, atol=1e-6)

    def test_widths_cover_zero_to_two(self):
        widths = set()
        x = np.arange(100.0).reshape(10, 10)
        for s in range(200):
            out = spec_augment(x, SpecAugmentConfig(n_time_masks=1, n_freq_masks=0), np.random.default_rng(s))
            widths.add(int(np.any(out != x, axis=1).sum()))
        assert widths == {0, 1, 2}

    def test_rejects_wrong_rank(self):
        with pytest.raises(DimensionError):
            spec_augment(np.zeros((2, 3, 4)), SpecAugmentConfig(), np.random.default_rng(0))


class TestSpectrumCorrection:
    def test_identical_devices_all_ones(self):
        spec = np.linspace(1, 2, 8)
        c = fit_spectrum_corrector({"a": spec, "b": spec, "c": spec})
        np.testing.assert_allclose(c.correction, 1.0)

    def test_arithmetic(self):
        c = fit_spectrum_corrector({"a": np.full(4, 3.0), "b": np.full(4, 2.0), "c": np.full(4, 4.0)})
        np.testing.assert_allclose(c.reference_spectrum, 3.0)
        np.testing.assert_allclose(c.correction, 1.0)

    def test_device_a_mean_maps_to_reference(self):
        rng = np.random.default_rng(0)
        means = {d: rng.uniform(0.1, 5, 16) for d in "abc"}
        c = fit_spectrum_corrector(means)
        np.testing.assert_allclose(apply_correction(means["a"][None, :], c)[0], c.reference_spectrum, rtol=1e-12)

    def test_needs_other_devices(self):
        with pytest.raises(ConfigurationError):
            fit_spectrum_corrector({"a": np.ones(3)})

    def test_ones_is_identity(self):
        c = SpectrumCorrector(np.ones(5), np.ones(5))
        x = np.random.default_rng(0).uniform(0, 3, (7, 5))
        np.testing.assert_array_equal(apply_correction(x, c), x)

    def test_constant_input_scaled_per_bin(self):
        c = SpectrumCorrector(np.array([1.0, 2.0, 3.0]), np.ones(3))
        np.testing.assert_allclose(apply_correction(np.ones((4, 3)), c), np.tile([1.0, 2.0, 3.0], (4, 1)))

    def test_invertible(self):
        rng = np.random.default_rng(1)
        c = SpectrumCorrector(rng.uniform(0.5, 2, 6), rng.uniform(0.5, 2, 6))
        x = rng.uniform(0, 4, (5, 6))
        np.testing.assert_allclose(apply_correction(x, c) / c.correction, x, rtol=1e-14)

    def test_rejects_log_domain_input(self):
        c = SpectrumCorrector(np.ones(3), np.ones(3))
        with pytest.raises(ValidationError):
            apply_correction(np.full((2, 3), -5.0), c)

    def test_corpus_mean_matches_reference(self):
        rng = np.random.default_rng(2)
        gains = {"a": rng.uniform(0.5, 2.0, 12), "b": rng.uniform(0.5, 2.0, 12), "c": rng.uniform(0.5, 2.0, 12)}
        specs, devices = [], []
        for i in range(60):
            d = "abc"[i % 3]
            specs.append(np.log(gains[d] * rng.uniform(0.2, 3.0, (20, 12))))
            devices.append(d)
        c = fit_spectrum_corrector(device_mean_spectra(specs, devices))
        corrected = [np.exp(correct_log_mel(s, c)) for s, d in zip(specs, devices) if d == "a"]
        corpus_mean = np.concatenate(corrected).mean(axis=0)
        np.testing.assert_allclose(corpus_mean, c.reference_spectrum, rtol=1e-4)
