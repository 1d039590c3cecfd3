import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multistroke.data import make_dataset
from multistroke.diagnostics import (SNR_CAP_DB, BandMask, ClassCalibration, band_snr, dft2, dft2_logmag,
                                     grayscale, mean_one_class_score, one_class_score, pooled_features,
                                     radial_norm, score_from_distance)


def dft_matrix(n):
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n)


def checkerboard(h, w):
    return (-1.0) ** np.add.outer(np.arange(h), np.arange(w))


def test_dft_matches_explicit_matrix():
    x = np.random.default_rng(0).standard_normal((6, 8))
    direct = dft_matrix(6) @ x @ dft_matrix(8).T
    np.testing.assert_allclose(np.fft.ifftshift(dft2(x)), direct, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(-1e3, 1e3)))
def test_parseval(x):
    lhs = np.sum(np.abs(dft2(x)) ** 2)
    rhs = x.size * np.sum(x**2)
    assert abs(lhs - rhs) <= 1e-10 * max(rhs, 1e-300)


def test_constant_image_logmag():
    lm = dft2_logmag(np.full((8, 8), 2.0))
    assert lm[4, 4] == pytest.approx(np.log1p(128.0))
    off = np.delete(lm.ravel(), 4 * 8 + 4)
    assert np.max(off) < 1e-12


def test_cosine_gives_two_symmetric_peaks():
    n = np.arange(8)
    x = np.tile(np.cos(2 * np.pi * 2 * n / 8), (8, 1))
    mag = np.abs(dft2(x))
    peaks = np.argwhere(mag > 1e-9)
    assert sorted(map(tuple, peaks)) == [(4, 2), (4, 6)]
    assert mag[4, 2] == pytest.approx(mag[4, 6])


def test_band_masks():
    r = radial_norm(8, 8)
    assert r[4, 4] == 0.0 and r.max() == 1.0
    low = BandMask.make("low", 8, 8).mask
    high = BandMask.make("high", 8, 8).mask
    assert low[4, 4] and not np.any(low & high)
    assert high[0, 0]
    with pytest.raises(ValueError):
        BandMask.make("mid", 8, 8)


def test_grayscale_examples():
    x = np.random.default_rng(1).standard_normal((1, 4, 4))
    np.testing.assert_array_equal(grayscale(x), x[0])
    np.testing.assert_allclose(grayscale(np.repeat(x, 3, axis=0)), x[0], rtol=1e-15, atol=1e-16)
    two = np.stack([np.zeros((4, 4)), np.ones((4, 4))])
    np.testing.assert_array_equal(grayscale(two), np.full((4, 4), 0.5))


@pytest.fixture
def snr_setup():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal((8, 8))
    gen = ref + 0.3 * rng.standard_normal((20, 8, 8))
    return ref, gen, BandMask.make("low", 8, 8), BandMask.make("high", 8, 8)


def test_band_snr_zero_deviation_is_capped(snr_setup):
    ref, _, low, _ = snr_setup
    assert band_snr(ref[None], ref, low) == SNR_CAP_DB
    assert band_snr(ref, ref, low) == SNR_CAP_DB


def test_checkerboard_hits_high_band_only(snr_setup):
    ref, gen, low, high = snr_setup
    bumped = gen + 0.5 * checkerboard(8, 8)
    assert band_snr(gen, ref, high) - band_snr(bumped, ref, high) > 3.0
    assert abs(band_snr(gen, ref, low) - band_snr(bumped, ref, low)) < 0.1


def test_doubling_deviation_costs_six_db(snr_setup):
    ref, gen, low, high = snr_setup
    doubled = ref + 2 * (gen - ref)
    for band in (low, high):
        assert band_snr(gen, ref, band) - band_snr(doubled, ref, band) == pytest.approx(20 * np.log10(2), abs=1e-6)


def test_band_snr_depends_on_deviation_only(snr_setup):
    ref, gen, _, high = snr_setup
    shift = np.random.default_rng(3).standard_normal((8, 8))
    noise_a = np.abs(dft2(gen - ref))[..., high.mask]
    noise_b = np.abs(dft2((gen + shift) - (ref + shift)))[..., high.mask]
    np.testing.assert_allclose(noise_a, noise_b, atol=1e-12)


def test_band_snr_errors(snr_setup):
    ref, gen, low, _ = snr_setup
    with pytest.raises(ValueError):
        band_snr(np.empty((0, 8, 8)), ref, low)
    with pytest.raises(ValueError):
        band_snr(gen[:, :4], ref, low)
    with pytest.raises(ValueError):
        band_snr(np.zeros((2, 4, 4)), np.zeros((4, 4)), low)


def test_band_snr_on_channel_images():
    rng = np.random.default_rng(4)
    ref = rng.standard_normal((3, 8, 8))
    gen = ref + 0.1 * rng.standard_normal((5, 3, 8, 8))
    band = BandMask.make("low", 8, 8)
    assert band_snr(gen, ref, band) == pytest.approx(band_snr(grayscale(gen), grayscale(ref), band))


@pytest.fixture(scope="module")
def calib():
    x, y = make_dataset(800, seed=0)
    return ClassCalibration.fit(x[:400], y[:400], x[400:], y[400:])


def test_calibration_tables(calib):
    assert sorted(calib.tables) == [1, 2, 3, 4]
    for table in calib.tables.values():
        assert np.all(np.diff(table) >= 0)


def test_score_extremes(calib):
    table = calib.tables[1]
    assert score_from_distance(-1.0, 1, calib) == 1.0
    assert score_from_distance(table[-1] + 1, 1, calib) == 0.0
    with pytest.raises(KeyError):
        one_class_score(np.zeros((1, 8, 8)), 9, calib)


def test_score_at_median_of_distinct_table():
    cal = ClassCalibration({1: np.zeros(2)}, {1: np.arange(1.0, 102.0)})
    assert score_from_distance(51.0, 1, cal) == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 100), min_size=1, max_size=30), st.integers(0, 100))
def test_score_invariant_to_monotone_transform(dists, d):
    # integer distances keep the transform strictly monotone in floating point
    table = np.sort(np.array(dists, dtype=np.float64))
    a = ClassCalibration({1: np.zeros(1)}, {1: table})
    b = ClassCalibration({1: np.zeros(1)}, {1: np.sort(np.exp(table / 10) + table**3)})
    assert score_from_distance(d, 1, a) == score_from_distance(np.exp(d / 10) + d**3, 1, b)


def test_held_out_mean_score(calib):
    xh, yh = make_dataset(800, seed=1)
    assert abs(mean_one_class_score(xh, yh, calib) / 100 - 0.5) <= 0.05


def test_pooled_features_shape():
    x = np.random.default_rng(5).standard_normal((4, 3, 8, 8))
    assert pooled_features(x).shape == (4, 48)
    assert pooled_features(x[0]).shape == (48,)
