import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtof.spectrum import (
    azimuthal_average,
    class_mean_profiles,
    dft2_magnitude,
    power_spectrum_1d,
    profile_length,
)
from mtof.synth_gen import SynthConfig, gen_samples
from oracles import direct_dft_magnitude, loop_azimuthal


def test_constant_map_spectrum():
    spec = dft2_magnitude(np.full((6, 4), 0.25))
    expected = np.zeros((6, 4))
    expected[3, 2] = 0.25 * 24
    np.testing.assert_allclose(spec, expected, atol=1e-12)
    assert np.all(dft2_magnitude(np.zeros((4, 4))) == 0)


def test_cosine_peaks():
    x = np.cos(2 * np.pi * np.arange(8) / 8)[None, :].repeat(8, 0)
    spec = dft2_magnitude(x)
    peaks = sorted(zip(*np.nonzero(spec > 1e-9)))
    assert peaks == [(4, 3), (4, 5)]
    np.testing.assert_allclose(spec[4, 3], 32.0)


@pytest.mark.parametrize("seed", range(5))
def test_dft_matches_direct_sum(seed):
    x = np.random.default_rng(seed).random((8, 8))
    ref = direct_dft_magnitude(x)
    got = dft2_magnitude(x)
    assert np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-300)) < 1e-9


@given(st.integers(2, 20), st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_parseval(h, w, seed):
    x = np.random.default_rng(seed).random((h, w))
    lhs = np.sum(dft2_magnitude(x) ** 2)
    assert lhs == pytest.approx(h * w * np.sum(x**2), rel=1e-6)


def test_azimuthal_examples():
    assert np.all(azimuthal_average(np.full((6, 6), 3.0)) == 3.0)
    delta = np.zeros((6, 6))
    delta[3, 3] = 2.5
    assert azimuthal_average(delta).tolist() == [2.5, 0.0, 0.0]
    asym = np.arange(36, dtype=float).reshape(6, 6) ** 1.5
    assert np.array_equal(azimuthal_average(asym), loop_azimuthal(asym))


@given(st.integers(1, 32), st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_azimuthal_matches_loop_exactly(h, w, seed):
    spec = np.random.default_rng(seed).random((h, w)) * 100
    assert np.array_equal(azimuthal_average(spec), loop_azimuthal(spec))


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_azimuthal_rotation_invariant_for_symmetric_spectra(half, seed):
    x = np.random.default_rng(seed).random((2 * half, 2 * half))
    spec = dft2_magnitude(x)  # point-symmetric about the DC bin for real input
    rot = np.roll(np.rot90(spec, 2), (1, 1), axis=(0, 1))
    np.testing.assert_allclose(azimuthal_average(rot), azimuthal_average(spec), rtol=1e-12)


@given(st.integers(2, 30), st.integers(2, 30))
def test_profile_length(h, w):
    assert len(power_spectrum_1d(np.zeros((h, w)))) == profile_length(h, w) == min(h, w) // 2


def test_power_spectrum_examples():
    assert np.all(power_spectrum_1d(np.zeros((8, 8))) == 0)
    p = power_spectrum_1d(np.full((8, 8), 0.7))
    assert p[0] > 0 and np.all(p[1:] == 0)
    with pytest.raises(ValueError):
        dft2_magnitude(np.zeros((1, 5)))
    with pytest.raises(ValueError):
        dft2_magnitude(np.zeros((2, 2, 2, 2)))


def test_rgb_is_averaged():
    rgb = np.random.default_rng(0).random((8, 8, 3))
    np.testing.assert_allclose(power_spectrum_1d(rgb), power_spectrum_1d(rgb.mean(axis=2)))


def test_display_tof_has_less_high_frequency_mass():
    samples = gen_samples(SynthConfig(n_objects=3, samples_per_object=4, image_size=(32, 32), seed=1))
    profiles = np.stack([power_spectrum_1d(s.tof.values) for s in samples])
    labels = np.array([int(s.is_display) for s in samples])
    real, disp = class_mean_profiles(profiles, labels)
    assert disp[5:].mean() < real[5:].mean()
