"""MFCC front-end geometry, closed-form values, and masking."""

import numpy as np
import pytest
import scipy.fft

from cmdspot.audio_io import Waveform
from cmdspot.augment import AugmentationPolicy
from cmdspot.errors import TooShortError, ValidationError
from cmdspot.features import (
    FeatureConfig,
    FeatureMatrix,
    MaskSpec,
    apply_freq_augment,
    dump_features,
    frame_count,
    freq_mask,
    load_features,
    mel_filterbank,
    mfcc,
    stft,
    time_mask,
)
from cmdspot.rng import derive_rng

CFG = FeatureConfig()


def wave(samples):
    return Waveform(samples=np.asarray(samples, dtype=np.float64), sample_rate=16000)


def sine(freq, n=16000, amp=0.5):
    t = np.arange(n) / 16000
    return wave(amp * np.sin(2 * np.pi * freq * t))


class TestStft:
    def test_one_second_gives_98_frames(self):
        assert frame_count(16000, CFG) == 1 + (16000 - 400) // 160 == 98
        assert stft(sine(440), CFG).shape == (98, 257)

    def test_frame_count_formula_across_lengths(self):
        """Frame geometry matches a brute-force frame counter."""
        rng = np.random.default_rng(0)
        for n in sorted(rng.integers(400, 32001, size=40)) + [400, 401, 559, 560, 32000]:
            brute = 0
            start = 0
            while start + 400 <= n:
                brute += 1
                start += 160
            assert frame_count(int(n), CFG) == brute
            assert stft(wave(np.zeros(int(n))), CFG).shape[0] == brute

    def test_zero_input_gives_zero_spectrogram(self):
        spec = stft(wave(np.zeros(16000)), CFG)
        assert np.abs(spec).max() == 0.0

    def test_sine_peaks_at_expected_bin(self):
        """1 kHz at 16 kHz with a 512 FFT peaks at bin 1000*512/16000 = 32."""
        mags = np.abs(stft(sine(1000), CFG))
        assert np.all(mags.argmax(axis=1) == 32)

    def test_too_short_rejected(self):
        with pytest.raises(TooShortError):
            stft(wave(np.zeros(399)), CFG)


class TestMelFilterbank:
    def test_shape_and_positivity(self):
        fb = mel_filterbank(CFG)
        assert fb.shape == (80, 257)
        assert fb.min() >= 0.0
        assert np.all(fb.sum(axis=1) > 0.0)

    def test_centers_monotone(self):
        fb = mel_filterbank(CFG)
        centers = fb.argmax(axis=1)
        assert np.all(np.diff(centers) >= 0)

    def test_column_coverage_between_first_and_last_center(self):
        fb = mel_filterbank(CFG)
        first = int(fb[0].argmax())
        last = int(fb[-1].argmax())
        covered = fb.sum(axis=0) > 0
        assert covered[first : last + 1].all()


class TestMfcc:
    def test_one_second_shape(self):
        feat = mfcc(sine(700), CFG)
        assert (feat.n_frames, feat.n_coeffs) == (98, 40)

    def test_silence_closed_form(self):
        """Zero input: every frame equals the DCT of the constant log floor.

        Orthonormal DCT-II of a constant vector c over n bins puts
        c * sqrt(n) in coefficient 0 and zero elsewhere.
        """
        feat = mfcc(wave(np.zeros(16000)), CFG)
        c0 = np.sqrt(80.0) * np.log(1e-10)
        np.testing.assert_allclose(feat.data[:, 0], c0, atol=1e-9)
        np.testing.assert_allclose(feat.data[:, 1:], 0.0, atol=1e-9)
        assert np.all(feat.data == feat.data[0])

    def test_gain_shifts_only_coefficient_zero(self):
        """Doubling a broadband signal adds sqrt(1/80)*80*log(4) to c0 only."""
        rng = np.random.default_rng(7)
        x = wave(0.1 * rng.standard_normal(16000))
        base = mfcc(x, CFG).data
        loud = mfcc(wave(2.0 * x.samples), CFG).data
        shift = np.sqrt(1.0 / 80.0) * 80.0 * np.log(4.0)
        np.testing.assert_allclose(loud[:, 0] - base[:, 0], shift, atol=1e-9)
        np.testing.assert_allclose(loud[:, 1:], base[:, 1:], atol=1e-9)

    def test_dct_orthonormality(self):
        """The 80x80 DCT-II matrix satisfies M^T M = I."""
        m = scipy.fft.dct(np.eye(80), type=2, norm="ortho", axis=0)
        np.testing.assert_allclose(m.T @ m, np.eye(80), atol=1e-10)

    def test_finite_for_any_finite_input(self):
        rng = np.random.default_rng(1)
        for x in (np.zeros(500), rng.uniform(-1, 1, 500), 100 * rng.standard_normal(500)):
            assert np.isfinite(mfcc(wave(x), CFG).data).all()

    def test_mean_normalization_flag(self):
        cfg = FeatureConfig(mean_normalize=True)
        feat = mfcc(sine(500), cfg)
        np.testing.assert_allclose(feat.data.mean(axis=0), 0.0, atol=1e-9)

    def test_fingerprint_tracks_config(self):
        assert FeatureConfig().fingerprint() == CFG.fingerprint()
        assert FeatureConfig(n_mels=60).fingerprint() != CFG.fingerprint()
        assert mfcc(sine(500), CFG).fingerprint == CFG.fingerprint()

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            FeatureConfig(fft_size=256)  # smaller than the 400-sample window
        with pytest.raises(ValidationError):
            FeatureConfig(n_mfcc=100)
        with pytest.raises(ValidationError):
            FeatureConfig(fmax=9000.0)


class TestMasking:
    def _feat(self):
        rng = np.random.default_rng(3)
        return FeatureMatrix(data=rng.standard_normal((98, 40)), fingerprint=CFG.fingerprint())

    def test_rate_one_is_identity(self):
        feat = self._feat()
        policy = AugmentationPolicy(gamma_rate=1.0)
        out = apply_freq_augment(feat, MaskSpec(), policy, derive_rng(0, "m"))
        assert np.array_equal(out.data, feat.data)

    def test_zero_width_mask_is_identity(self):
        feat = self._feat()
        assert np.array_equal(time_mask(feat.data, 10, 0), feat.data)
        assert np.array_equal(freq_mask(feat.data, 10, 0), feat.data)

    def test_forced_freq_band(self):
        """Masking coefficients 5..9 zeroes those columns and nothing else."""
        feat = self._feat()
        out = freq_mask(feat.data, 5, 5)
        assert np.all(out[:, 5:10] == 0.0)
        np.testing.assert_array_equal(out[:, :5], feat.data[:, :5])
        np.testing.assert_array_equal(out[:, 10:], feat.data[:, 10:])

    def test_forced_time_band(self):
        feat = self._feat()
        out = time_mask(feat.data, 90, 8)
        assert np.all(out[90:98, :] == 0.0)
        np.testing.assert_array_equal(out[:90], feat.data[:90])

    def test_masking_only_zeroes(self):
        """Every changed entry becomes zero; unchanged entries are identical."""
        feat = self._feat()
        policy = AugmentationPolicy(gamma_rate=0.0)  # both ops always selected
        rng = derive_rng(5, "mask")
        for _ in range(20):
            out = apply_freq_augment(feat, MaskSpec(), policy, rng)
            changed = out.data != feat.data
            assert np.all(out.data[changed] == 0.0)

    def test_mask_spec_validation(self):
        with pytest.raises(ValidationError):
            MaskSpec(max_time_mask_frames=-1)
        feat = self._feat()
        policy = AugmentationPolicy()
        with pytest.raises(ValidationError):
            apply_freq_augment(feat, MaskSpec(max_freq_mask_bins=41), policy, derive_rng(0, "v"))

    def test_determinism(self):
        feat = self._feat()
        policy = AugmentationPolicy(gamma_rate=0.0)
        a = apply_freq_augment(feat, MaskSpec(), policy, derive_rng(9, "d"))
        b = apply_freq_augment(feat, MaskSpec(), policy, derive_rng(9, "d"))
        assert np.array_equal(a.data, b.data)


class TestFeatureDump:
    def test_round_trip_at_declared_precision(self, tmp_path):
        feat = mfcc(sine(800), CFG)
        p = tmp_path / "feat.bin"
        dump_features(p, feat)
        back = load_features(p)
        assert back.fingerprint == feat.fingerprint
        np.testing.assert_array_equal(back.data, feat.data.astype("<f4").astype(np.float64))

    def test_header_is_one_json_line(self, tmp_path):
        import json

        feat = mfcc(sine(800), CFG)
        p = tmp_path / "feat.bin"
        dump_features(p, feat)
        header = json.loads(p.read_bytes().split(b"\n", 1)[0])
        assert header["shape"] == [98, 40]
        assert header["fingerprint"] == CFG.fingerprint()
