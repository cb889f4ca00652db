"""MFCC front-end and frequency-domain masking.

Pipeline: Hann-windowed non-centered frames -> power spectrum -> triangular
mel filterbank (HTK scale) -> log with a floor -> orthonormal DCT-II, first
``n_mfcc`` coefficients kept.  A one-second 16 kHz clip yields a 98x40
matrix.  Masking zeroes contiguous time or coefficient bands and never
touches anything else.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import scipy.fft

from .audio_io import Waveform
from .augment import AugmentationPolicy, select_ops
from .errors import TooShortError, ValidationError


@dataclass(frozen=True)
class FeatureConfig:
    n_mfcc: int = 40
    window_ms: int = 25
    hop_ms: int = 10
    n_mels: int = 80
    fft_size: int = 512
    sample_rate: int = 16000
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    mean_normalize: bool = False

    def __post_init__(self):
        if self.fft_size < self.window_samples:
            raise ValidationError(
                f"fft_size {self.fft_size} is smaller than the window "
                f"({self.window_samples} samples)"
            )
        if self.n_mfcc > self.n_mels:
            raise ValidationError("n_mfcc cannot exceed n_mels")
        if self.fmax > self.sample_rate / 2:
            raise ValidationError("fmax cannot exceed the Nyquist frequency")

    @property
    def window_samples(self) -> int:
        return self.window_ms * self.sample_rate // 1000

    @property
    def hop_samples(self) -> int:
        return self.hop_ms * self.sample_rate // 1000

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def fingerprint(self) -> str:
        """Stable hash of every knob that affects feature values."""
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class MaskSpec:
    max_time_mask_frames: int = 20
    max_freq_mask_bins: int = 8
    n_time_masks: int = 1
    n_freq_masks: int = 1

    def __post_init__(self):
        if min(
            self.max_time_mask_frames,
            self.max_freq_mask_bins,
            self.n_time_masks,
            self.n_freq_masks,
        ) < 0:
            raise ValidationError("mask spec fields must be non-negative")


@dataclass(frozen=True)
class FeatureMatrix:
    """frames x coefficients array plus the config fingerprint it came from."""

    data: np.ndarray
    fingerprint: str

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("feature matrix contains non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.data.shape[1]


def frame_count(n_samples: int, config: FeatureConfig) -> int:
    """1 + floor((|x| - window) / hop) for |x| >= window."""
    if n_samples < config.window_samples:
        raise TooShortError(
            f"need at least {config.window_samples} samples, got {n_samples}"
        )
    return 1 + (n_samples - config.window_samples) // config.hop_samples


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def _as_samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)


def stft(x, config: FeatureConfig) -> np.ndarray:
    """Complex spectrogram, shape (frames, fft_size // 2 + 1).

    Non-centered framing: the first frame starts at sample 0 and trailing
    samples that do not fill a window are dropped.
    """
    samples = _as_samples(x)
    win = config.window_samples
    hop = config.hop_samples
    n = frame_count(samples.shape[0], config)
    frames = np.lib.stride_tricks.sliding_window_view(samples, win)[:: hop][:n]
    return np.fft.rfft(frames * hann_window(win), n=config.fft_size, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """Triangular filters, shape (n_mels, fft_size // 2 + 1).

    Centers are equally spaced on the HTK mel scale between fmin and fmax;
    triangles are evaluated at the FFT bin frequencies and not area
    normalized.
    """
    n_bins = config.fft_size // 2 + 1
    bin_freqs = np.arange(n_bins) * config.sample_rate / config.fft_size
    points = mel_to_hz(
        np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)
    )
    fb = np.zeros((config.n_mels, n_bins))
    for j in range(config.n_mels):
        left, center, right = points[j], points[j + 1], points[j + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        fb[j] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mfcc(x, config: FeatureConfig | None = None) -> FeatureMatrix:
    """Mel-frequency cepstral coefficients of a waveform."""
    config = config or FeatureConfig()
    spec = stft(x, config)
    power = np.abs(spec) ** 2
    mel_energy = power @ mel_filterbank(config).T
    log_mel = np.log(np.maximum(mel_energy, config.log_floor))
    cep = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)[:, : config.n_mfcc]
    if config.mean_normalize:
        cep = cep - cep.mean(axis=0, keepdims=True)
    return FeatureMatrix(data=cep, fingerprint=config.fingerprint())


# --------------------------------------------------------------------------
# Feature-space masking
# --------------------------------------------------------------------------


def time_mask(data: np.ndarray, offset: int, width: int) -> np.ndarray:
    """Zero ``width`` consecutive frames starting at ``offset``."""
    out = data.copy()
    out[offset : offset + width, :] = 0.0
    return out


def freq_mask(data: np.ndarray, offset: int, width: int) -> np.ndarray:
    """Zero ``width`` consecutive coefficient columns starting at ``offset``."""
    out = data.copy()
    out[:, offset : offset + width] = 0.0
    return out


def apply_freq_augment(
    feat: FeatureMatrix,
    mask: MaskSpec,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
) -> FeatureMatrix:
    """Scheduled SpecAugment-style masking over a feature matrix.

    Each selected mask op zeroes ``n_*_masks`` bands of width w ~ U{0..max}
    at offset ~ U{0..dim-w}; widths are clamped to the matrix dimensions.
    Unmasked entries are returned bit-identical.
    """
    if mask.max_freq_mask_bins > feat.n_coeffs:
        raise ValidationError(
            f"max_freq_mask_bins {mask.max_freq_mask_bins} exceeds "
            f"{feat.n_coeffs} coefficients"
        )
    policy.consultations += 1
    selected = select_ops(policy.freq_ops, policy.gamma_rate, rng)
    data = feat.data
    for op in selected:
        if op == "time_mask":
            for _ in range(mask.n_time_masks):
                width = min(int(rng.integers(0, mask.max_time_mask_frames + 1)), feat.n_frames)
                offset = int(rng.integers(0, feat.n_frames - width + 1))
                data = time_mask(data, offset, width)
        elif op == "freq_mask":
            for _ in range(mask.n_freq_masks):
                width = int(rng.integers(0, mask.max_freq_mask_bins + 1))
                offset = int(rng.integers(0, feat.n_coeffs - width + 1))
                data = freq_mask(data, offset, width)
    return FeatureMatrix(data=data, fingerprint=feat.fingerprint)


# --------------------------------------------------------------------------
# Flat feature dump (for external oracle cross-checks)
# --------------------------------------------------------------------------


def dump_features(path, feat: FeatureMatrix) -> None:
    """One-line JSON header (shape + fingerprint) then raw float32 LE."""
    header = json.dumps(
        {"shape": list(feat.data.shape), "fingerprint": feat.fingerprint, "dtype": "<f4"},
        sort_keys=True,
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(feat.data.astype("<f4").tobytes())


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    data = np.frombuffer(raw[newline + 1 :], dtype="<f4").reshape(header["shape"])
    return FeatureMatrix(data=data.astype(np.float64), fingerprint=header["fingerprint"])
