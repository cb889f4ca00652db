"""Desk-scale synthetic corpus: one distinct tone family per command class.

Used by the verification suite and the demos to exercise the full pipeline
without the real benchmark data.  Each command gets harmonically related
tones at a class-specific fundamental; utterance variants differ in phase,
harmonic mix, and a little background noise, so the classes are cleanly
separable yet non-trivial.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import SAMPLE_RATE, LabelMap, Waveform, write_wav
from .rng import derive_rng


def tone_utterance(class_index: int, variant: int, seed: int = 0) -> Waveform:
    """One second of a class-specific harmonic tone with mild variation."""
    rng = derive_rng(seed, "toy-tone", class_index, variant)
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    f0 = 300.0 + 85.0 * class_index
    phase = rng.uniform(0.0, 2 * np.pi)
    h2 = 0.2 + 0.3 * rng.uniform()
    h3 = 0.05 + 0.15 * rng.uniform()
    signal = (
        np.sin(2 * np.pi * f0 * t + phase)
        + h2 * np.sin(2 * np.pi * 2 * f0 * t + rng.uniform(0, 2 * np.pi))
        + h3 * np.sin(2 * np.pi * 3 * f0 * t + rng.uniform(0, 2 * np.pi))
    )
    signal += 0.01 * rng.standard_normal(SAMPLE_RATE)
    signal *= 0.4 / np.abs(signal).max()
    return Waveform(samples=signal, sample_rate=SAMPLE_RATE)


def noise_source(variant: int, seconds: float, seed: int = 0) -> Waveform:
    """Colored noise long enough to carve clips from."""
    rng = derive_rng(seed, "toy-noise", variant)
    n = int(seconds * SAMPLE_RATE)
    white = rng.standard_normal(n)
    # one-pole lowpass gives each source a distinct color
    alpha = 0.6 + 0.1 * variant
    out = np.empty(n)
    acc = 0.0
    coeffs = alpha ** np.arange(24)
    out = np.convolve(white, coeffs)[:n]
    out *= 0.3 / np.abs(out).max()
    return Waveform(samples=out, sample_rate=SAMPLE_RATE)


def impulse_response(variant: int, seed: int = 0) -> Waveform:
    """Synthetic exponentially decaying RIR, exactly one second long."""
    rng = derive_rng(seed, "toy-rir", variant)
    n = SAMPLE_RATE
    decay = np.exp(-np.arange(n) / (800.0 + 400.0 * variant))
    tail = 0.3 * decay * rng.standard_normal(n)
    tail[0] = 1.0
    return Waveform(samples=tail, sample_rate=SAMPLE_RATE)


def generate_corpus(
    root,
    per_class_train: int = 3,
    per_class_dev: int = 1,
    noise_sources: int = 3,
    noise_seconds: float = 5.0,
    rir_count: int = 2,
    seed: int = 0,
) -> dict:
    """Write a full toy dataset tree and return its locations.

    Layout: ``dataset/<command>/*.wav`` (one directory per command,
    ``per_class_train + per_class_dev`` files each), ``noise/*.wav`` long
    noise sources, and ``rir/*.wav`` impulse responses.
    """
    root = Path(root)
    dataset = root / "dataset"
    noise_dir = root / "noise"
    rir_dir = root / "rir"
    label_map = LabelMap()
    per_class = per_class_train + per_class_dev
    for class_index, label in enumerate(label_map.labels[:-1]):
        d = dataset / label
        d.mkdir(parents=True, exist_ok=True)
        for variant in range(per_class):
            write_wav(d / f"spk{variant:02d}_{label}.wav", tone_utterance(class_index, variant, seed))
    noise_dir.mkdir(parents=True, exist_ok=True)
    for variant in range(noise_sources):
        write_wav(noise_dir / f"noise_src_{variant}.wav", noise_source(variant, noise_seconds, seed))
    rir_dir.mkdir(parents=True, exist_ok=True)
    for variant in range(rir_count):
        write_wav(rir_dir / f"rir_{variant}.wav", impulse_response(variant, seed))
    return {
        "dataset": str(dataset),
        "noise": str(noise_dir),
        "rir": str(rir_dir),
        "per_class": per_class,
    }
