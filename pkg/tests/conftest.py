"""Shared fixtures: hand-built wav writers and the desk-scale toy corpus."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from cmdspot.audio_io import SplitSpec, build_manifest, carve_noise_clips, read_wav
from cmdspot.toydata import generate_corpus


def make_pcm16_wav(path, codes, sample_rate=16000, channels=1):
    """Write a PCM16 wav directly with struct, independent of write_wav."""
    payload = struct.pack(f"<{len(codes)}h", *codes)
    blob = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    blob += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, channels, sample_rate, sample_rate * 2 * channels, 2 * channels, 16
    )
    blob += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(blob + payload)
    return Path(path)


def make_float32_wav(path, values, sample_rate=16000):
    payload = np.asarray(values, dtype="<f4").tobytes()
    blob = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    blob += b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, sample_rate, sample_rate * 4, 4, 32)
    blob += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(blob + payload)
    return Path(path)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Full 40-command tone corpus: 3 train + 1 dev file per class, noise
    sources, and impulse responses."""
    root = tmp_path_factory.mktemp("toy_corpus")
    paths = generate_corpus(root, per_class_train=3, per_class_dev=1, seed=0)
    paths["root"] = str(root)
    return paths


@pytest.fixture(scope="session")
def toy_manifest(toy_corpus, tmp_path_factory):
    """Manifest entries for the toy corpus: 123 train / 41 dev / 1 test."""
    clip_dir = tmp_path_factory.mktemp("noise_clips")
    entries = build_manifest(
        toy_corpus["dataset"],
        split_spec=SplitSpec(fractions=(0.75, 0.25, 0.0)),
        seed=7,
    )
    sources = [read_wav(p) for p in sorted(Path(toy_corpus["noise"]).glob("*.wav"))]
    entries = entries + carve_noise_clips(sources, 5, 1.0, 7, clip_dir)
    return entries
