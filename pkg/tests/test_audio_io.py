"""WAV parsing, the label inventory, and manifest construction."""

import json
import struct
from pathlib import Path

import numpy as np
import pytest

from cmdspot.audio_io import (
    LabelMap,
    ManifestEntry,
    SplitSpec,
    Waveform,
    build_manifest,
    carve_noise_clips,
    read_manifest,
    read_wav,
    wav_duration_s,
    write_manifest,
    write_wav,
)
from cmdspot.errors import (
    CorruptFileError,
    CoverageError,
    InsufficientMaterialError,
    LabelError,
    UnsupportedLayoutError,
    ValidationError,
    WavFormatError,
)

from conftest import make_float32_wav, make_pcm16_wav


class TestReadWav:
    def test_pcm16_code_points(self, tmp_path):
        """PCM16 maps to float via s / 32768 at exact code points."""
        p = make_pcm16_wav(tmp_path / "codes.wav", [0, 16384, -32768])
        wave = read_wav(p)
        np.testing.assert_array_equal(wave.samples, [0.0, 0.5, -1.0])
        assert wave.sample_rate == 16000

    def test_one_second_file_has_16000_samples(self, tmp_path):
        p = make_pcm16_wav(tmp_path / "sec.wav", [0] * 16000)
        assert len(read_wav(p)) == 16000

    def test_stereo_rejected(self, tmp_path):
        p = make_pcm16_wav(tmp_path / "stereo.wav", [0, 0, 0, 0], channels=2)
        with pytest.raises(UnsupportedLayoutError):
            read_wav(p)

    def test_float32_payload(self, tmp_path):
        values = [0.25, -0.75, 1.5]
        p = make_float32_wav(tmp_path / "f32.wav", values)
        np.testing.assert_allclose(read_wav(p).samples, values, atol=1e-7)

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"RIFFxxxxNOPE" + b"\x00" * 40)
        with pytest.raises(WavFormatError):
            read_wav(p)

    def test_missing_fmt_chunk(self, tmp_path):
        p = tmp_path / "nofmt.wav"
        p.write_bytes(b"RIFF" + struct.pack("<I", 4) + b"WAVE")
        with pytest.raises(WavFormatError):
            read_wav(p)

    def test_truncated_data_chunk(self, tmp_path):
        good = make_pcm16_wav(tmp_path / "good.wav", [1] * 100)
        raw = good.read_bytes()
        bad = tmp_path / "trunc.wav"
        bad.write_bytes(raw[:-50])  # data chunk declares more bytes than remain
        with pytest.raises(CorruptFileError):
            read_wav(bad)

    def test_unsupported_encoding(self, tmp_path):
        p = tmp_path / "alaw.wav"
        payload = b"\x00" * 8
        blob = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        blob += b"fmt " + struct.pack("<IHHIIHH", 16, 6, 1, 16000, 16000, 1, 8)
        blob += b"data" + struct.pack("<I", len(payload)) + payload
        p.write_bytes(blob)
        with pytest.raises(WavFormatError):
            read_wav(p)


class TestWriteWav:
    def test_round_trip_within_quantization(self, tmp_path):
        """read(write(x)) reproduces x within 1/32768 per sample."""
        rng = np.random.default_rng(0)
        samples = np.concatenate([rng.uniform(-1, 1, 500), [-1.0, 0.0, 1.0]])
        p = tmp_path / "rt.wav"
        write_wav(p, Waveform(samples=samples, sample_rate=16000))
        back = read_wav(p)
        assert np.abs(back.samples - samples).max() <= 1.0 / 32768

    def test_full_scale_clamps_to_max_code(self, tmp_path):
        p = tmp_path / "clip.wav"
        write_wav(p, Waveform(samples=np.array([1.0, 2.0, -2.0]), sample_rate=16000))
        raw = p.read_bytes()
        codes = struct.unpack("<3h", raw[-6:])
        assert codes == (32767, 32767, -32768)

    def test_nan_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            Waveform(samples=np.array([0.0, np.nan]), sample_rate=16000)

    def test_unwritable_path(self, tmp_path):
        wave = Waveform(samples=np.zeros(4), sample_rate=16000)
        with pytest.raises(OSError):
            write_wav(tmp_path / "no" / "such" / "dir.wav", wave)

    def test_duration_helper(self, tmp_path):
        p = make_pcm16_wav(tmp_path / "d.wav", [0] * 8000)
        assert wav_duration_s(p) == pytest.approx(0.5)


class TestLabelMap:
    def test_inventory_shape(self):
        lm = LabelMap()
        assert len(lm) == 41
        assert lm.labels.count("NULL") == 1
        assert [lm.index(lab) for lab in lm.labels] == list(range(41))

    def test_resolution_accepts_all_alias_forms(self):
        lm = LabelMap()
        assert lm.resolve("sifr") == "sifr"
        assert lm.resolve("zero") == "sifr"
        assert lm.resolve("صفر") == "sifr"
        assert lm.resolve("Stop") == "tawaqqaf"

    def test_unknown_name(self):
        with pytest.raises(LabelError):
            LabelMap().resolve("teleport")

    def test_display_forms(self):
        lm = LabelMap()
        assert lm.display("sifr") == "صفر"
        assert lm.display("NULL") is None


def _build_tree(root: Path, labels, files_per_dir: int, n_samples: int = 800):
    for label in labels:
        d = root / label
        d.mkdir(parents=True)
        for i in range(files_per_dir):
            make_pcm16_wav(d / f"spk{i:02d}_{label}.wav", [100 * (i + 1)] * n_samples)


class TestBuildManifest:
    def test_split_fractions(self, tmp_path):
        """40 dirs x 10 files at 60/20/20 gives 240/80/80."""
        root = tmp_path / "data"
        _build_tree(root, LabelMap().labels[:-1], 10)
        entries = build_manifest(root, seed=7)
        assert len(entries) == 400
        counts = {s: sum(1 for e in entries if e.split == s) for s in ("train", "dev", "test")}
        assert counts == {"train": 240, "dev": 80, "test": 80}

    def test_bijection_and_determinism(self, tmp_path):
        root = tmp_path / "data"
        _build_tree(root, ["sifr", "wahid", "ithnan"], 7)
        a = build_manifest(root, seed=3)
        b = build_manifest(root, seed=3)
        assert a == b
        paths = [e.path for e in a]
        assert len(paths) == len(set(paths)) == 21
        on_disk = {str(p.resolve()) for p in root.glob("*/*.wav")}
        assert set(paths) == on_disk

    def test_different_seed_changes_assignment(self, tmp_path):
        root = tmp_path / "data"
        _build_tree(root, ["sifr"], 10)
        a = build_manifest(root, seed=1)
        b = build_manifest(root, seed=2)
        assert [e.split for e in a] != [e.split for e in b]

    def test_unknown_directory_name(self, tmp_path):
        root = tmp_path / "data"
        _build_tree(root, ["sifr"], 2)
        (root / "teleport").mkdir()
        make_pcm16_wav(root / "teleport" / "x.wav", [0] * 800)
        with pytest.raises(LabelError):
            build_manifest(root)

    def test_empty_directory(self, tmp_path):
        root = tmp_path / "data"
        _build_tree(root, ["sifr"], 2)
        (root / "wahid").mkdir()
        with pytest.raises(CoverageError):
            build_manifest(root)

    def test_synthetic_entries_are_train_only(self, tmp_path):
        root = tmp_path / "data"
        _build_tree(root, LabelMap().labels[:-1], 10)
        synth = tmp_path / "synth"
        _build_tree(synth, LabelMap().labels[:-1], 1)
        entries = build_manifest(root, synthetic_root=synth, seed=7)
        assert len(entries) == 440
        syn = [e for e in entries if e.source == "synthetic"]
        assert len(syn) == 40
        assert all(e.split == "train" for e in syn)

    def test_split_sizes_within_rounding(self, tmp_path):
        root = tmp_path / "data"
        _build_tree(root, ["sifr", "wahid"], 9)
        entries = build_manifest(root, seed=0)
        for label in ("sifr", "wahid"):
            per = [e.split for e in entries if e.label == label]
            # floor(9 * 0.2) == 1 for dev and test; train takes the rest
            assert per.count("dev") == 1 and per.count("test") == 1 and per.count("train") == 7

    def test_speaker_mode_keeps_speakers_together(self, tmp_path):
        root = tmp_path / "data"
        d = root / "sifr"
        d.mkdir(parents=True)
        for spk in range(5):
            for take in range(4):
                make_pcm16_wav(d / f"s{spk}_take{take}.wav", [10] * 800)
        entries = build_manifest(root, split_spec=SplitSpec(by="speaker"), seed=1)
        by_speaker = {}
        for e in entries:
            speaker = Path(e.path).stem.split("_")[0]
            by_speaker.setdefault(speaker, set()).add(e.split)
        assert all(len(splits) == 1 for splits in by_speaker.values())

    def test_explicit_split_file(self, tmp_path):
        root = tmp_path / "data"
        _build_tree(root, ["sifr"], 3)
        names = sorted(p.name for p in (root / "sifr").glob("*.wav"))
        explicit = {names[0]: "test", names[1]: "dev", names[2]: "train"}
        entries = build_manifest(root, split_spec=SplitSpec(explicit=explicit))
        got = {Path(e.path).name: e.split for e in entries}
        assert got == explicit

    def test_rejects_wrong_sample_rate(self, tmp_path):
        root = tmp_path / "data"
        d = root / "sifr"
        d.mkdir(parents=True)
        make_pcm16_wav(d / "a.wav", [0] * 800, sample_rate=8000)
        with pytest.raises(ValidationError):
            build_manifest(root)


class TestCarveNoiseClips:
    def _sources(self, n=2, seconds=2.0):
        rng = np.random.default_rng(5)
        return [
            Waveform(samples=rng.uniform(-0.5, 0.5, int(seconds * 16000)), sample_rate=16000)
            for _ in range(n)
        ]

    def test_full_split(self, tmp_path):
        """300 one-second clips split 180/60/60."""
        entries = carve_noise_clips(self._sources(), 300, 1.0, seed=9, out_dir=tmp_path)
        assert len(entries) == 300
        counts = {s: sum(1 for e in entries if e.split == s) for s in ("train", "dev", "test")}
        assert counts == {"train": 180, "dev": 60, "test": 60}
        assert all(e.label == "NULL" and e.source == "noise" for e in entries)
        clip = read_wav(entries[0].path)
        assert len(clip) == 16000

    def test_remainder_goes_to_train(self, tmp_path):
        entries = carve_noise_clips(self._sources(), 5, 1.0, seed=9, out_dir=tmp_path)
        counts = {s: sum(1 for e in entries if e.split == s) for s in ("train", "dev", "test")}
        assert counts == {"train": 3, "dev": 1, "test": 1}

    def test_no_material(self, tmp_path):
        with pytest.raises(InsufficientMaterialError):
            carve_noise_clips([], 5, 1.0, seed=9, out_dir=tmp_path)
        short = [Waveform(samples=np.zeros(100), sample_rate=16000)]
        with pytest.raises(InsufficientMaterialError):
            carve_noise_clips(short, 5, 1.0, seed=9, out_dir=tmp_path)

    def test_determinism(self, tmp_path):
        a = carve_noise_clips(self._sources(), 10, 0.05, seed=4, out_dir=tmp_path / "a")
        b = carve_noise_clips(self._sources(), 10, 0.05, seed=4, out_dir=tmp_path / "b")
        for ea, eb in zip(a, b):
            assert Path(ea.path).read_bytes() == Path(eb.path).read_bytes()


class TestManifestIO:
    def _entries(self, tmp_path):
        p = make_pcm16_wav(tmp_path / "w.wav", [10] * 400)
        return [
            ManifestEntry(
                id="sifr__w", path=str(p), label="sifr", split="train",
                source="original", duration_s=0.025,
            ),
            ManifestEntry(
                id="noise__0", path=str(p), label="NULL", split="dev",
                source="noise", duration_s=0.025,
            ),
        ]

    def test_round_trip(self, tmp_path):
        entries = self._entries(tmp_path)
        mpath = tmp_path / "manifest.jsonl"
        write_manifest(entries, mpath)
        assert read_manifest(mpath) == entries

    def test_display_key_present_for_commands(self, tmp_path):
        entries = self._entries(tmp_path)
        mpath = tmp_path / "manifest.jsonl"
        write_manifest(entries, mpath)
        lines = [json.loads(l) for l in mpath.read_text(encoding="utf-8").splitlines()]
        assert lines[0]["display"] == "صفر"
        assert "display" not in lines[1]

    def test_synthetic_outside_train_rejected(self):
        with pytest.raises(ValidationError):
            ManifestEntry(
                id="x", path="x.wav", label="sifr", split="dev",
                source="synthetic", duration_s=1.0,
            )
