"""WAV I/O, the command label inventory, and dataset manifest construction.

The on-disk contracts implemented here:

* WAV: RIFF little-endian; PCM16 or IEEE-float32, mono only.  PCM16 maps to
  float via ``s / 32768``; writes clamp to the PCM16 code range.
* Manifest: JSON Lines, one utterance per line with keys
  ``id, path, label, split, source, duration_s`` (plus an optional
  ``display`` key carrying the Arabic form of a command).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFileError,
    CoverageError,
    InsufficientMaterialError,
    LabelError,
    UnsupportedLayoutError,
    ValidationError,
    WavFormatError,
)
from .rng import derive_rng

SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0
NULL_LABEL = "NULL"

SPLITS = ("train", "dev", "test")
SOURCES = ("original", "synthetic", "noise")

# (canonical romanized alias, english alias, arabic display form)
_COMMANDS = (
    ("sifr", "zero", "صفر"),
    ("wahid", "one", "واحد"),
    ("ithnan", "two", "اثنان"),
    ("thalatha", "three", "ثلاثة"),
    ("arbaa", "four", "أربعة"),
    ("khamsa", "five", "خمسة"),
    ("sitta", "six", "ستة"),
    ("saba", "seven", "سبعة"),
    ("thamaniya", "eight", "ثمانية"),
    ("tisa", "nine", "تسعة"),
    ("yamin", "right", "يمين"),
    ("yasar", "left", "يسار"),
    ("aala", "up", "أعلى"),
    ("asfal", "down", "أسفل"),
    ("amam", "front", "أمام"),
    ("khalf", "back", "خلف"),
    ("naam", "yes", "نعم"),
    ("la", "no", "لا"),
    ("ibda", "start", "ابدأ"),
    ("tawaqqaf", "stop", "توقف"),
    ("tafil", "enable", "تفعيل"),
    ("tatil", "disable", "تعطيل"),
    ("muwafiq", "ok", "موافق"),
    ("ilgha", "cancel", "إلغاء"),
    ("fath", "open", "فتح"),
    ("ighlaq", "close", "إغلاق"),
    ("takbir", "zoom_in", "تكبير"),
    ("tasghir", "zoom_out", "تصغير"),
    ("alsabiq", "previous", "السابق"),
    ("altali", "next", "التالي"),
    ("irsal", "send", "إرسال"),
    ("istiqbal", "receive", "استقبال"),
    ("tahrik", "move", "تحريك"),
    ("tadwir", "rotate", "تدوير"),
    ("tasjil", "record", "تسجيل"),
    ("idkhal", "enter", "إدخال"),
    ("raqm", "digit", "رقم"),
    ("itijah", "direction", "اتجاه"),
    ("khayarat", "options", "خيارات"),
    ("taraju", "undo", "تراجع"),
)


@dataclass(frozen=True)
class Waveform:
    """Mono time-domain signal plus its sample rate.

    Values read from PCM16 land in [-1, 1]; augmented signals may exceed
    that range in float and are only clamped when written back to PCM.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError(f"waveform must be 1-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples=samples, sample_rate=self.sample_rate)


class LabelMap:
    """Ordered inventory of the 40 spoken commands plus the NULL class.

    Index 0..39 are the commands, index 40 is NULL.  Directory names are
    resolved case-insensitively against the romanized alias, the english
    alias, or the Arabic form.
    """

    def __init__(self):
        self._labels = tuple(c[0] for c in _COMMANDS) + (NULL_LABEL,)
        self._display = {c[0]: c[2] for c in _COMMANDS}
        self._index = {lab: i for i, lab in enumerate(self._labels)}
        self._aliases = {}
        for canonical, english, arabic in _COMMANDS:
            self._aliases[canonical.lower()] = canonical
            self._aliases[english.lower()] = canonical
            self._aliases[arabic] = canonical
        self._aliases[NULL_LABEL.lower()] = NULL_LABEL

    @property
    def labels(self) -> tuple:
        return self._labels

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def index(self, label: str) -> int:
        if label not in self._index:
            raise LabelError(f"unknown label: {label!r}")
        return self._index[label]

    def label(self, index: int) -> str:
        return self._labels[index]

    def display(self, label: str) -> str | None:
        return self._display.get(label)

    def resolve(self, name: str) -> str:
        """Map a directory or CLI name onto the canonical label."""
        key = name if name in self._aliases else name.lower()
        if key not in self._aliases:
            raise LabelError(f"name {name!r} is not one of the known commands")
        return self._aliases[key]


@dataclass(frozen=True)
class ManifestEntry:
    """One labeled utterance in a dataset manifest."""

    id: str
    path: str
    label: str
    split: str
    source: str
    duration_s: float

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.source not in SOURCES:
            raise ValidationError(f"source must be one of {SOURCES}, got {self.source!r}")
        if not self.duration_s > 0:
            raise ValidationError(f"duration_s must be positive, got {self.duration_s}")
        if self.source == "synthetic" and self.split != "train":
            raise ValidationError("synthetic entries are train-only")


# --------------------------------------------------------------------------
# WAV parsing
# --------------------------------------------------------------------------

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


def _parse_wav_bytes(raw: bytes, origin: str):
    """Walk the RIFF chunks and return (fmt fields, data payload)."""
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{origin}: not a RIFF/WAVE file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid, csize = struct.unpack_from("<4sI", raw, pos)
        body_start = pos + 8
        if cid == b"fmt ":
            if csize < 16 or body_start + 16 > len(raw):
                raise WavFormatError(f"{origin}: fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", raw, body_start)
        elif cid == b"data":
            available = len(raw) - body_start
            if available < csize:
                raise CorruptFileError(
                    f"{origin}: data chunk declares {csize} bytes but only "
                    f"{available} are present"
                )
            data = raw[body_start : body_start + csize]
        pos = body_start + csize + (csize & 1)  # chunks are word-aligned
    if fmt is None:
        raise WavFormatError(f"{origin}: missing fmt chunk")
    if data is None:
        raise WavFormatError(f"{origin}: missing data chunk")
    return fmt, data


def read_wav(path) -> Waveform:
    """Read a mono PCM16 or IEEE-float32 WAV file.

    PCM16 samples map to float via ``s / 32768``; the header sample rate is
    preserved as-is (rejecting non-16 kHz audio is the caller's job).
    """
    path = Path(path)
    raw = path.read_bytes()
    fmt, data = _parse_wav_bytes(raw, str(path))
    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if channels != 1:
        raise UnsupportedLayoutError(f"{path}: {channels} channels, only mono is supported")
    if (audio_format, bits) == (_FMT_PCM, 16):
        codes = np.frombuffer(data[: len(data) - (len(data) % 2)], dtype="<i2")
        samples = codes.astype(np.float64) / PCM16_SCALE
    elif (audio_format, bits) == (_FMT_IEEE_FLOAT, 32):
        codes = np.frombuffer(data[: len(data) - (len(data) % 4)], dtype="<f4")
        samples = codes.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits}); "
            "expected PCM16 or IEEE-float32"
        )
    return Waveform(samples=samples, sample_rate=int(sample_rate))


def write_wav(path, waveform: Waveform) -> None:
    """Write PCM16 mono; values are clamped to the int16 code range."""
    samples = np.asarray(waveform.samples, dtype=np.float64)
    if not np.isfinite(samples).all():
        raise ValidationError("refusing to write non-finite samples")
    codes = np.clip(np.round(samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    payload = codes.tobytes()
    rate = int(waveform.sample_rate)
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _FMT_PCM, 1, rate, rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    try:
        Path(path).write_bytes(header + payload)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err


def wav_duration_s(path) -> float:
    """Duration from the header without decoding samples."""
    raw = Path(path).read_bytes()
    fmt, data = _parse_wav_bytes(raw, str(path))
    _, channels, sample_rate, _, block_align, _ = fmt
    if block_align == 0:
        raise WavFormatError(f"{path}: zero block alignment")
    return (len(data) // block_align) / sample_rate


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """How command files are assigned to train/dev/test.

    ``fractions`` are (train, dev, test) and must sum to 1; dev and test
    sizes are floored per stratum and train absorbs the remainder.  ``by``
    selects stratified-by-file or by-speaker assignment (speaker key =
    filename stem up to the first underscore).  ``explicit`` maps a file
    name (or dataset-relative path) directly onto a split and overrides
    everything else.
    """

    fractions: tuple = (0.6, 0.2, 0.2)
    by: str = "file"
    explicit: dict | None = None

    def __post_init__(self):
        if self.by not in ("file", "speaker"):
            raise ValidationError(f"split mode must be 'file' or 'speaker', got {self.by!r}")
        if len(self.fractions) != 3 or min(self.fractions) < 0:
            raise ValidationError("fractions must be three non-negative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValidationError(f"fractions must sum to 1, got {self.fractions}")


def _assign_splits(n: int, fractions, rng) -> list:
    """Return a split name per index; dev/test floored, train keeps the rest."""
    n_dev = math.floor(n * fractions[1])
    n_test = math.floor(n * fractions[2])
    order = rng.permutation(n)
    splits = ["train"] * n
    for i in order[:n_dev]:
        splits[i] = "dev"
    for i in order[n_dev : n_dev + n_test]:
        splits[i] = "test"
    return splits


def _scan_command_dirs(root: Path, label_map: LabelMap):
    """Yield (canonical label, sorted wav paths) per command directory."""
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise CoverageError(f"{root}: no command directories found")
    for d in dirs:
        label = label_map.resolve(d.name)  # raises LabelError on unknown names
        files = sorted(d.glob("*.wav"))
        if not files:
            raise CoverageError(f"{d}: command directory contains no wav files")
        yield label, files


def _entry_for(path: Path, label: str, split: str, source: str, prefix: str) -> ManifestEntry:
    wave = read_wav(path)
    if wave.sample_rate != SAMPLE_RATE:
        raise ValidationError(
            f"{path}: dataset audio must be {SAMPLE_RATE} Hz, got {wave.sample_rate}"
        )
    return ManifestEntry(
        id=f"{prefix}{label}__{path.stem}",
        path=str(path.resolve()),
        label=label,
        split=split,
        source=source,
        duration_s=len(wave) / wave.sample_rate,
    )


def build_manifest(
    dataset_root,
    synthetic_root=None,
    split_spec: SplitSpec | None = None,
    seed: int = 0,
    label_map: LabelMap | None = None,
) -> list:
    """Scan a one-directory-per-command tree into manifest entries.

    Deterministic for a fixed seed: directories and files are walked in
    sorted order and the split shuffle is seeded per label.  Synthetic
    entries (when a synthetic root is given) always land in the train
    split with ``source="synthetic"``.
    """
    label_map = label_map or LabelMap()
    split_spec = split_spec or SplitSpec()
    root = Path(dataset_root)
    if not root.is_dir():
        raise ValidationError(f"dataset root {root} is not a directory")

    entries = []
    for label, files in _scan_command_dirs(root, label_map):
        if split_spec.explicit is not None:
            splits = []
            for p in files:
                key = p.name if p.name in split_spec.explicit else str(p.relative_to(root))
                if key not in split_spec.explicit:
                    raise ValidationError(f"split file does not cover {p.name}")
                splits.append(split_spec.explicit[key])
        elif split_spec.by == "speaker":
            speakers = sorted({p.stem.split("_")[0] for p in files})
            rng = derive_rng(seed, "split-speaker", label)
            spk_split = dict(zip(speakers, _assign_splits(len(speakers), split_spec.fractions, rng)))
            splits = [spk_split[p.stem.split("_")[0]] for p in files]
        else:
            rng = derive_rng(seed, "split-file", label)
            splits = _assign_splits(len(files), split_spec.fractions, rng)
        for p, split in zip(files, splits):
            entries.append(_entry_for(p, label, split, "original", ""))

    if synthetic_root is not None:
        entries.extend(scan_synthetic(synthetic_root, label_map))
    return entries


def scan_synthetic(synthetic_root, label_map: LabelMap | None = None) -> list:
    """Scan a synthetic-audio tree; every entry is train-split by contract."""
    label_map = label_map or LabelMap()
    root = Path(synthetic_root)
    if not root.is_dir():
        raise ValidationError(f"synthetic root {root} is not a directory")
    entries = []
    for label, files in _scan_command_dirs(root, label_map):
        for p in files:
            entries.append(_entry_for(p, label, "train", "synthetic", "syn__"))
    return entries


def carve_noise_clips(
    noise_sources,
    count: int,
    clip_seconds: float,
    seed: int,
    out_dir,
) -> list:
    """Cut ``count`` NULL-labeled clips out of longer noise recordings.

    Each clip picks a uniformly random eligible source and a uniformly
    random offset, and is written as PCM16 into ``out_dir``.  Clips are
    split 60/20/20 train/dev/test by count, train absorbing the rounding
    remainder, in carve order.
    """
    if count <= 0:
        raise ValidationError(f"count must be positive, got {count}")
    clip_samples = int(round(clip_seconds * SAMPLE_RATE))
    eligible = [w for w in noise_sources if len(w) >= clip_samples]
    if not eligible:
        raise InsufficientMaterialError(
            f"no noise source is at least {clip_seconds} s long"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    n_dev = math.floor(count * 0.2)
    n_test = math.floor(count * 0.2)
    n_train = count - n_dev - n_test

    rng = derive_rng(seed, "noise-carve")
    entries = []
    for i in range(count):
        src = eligible[int(rng.integers(0, len(eligible)))]
        offset = int(rng.integers(0, len(src) - clip_samples + 1))
        clip = src.samples[offset : offset + clip_samples]
        path = out_dir / f"noise_{i:04d}.wav"
        write_wav(path, Waveform(samples=clip, sample_rate=SAMPLE_RATE))
        split = "train" if i < n_train else ("dev" if i < n_train + n_dev else "test")
        entries.append(
            ManifestEntry(
                id=f"noise__{i:04d}",
                path=str(path.resolve()),
                label=NULL_LABEL,
                split=split,
                source="noise",
                duration_s=clip_samples / SAMPLE_RATE,
            )
        )
    return entries


_MANIFEST_KEYS = ("id", "path", "label", "split", "source", "duration_s")


def manifest_line(entry: ManifestEntry, label_map: LabelMap | None = None) -> str:
    record = {k: getattr(entry, k) for k in _MANIFEST_KEYS}
    display = (label_map or LabelMap()).display(entry.label)
    if display is not None:
        record["display"] = display
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_manifest(entries, path, label_map: LabelMap | None = None) -> None:
    label_map = label_map or LabelMap()
    text = "".join(manifest_line(e, label_map) + "\n" for e in entries)
    Path(path).write_text(text, encoding="utf-8")


def read_manifest(path) -> list:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        entries.append(
            ManifestEntry(**{k: record[k] for k in _MANIFEST_KEYS})
        )
    return entries
