"""Time-domain augmentation operators and the per-signal stochastic scheduler.

Each operator comes in two layers: a deterministic kernel taking explicit
parameters (``inject_noise_at``, ``reverberate_with``, ``apply_gain``,
``apply_fade``) and a sampling wrapper that draws those parameters from an
explicit RNG stream.  The scheduler draws one uniform per registered
operator and keeps the operator iff the draw is >= the domain rate, then
shuffles the surviving order; every call draws fresh.

Conventions (applied everywhere): integer ranges written U{lo..hi} include
both endpoints; real ranges U[lo, hi) exclude the upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import SAMPLE_RATE, Waveform, read_wav
from .errors import ValidationError

KNOWN_TIME_OPS = ("noise", "reverb", "gain", "fade")
KNOWN_FREQ_OPS = ("time_mask", "freq_mask")

# Reverberation length bounds: 31 ms and 250 ms at 16 kHz.
REVERB_MIN_SAMPLES = 496
REVERB_MAX_SAMPLES = 4000

GAIN_LOW = 0.2
GAIN_HIGH = 2.0


# --------------------------------------------------------------------------
# Fade envelope shapes: monotone maps [0,1] -> [0,1] with f(0)=0, f(1)=1.
# --------------------------------------------------------------------------


def _fade_linear(t):
    return t


def _fade_exponential(t):
    return (np.exp(5.0 * t) - 1.0) / (np.exp(5.0) - 1.0)


def _fade_logarithmic(t):
    return np.log(1.0 + 9.0 * t) / np.log(10.0)


def _fade_quarter_sine(t):
    return np.sin(np.pi * t / 2.0)


def _fade_half_sine(t):
    return (1.0 - np.cos(np.pi * t)) / 2.0


FADE_SHAPES = {
    "linear": _fade_linear,
    "exponential": _fade_exponential,
    "logarithmic": _fade_logarithmic,
    "quarter_sine": _fade_quarter_sine,
    "half_sine": _fade_half_sine,
}
FADE_SHAPE_NAMES = tuple(FADE_SHAPES)


# --------------------------------------------------------------------------
# Resources
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseBank:
    """All available noise recordings concatenated into one long signal."""

    signal: Waveform

    def __post_init__(self):
        if len(self.signal) < 1:
            raise ValidationError("noise bank must contain at least one sample")
        if self.signal.sample_rate != SAMPLE_RATE:
            raise ValidationError(
                f"noise bank must be {SAMPLE_RATE} Hz, got {self.signal.sample_rate}"
            )

    @property
    def length_samples(self) -> int:
        return len(self.signal)

    @classmethod
    def from_waveforms(cls, waveforms) -> "NoiseBank":
        waveforms = list(waveforms)
        if not waveforms:
            raise ValidationError("cannot build a noise bank from zero recordings")
        samples = np.concatenate([w.samples for w in waveforms])
        return cls(signal=Waveform(samples=samples, sample_rate=waveforms[0].sample_rate))

    @classmethod
    def from_directory(cls, directory) -> "NoiseBank":
        paths = sorted(Path(directory).glob("*.wav"))
        if not paths:
            raise ValidationError(f"{directory}: no wav files for the noise bank")
        return cls.from_waveforms(read_wav(p) for p in paths)


@dataclass(frozen=True)
class ImpulseResponseSet:
    """Room impulse responses, each exactly one second at 16 kHz."""

    responses: tuple

    def __post_init__(self):
        if not self.responses:
            raise ValidationError("impulse response set must be non-empty")
        for i, r in enumerate(self.responses):
            if len(r) != SAMPLE_RATE:
                raise ValidationError(
                    f"impulse response {i} has {len(r)} samples, expected {SAMPLE_RATE}"
                )

    @classmethod
    def from_directory(cls, directory, normalize: bool = False) -> "ImpulseResponseSet":
        paths = sorted(Path(directory).glob("*.wav"))
        if not paths:
            raise ValidationError(f"{directory}: no wav files for impulse responses")
        responses = []
        for p in paths:
            w = read_wav(p)
            if normalize:
                peak = np.abs(w.samples).max()
                if peak > 0:
                    w = w.with_samples(w.samples / peak)
            responses.append(w)
        return cls(responses=tuple(responses))


@dataclass
class AugmentationPolicy:
    """Scheduler rates, operator registries, and the augmentation seed.

    An operator survives iff its uniform draw r satisfies r >= rate, so a
    rate of 0 keeps everything and a rate of 1 keeps nothing.
    ``consultations`` counts scheduler invocations; evaluation paths must
    leave it untouched.
    """

    lambda_rate: float = 0.5
    gamma_rate: float = 0.5
    time_ops: tuple = KNOWN_TIME_OPS
    freq_ops: tuple = KNOWN_FREQ_OPS
    rng_seed: int = 0
    normalize_impulse_responses: bool = False
    consultations: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.time_ops = tuple(self.time_ops)
        self.freq_ops = tuple(self.freq_ops)
        for rate, name in ((self.lambda_rate, "lambda_rate"), (self.gamma_rate, "gamma_rate")):
            if not 0.0 <= rate <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {rate}")
        for ops, known, name in (
            (self.time_ops, KNOWN_TIME_OPS, "time_ops"),
            (self.freq_ops, KNOWN_FREQ_OPS, "freq_ops"),
        ):
            if not ops:
                raise ValidationError(f"{name} registry must be non-empty")
            if len(set(ops)) != len(ops):
                raise ValidationError(f"{name} registry contains duplicates: {ops}")
            unknown = [o for o in ops if o not in known]
            if unknown:
                raise ValidationError(f"unknown {name} entries: {unknown}")


# --------------------------------------------------------------------------
# Scheduler
# --------------------------------------------------------------------------


def select_ops(registry, rate: float, rng: np.random.Generator) -> list:
    """Draw one U[0,1) per operator, keep those with r >= rate, shuffle."""
    registry = list(registry)
    if not registry:
        raise ValidationError("operator registry must be non-empty")
    if not 0.0 <= rate <= 1.0:
        raise ValidationError(f"rate must lie in [0, 1], got {rate}")
    draws = rng.uniform(0.0, 1.0, size=len(registry))
    selected = [op for op, r in zip(registry, draws) if r >= rate]
    order = rng.permutation(len(selected))
    return [selected[i] for i in order]


# --------------------------------------------------------------------------
# Operators
# --------------------------------------------------------------------------


def inject_noise_at(
    x: Waveform, bank: NoiseBank, m: int, n: int, f: int, gain: float
) -> Waveform:
    """Mix the bank segment [m, n) into x with ``f`` leading zeros.

    The noise term is  gain * ( f zeros || bank[m:n) || trailing zeros )
    padded to |x|; the output always has |x| samples.
    """
    t_s = len(x)
    seg = bank.signal.samples[m:n]
    if f < 0 or f + seg.shape[0] > t_s:
        raise ValidationError(
            f"noise segment does not fit: f={f}, segment={seg.shape[0]}, |x|={t_s}"
        )
    xi = np.zeros(t_s, dtype=np.float64)
    xi[f : f + seg.shape[0]] = seg
    return x.with_samples(gain * xi + x.samples)


def inject_noise(x: Waveform, bank: NoiseBank, rng: np.random.Generator) -> Waveform:
    """Draw (m, n, f, gain) and mix a random noise segment into x.

    m ~ U{0..T_n-1}; n ~ U{m..min(T_n, m+T_s)}; f ~ U{0..max(0, T_s-(n-m)-1)};
    gain ~ U[0, 1).  A degenerate n == m draw leaves x unchanged.
    """
    if len(x) < 1:
        raise ValidationError("cannot inject noise into an empty signal")
    t_s = len(x)
    t_n = bank.length_samples
    m = int(rng.integers(0, t_n))
    n = int(rng.integers(m, min(t_n, m + t_s) + 1))
    f = int(rng.integers(0, max(0, t_s - (n - m) - 1) + 1))
    gain = float(rng.uniform(0.0, 1.0))
    return inject_noise_at(x, bank, m, n, f, gain)


def reverberate_with(x: Waveform, impulse_response, length: int) -> Waveform:
    """Convolve x with taps 0..length of the impulse response, truncated to |x|.

    Implements out[n] = sum_{i=0}^{length} h[i] * x[n-i] with out-of-range x
    treated as zero.  Shorter impulse responses are used as-is.
    """
    h = np.asarray(
        impulse_response.samples if isinstance(impulse_response, Waveform) else impulse_response,
        dtype=np.float64,
    )
    kernel = h[: length + 1]
    full = np.convolve(x.samples, kernel)
    return x.with_samples(full[: len(x)])


def reverberate(x: Waveform, irs: ImpulseResponseSet, rng: np.random.Generator) -> Waveform:
    """Pick a random impulse response and length l ~ U{496..4000} samples."""
    if len(x) < 1:
        raise ValidationError("cannot reverberate an empty signal")
    h = irs.responses[int(rng.integers(0, len(irs.responses)))]
    length = int(rng.integers(REVERB_MIN_SAMPLES, REVERB_MAX_SAMPLES + 1))
    return reverberate_with(x, h, length)


def apply_gain(x: Waveform, gain: float) -> Waveform:
    return x.with_samples(gain * x.samples)


def random_gain(x: Waveform, rng: np.random.Generator) -> Waveform:
    """Scale by gain ~ U[0.2, 2.0); no clipping is applied."""
    if len(x) < 1:
        raise ValidationError("cannot apply gain to an empty signal")
    return apply_gain(x, float(rng.uniform(GAIN_LOW, GAIN_HIGH)))


def fade_in_envelope(n: int, shape: str, length: int) -> np.ndarray:
    """Envelope ramping 0 -> 1 over the first ``length`` samples, then ones."""
    env = np.ones(n, dtype=np.float64)
    if length > 0:
        env[:length] = FADE_SHAPES[shape](np.linspace(0.0, 1.0, length))
    return env


def fade_out_envelope(n: int, shape: str, length: int) -> np.ndarray:
    """Envelope of ones, ramping 1 -> 0 over the last ``length`` samples."""
    env = np.ones(n, dtype=np.float64)
    if length > 0:
        env[n - length :] = FADE_SHAPES[shape](np.linspace(1.0, 0.0, length))
    return env


def apply_fade(
    x: Waveform, shape_in: str, length_in: int, shape_out: str, length_out: int
) -> Waveform:
    n = len(x)
    if not 0 <= length_in <= n or not 0 <= length_out <= n:
        raise ValidationError("fade lengths must lie in [0, |x|]")
    f_in = fade_in_envelope(n, shape_in, length_in)
    f_out = fade_out_envelope(n, shape_out, length_out)
    return x.with_samples(f_in * f_out * x.samples)


def random_fade(x: Waveform, rng: np.random.Generator) -> Waveform:
    """Independent fade-in and fade-out: random shape, length ~ U{0..|x|}."""
    if len(x) < 1:
        raise ValidationError("cannot fade an empty signal")
    n = len(x)
    shape_in = FADE_SHAPE_NAMES[int(rng.integers(0, len(FADE_SHAPE_NAMES)))]
    length_in = int(rng.integers(0, n + 1))
    shape_out = FADE_SHAPE_NAMES[int(rng.integers(0, len(FADE_SHAPE_NAMES)))]
    length_out = int(rng.integers(0, n + 1))
    return apply_fade(x, shape_in, length_in, shape_out, length_out)


# --------------------------------------------------------------------------
# Pipeline
# --------------------------------------------------------------------------


def apply_time_augment(
    x: Waveform,
    policy: AugmentationPolicy,
    bank: NoiseBank | None,
    irs: ImpulseResponseSet | None,
    rng: np.random.Generator,
) -> Waveform:
    """Run the scheduled time-domain operators over x in shuffled order.

    Every operator preserves length, so the pipeline does too.  An empty
    selection returns x unchanged.
    """
    policy.consultations += 1
    selected = select_ops(policy.time_ops, policy.lambda_rate, rng)
    y = x
    for op in selected:
        if op == "noise":
            if bank is None:
                raise ValidationError("'noise' was scheduled but no noise bank was provided")
            y = inject_noise(y, bank, rng)
        elif op == "reverb":
            if irs is None:
                raise ValidationError("'reverb' was scheduled but no impulse responses were provided")
            y = reverberate(y, irs, rng)
        elif op == "gain":
            y = random_gain(y, rng)
        elif op == "fade":
            y = random_fade(y, rng)
    return y
