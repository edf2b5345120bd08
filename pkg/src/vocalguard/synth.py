"""Synthetic voiced signals with known pitch, jitter, shimmer, noise and formants.

The generator doubles as an oracle for the feature extractors and as a source
of gender-labeled corpora. Default corpus distributions are configuration
defaults chosen to be separable; they are not measurements of real speakers.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import signal

from .audio_io import (
    SAMPLE_RATE,
    Manifest,
    ManifestEntry,
    Waveform,
    normalize_minmax,
)

SINC_HALF = 32
WARMUP_S = 0.05
SINC_CUTOFF = 0.9  # fraction of Nyquist
PULSE_SHAPES = ("impulse", "rosenberg", "whisper")


@dataclass(frozen=True)
class SynthSpec:
    f0_hz: float = 120.0
    duration_s: float = 2.0
    jitter_frac: float = 0.0
    shimmer_frac: float = 0.0
    noise_rms_frac: float = 0.0
    formants_hz: tuple[float, float, float] = (700.0, 1220.0, 2600.0)
    formant_bw_hz: tuple[float, float, float] = (80.0, 90.0, 120.0)
    pulse_shape: str = "rosenberg"
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if not 50.0 <= self.f0_hz <= 600.0:
            raise ValueError(f"f0_hz {self.f0_hz} outside [50, 600]")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        for name in ("jitter_frac", "shimmer_frac", "noise_rms_frac"):
            v = getattr(self, name)
            if not 0.0 <= v < 0.5:
                raise ValueError(f"{name} must be in [0, 0.5), got {v}")
        if len(self.formants_hz) != 3 or len(self.formant_bw_hz) != 3:
            raise ValueError("need exactly three formants and bandwidths")
        if self.pulse_shape not in PULSE_SHAPES:
            raise ValueError(f"pulse_shape must be one of {PULSE_SHAPES}")


@dataclass(frozen=True)
class Excitation:
    """Ground truth of one synthesis run (times in seconds)."""

    pulse_times: np.ndarray
    amplitudes: np.ndarray

    @property
    def periods(self) -> np.ndarray:
        return np.diff(self.pulse_times)


def pulse_schedule(
    spec: SynthSpec, rng: np.random.Generator
) -> Excitation:
    """Draw jittered pulse times and shimmered amplitudes covering the duration."""
    period = 1.0 / spec.f0_hz
    # generous upper bound on the pulse count, drawn in one go for reproducibility
    n_max = int(np.ceil(spec.duration_s / (period * 0.5))) + 4
    eta = rng.normal(0.0, spec.jitter_frac, n_max) if spec.jitter_frac > 0 else np.zeros(n_max)
    xi = rng.normal(0.0, spec.shimmer_frac, n_max) if spec.shimmer_frac > 0 else np.zeros(n_max)
    periods = period * np.clip(1.0 + eta, 0.5, 1.5)
    times = 0.25 * period + np.concatenate([[0.0], np.cumsum(periods[:-1])])
    keep = times < spec.duration_s
    amps = np.clip(1.0 + xi, 0.05, None)
    return Excitation(times[keep], amps[keep])


def _rosenberg_derivative(t: np.ndarray, period: float) -> np.ndarray:
    """Derivative of the Rosenberg glottal flow pulse (opening 40%, closing 16%)."""
    tp, tn = 0.40 * period, 0.16 * period
    out = np.zeros_like(t)
    rise = (t >= 0) & (t < tp)
    fall = (t >= tp) & (t < tp + tn)
    out[rise] = 0.5 * np.pi / tp * np.sin(np.pi * t[rise] / tp)
    out[fall] = -np.pi / (2.0 * tn) * np.sin(np.pi * (t[fall] - tp) / (2.0 * tn))
    return out * period


def _bandlimited_train(times_s: np.ndarray, amps: np.ndarray, n: int, rate: int) -> np.ndarray:
    """Sum of windowed-sinc impulses centred exactly on each pulse time.

    Every pulse is the same band-limited kernel shifted by a fractional
    delay, so equal periods give an exactly periodic signal.
    """
    out = np.zeros(n + 2 * SINC_HALF)
    taps = np.arange(-SINC_HALF, SINC_HALF + 1)
    pos = np.asarray(times_s, dtype=np.float64) * rate
    i0 = np.floor(pos).astype(int)
    d = taps[None, :] - (pos - i0)[:, None]
    kernels = SINC_CUTOFF * np.sinc(SINC_CUTOFF * d) * np.kaiser(taps.size, 8.0)[None, :]
    np.add.at(out, i0[:, None] + np.arange(taps.size)[None, :], np.asarray(amps)[:, None] * kernels)
    return out[SINC_HALF : SINC_HALF + n]


def excitation_signal(spec: SynthSpec, ex: Excitation) -> np.ndarray:
    """Band-limited excitation: impulse train, optionally shaped by a glottal pulse."""
    rate = spec.sample_rate_hz
    n_out = int(round(spec.duration_s * rate))
    e = _bandlimited_train(ex.pulse_times, ex.amplitudes, n_out, rate)
    if spec.pulse_shape == "impulse":
        return e
    nominal = 1.0 / spec.f0_hz
    t = np.arange(int(np.ceil(0.56 * nominal * rate)) + 2) / rate
    shape = _rosenberg_derivative(t, nominal)
    return signal.lfilter(shape, [1.0], e)


def resonator_coeffs(freq_hz: float, bw_hz: float, rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-pole resonator with unit DC gain; pole radius exp(-pi*bw/rate)."""
    r = np.exp(-np.pi * bw_hz / rate)
    theta = 2.0 * np.pi * freq_hz / rate
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    b = np.array([a.sum()])
    return b, a


def vocal_tract(x: np.ndarray, formants, bandwidths, rate: int) -> np.ndarray:
    y = x
    for f, bw in zip(formants, bandwidths):
        b, a = resonator_coeffs(f, bw, rate)
        y = signal.lfilter(b, a, y)
    return y


def synth_raw(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, Excitation]:
    """Unnormalized (harmonic, noise, ground truth) components.

    Synthesis starts WARMUP_S early and the lead-in is dropped, so the
    resonators are already ringing at t = 0 and the first pulse looks like
    every other one.
    """
    rate = spec.sample_rate_hz
    n_out = int(round(spec.duration_s * rate))
    n_warm = int(round(WARMUP_S * rate))
    if spec.pulse_shape == "whisper":
        # aperiodic source: the tract is driven by noise and no pulses exist
        source = rng.normal(0.0, 1.0, n_out + n_warm)
        ex = Excitation(np.zeros(0), np.zeros(0))
    else:
        long_spec = replace(spec, duration_s=(n_out + n_warm) / rate)
        ex_long = pulse_schedule(long_spec, rng)
        source = excitation_signal(long_spec, ex_long)
        keep = ex_long.pulse_times >= n_warm / rate
        ex = Excitation(ex_long.pulse_times[keep] - n_warm / rate, ex_long.amplitudes[keep])
    harmonic = vocal_tract(source, spec.formants_hz, spec.formant_bw_hz, rate)[n_warm:]
    harmonic = harmonic - harmonic.mean()
    rms = float(np.sqrt(np.mean(harmonic**2)))
    if spec.noise_rms_frac > 0:
        noise = rng.normal(0.0, spec.noise_rms_frac * rms, harmonic.size)
    else:
        noise = np.zeros_like(harmonic)
    return harmonic, noise, ex


def synth_voice(
    spec: SynthSpec,
    rng: np.random.Generator,
    source_id: str = "synth",
    gender: str | None = None,
    tags=(),
) -> Waveform:
    """Pulse train -> three cascaded resonators -> additive white noise -> [0, 1]."""
    harmonic, noise, _ = synth_raw(spec, rng)
    y, _ = normalize_minmax(harmonic + noise)
    return Waveform(y, spec.sample_rate_hz, source_id=source_id, gender=gender, tags=frozenset(tags))


# ------------------------------------------------------------------ corpus


@dataclass(frozen=True)
class CorpusSpec:
    n_per_gender: int = 50
    f0_dist_f: tuple[float, float] = (210.0, 30.0)
    f0_dist_m: tuple[float, float] = (120.0, 25.0)
    jitter_range: tuple[float, float] = (0.002, 0.01)
    shimmer_range: tuple[float, float] = (0.01, 0.05)
    # roughly 10 to 34 dB HNR, the spread of recordings made outside a studio
    noise_range: tuple[float, float] = (0.02, 0.30)
    # vocal-tract length differences shift all formants together
    formants_m: tuple[float, float, float] = (650.0, 1150.0, 2450.0)
    formant_scale_f: float = 1.15
    formant_jitter: float = 0.06
    formant_bw_hz: tuple[float, float, float] = (80.0, 90.0, 120.0)
    duration_s: float = 6.0
    pulse_shape: str = "rosenberg"
    seed: int = 0
    # force every utterance's f0 into this (mean, std) regardless of gender
    f0_override: tuple[float, float] | None = None
    tags: tuple[str, ...] = ()
    id_prefix: str = "syn"

    def __post_init__(self):
        if self.n_per_gender < 1:
            raise ValueError("n_per_gender must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _draw(rng: np.random.Generator, lo_hi: tuple[float, float]) -> float:
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def make_corpus(spec: CorpusSpec) -> tuple[list[Waveform], Manifest]:
    """``2 * n_per_gender`` labeled utterances, alternating F/M, deterministic under seed."""
    rng = np.random.default_rng(spec.seed)
    waves: list[Waveform] = []
    entries: list[ManifestEntry] = []
    for i in range(spec.n_per_gender):
        for gender in ("F", "M"):
            mean, std = spec.f0_override or (spec.f0_dist_f if gender == "F" else spec.f0_dist_m)
            f0 = float(np.clip(rng.normal(mean, std), 60.0, 500.0))
            scale = spec.formant_scale_f if gender == "F" else 1.0
            vowel = 1.0 + rng.uniform(-spec.formant_jitter, spec.formant_jitter, 3)
            formants = tuple(float(f * scale * v) for f, v in zip(spec.formants_m, vowel))
            sspec = SynthSpec(
                f0_hz=f0,
                duration_s=spec.duration_s,
                jitter_frac=_draw(rng, spec.jitter_range),
                shimmer_frac=_draw(rng, spec.shimmer_range),
                noise_rms_frac=_draw(rng, spec.noise_range),
                formants_hz=formants,
                formant_bw_hz=spec.formant_bw_hz,
                pulse_shape=spec.pulse_shape,
            )
            sid = f"{spec.id_prefix}{spec.seed}_{gender}{i:04d}"
            child = np.random.default_rng([spec.seed, i, 0 if gender == "F" else 1])
            waves.append(synth_voice(sspec, child, source_id=sid, gender=gender, tags=spec.tags))
            entries.append(ManifestEntry(f"{sid}.wav", sid, gender, frozenset(spec.tags)))
    return waves, Manifest(entries)


# Synthetic stand-ins for recorded voice adaptations: (f0 override, pulse shape).
# None keeps each speaker's own gender distribution.
ADAPTATIONS: dict[str, tuple[tuple[float, float] | None, str]] = {
    "default": (None, "rosenberg"),
    "whisper": (None, "whisper"),
    "lowrobot": ((100.0, 0.0), "rosenberg"),
    "highrobot": ((230.0, 0.0), "rosenberg"),
    "overlyhappy": ((260.0, 20.0), "rosenberg"),
}


def make_adaptation_corpus(
    base: CorpusSpec, adaptations: tuple[str, ...] = tuple(ADAPTATIONS)
) -> tuple[list[Waveform], Manifest]:
    """One sub-corpus per adaptation, tagged ``adaptation:<name>``.

    Monotone adaptations get zero jitter; ``overlyhappy`` puts every speaker
    in the F pitch range regardless of gender.
    """
    waves: list[Waveform] = []
    entries: list[ManifestEntry] = []
    for k, name in enumerate(adaptations):
        if name not in ADAPTATIONS:
            raise ValueError(f"unknown adaptation {name!r}")
        f0, shape = ADAPTATIONS[name]
        monotone = f0 is not None and f0[1] == 0.0
        spec = replace(
            base,
            seed=base.seed * 1000 + k,
            f0_override=f0,
            pulse_shape=shape,
            jitter_range=(0.0, 0.0) if monotone else base.jitter_range,
            tags=base.tags + (f"adaptation:{name}",),
            id_prefix=f"{name}_",
        )
        w, m = make_corpus(spec)
        waves.extend(w)
        entries.extend(m.entries)
    return waves, Manifest(entries)
