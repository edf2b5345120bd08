"""Period and amplitude perturbation measures, voice breaks and pitch statistics.

Undefined measures fall back to a 0 sentinel and add a quality flag so the
feature vector always has a fixed width.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pitch import PitchConfig, PitchTrack
from .pulses import PulseSequence


@dataclass
class Measures:
    values: dict[str, float] = field(default_factory=dict)
    flags: set[str] = field(default_factory=set)


def period_chains(p: PulseSequence, cfg: PitchConfig) -> list[np.ndarray]:
    """Split pulse times into chains whose consecutive intervals are valid periods."""
    if len(p) == 0:
        return []
    t = p.times
    gaps = np.diff(t)
    ok = (gaps >= 1.0 / cfg.ceiling_hz) & (gaps <= cfg.max_period_s)
    if t.size > 1:
        ok &= p.run_ids[1:] == p.run_ids[:-1]
    chains, start = [], 0
    for i, good in enumerate(ok):
        if not good:
            chains.append(np.arange(start, i + 1))
            start = i + 1
    chains.append(np.arange(start, t.size))
    return chains


def _smoothing_terms(values: np.ndarray, width: int) -> np.ndarray:
    """|v_i - mean(v_{i-k..i+k})| for every i with a full centered window."""
    if values.size < width:
        return np.zeros(0)
    kernel = np.ones(width) / width
    avg = np.convolve(values, kernel, mode="valid")
    k = width // 2
    return np.abs(values[k : values.size - k] - avg)


def jitter_measures(p: PulseSequence, cfg: PitchConfig = PitchConfig()) -> Measures:
    out = Measures()
    periods = [np.diff(p.times[c]) for c in period_chains(p, cfg)]
    periods = [T for T in periods if T.size > 0]
    all_T = np.concatenate(periods) if periods else np.zeros(0)
    n = all_T.size
    mean_T = float(all_T.mean()) if n else 0.0

    diffs = np.concatenate([np.abs(np.diff(T)) for T in periods]) if periods else np.zeros(0)
    if n >= 3 and diffs.size:
        out.values["jitter_local_absolute"] = float(diffs.mean())
        out.values["jitter_local"] = float(diffs.mean() / mean_T)
    else:
        out.values["jitter_local_absolute"] = 0.0
        out.values["jitter_local"] = 0.0
        out.flags.add("jitter_local_undefined")

    for name, width, need in (("jitter_rap", 3, 4), ("jitter_ppq5", 5, 6)):
        terms = [_smoothing_terms(T, width) for T in periods]
        terms = np.concatenate(terms) if terms else np.zeros(0)
        if n >= need and terms.size:
            out.values[name] = float(terms.mean() / mean_T)
        else:
            out.values[name] = 0.0
            out.flags.add(f"{name}_undefined")
    return out


def shimmer_measures(p: PulseSequence, cfg: PitchConfig = PitchConfig()) -> Measures:
    out = Measures()
    amp_chains = []
    for c in period_chains(p, cfg):
        a = p.amplitudes[c]
        if np.any(a <= 0):
            out.flags.add("shimmer_nonpositive_amplitude")
            # a non-positive pulse breaks the chain
            pieces = np.split(a, np.flatnonzero(a <= 0))
            amp_chains.extend(piece[piece > 0] for piece in pieces)
        else:
            amp_chains.append(a)
    amp_chains = [a for a in amp_chains if a.size > 0]
    all_A = np.concatenate(amp_chains) if amp_chains else np.zeros(0)
    mean_A = float(all_A.mean()) if all_A.size else 0.0

    diffs = [np.abs(np.diff(a)) for a in amp_chains if a.size >= 2]
    if diffs:
        d = np.concatenate(diffs)
        ratios = np.concatenate(
            [np.abs(20.0 * np.log10(a[1:] / a[:-1])) for a in amp_chains if a.size >= 2]
        )
        out.values["shimmer_local"] = float(d.mean() / mean_A)
        out.values["shimmer_local_db"] = float(ratios.mean())
    else:
        out.values["shimmer_local"] = 0.0
        out.values["shimmer_local_db"] = 0.0
        out.flags.add("shimmer_local_undefined")

    for width in (3, 5, 11):
        name = f"shimmer_apq{width}"
        terms = [_smoothing_terms(a, width) for a in amp_chains]
        terms = np.concatenate(terms) if terms else np.zeros(0)
        if terms.size:
            out.values[name] = float(terms.mean() / mean_A)
        else:
            out.values[name] = 0.0
            out.flags.add(f"{name}_undefined")
    return out


def voice_break_stats(
    p: PulseSequence, track: PitchTrack, cfg: PitchConfig, total_s: float
) -> Measures:
    """Pulse/period counts, voice breaks, unvoiced fraction and pitch statistics."""
    out = Measures()
    v = out.values
    v["num_pulses"] = float(len(p))
    if len(p) >= 2:
        gaps = np.diff(p.times)
        breaks = gaps > cfg.max_period_s
        valid = (gaps >= 1.0 / cfg.ceiling_hz) & ~breaks
        v["num_voicebreaks"] = float(breaks.sum())
        v["degree_voicebreaks"] = float(min(gaps[breaks].sum() / total_s, 1.0))
        periods = gaps[valid]
    else:
        v["num_voicebreaks"] = 0.0
        v["degree_voicebreaks"] = 0.0
        periods = np.zeros(0)
    v["num_periods"] = float(periods.size)
    if periods.size:
        v["period_mean"] = float(periods.mean())
        v["period_std"] = float(periods.std(ddof=1)) if periods.size > 1 else 0.0
        v["f0"] = 1.0 / v["period_mean"]
    else:
        v["period_mean"] = v["period_std"] = v["f0"] = 0.0
        out.flags.add("no_periods")

    voiced = track.voiced
    v["fraction_unvoiced"] = float(1.0 - voiced.mean()) if len(track) else 1.0
    f0 = track.f0[voiced]
    if f0.size:
        v["pitch_min"] = float(f0.min())
        v["pitch_max"] = float(f0.max())
        v["pitch_mean"] = float(f0.mean())
        v["pitch_median"] = float(np.median(f0))
        v["pitch_std"] = float(f0.std(ddof=1)) if f0.size > 1 else 0.0
    else:
        for k in ("pitch_min", "pitch_max", "pitch_mean", "pitch_median", "pitch_std"):
            v[k] = 0.0
        out.flags.add("no_voiced_frames")
    return out
