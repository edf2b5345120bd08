"""Harmonicity, intensity and spectral centre of gravity."""
from __future__ import annotations

import numpy as np

from ..audio_io import Waveform, frame_array
from .measures import Measures
from .pitch import PitchTrack

STRENGTH_CLAMP = 1e-6
INTENSITY_FLOOR_DB = -80.0


def harmonicity(track: PitchTrack) -> Measures:
    """autocor_mean, nhr_mean and hnr_mean from voiced-frame peak strengths."""
    out = Measures()
    r = track.strength[track.voiced]
    if r.size == 0:
        out.values.update(autocor_mean=0.0, nhr_mean=0.0, hnr_mean=0.0)
        out.flags.add("harmonicity_undefined")
        return out
    r = np.clip(r, STRENGTH_CLAMP, 1.0 - STRENGTH_CLAMP)
    out.values["autocor_mean"] = float(r.mean())
    out.values["nhr_mean"] = float(np.mean((1.0 - r) / r))
    out.values["hnr_mean"] = float(np.mean(10.0 * np.log10(r / (1.0 - r))))
    return out


def intensity_stats(w: Waveform, frame_s: float = 0.032, hop_s: float = 0.010) -> Measures:
    """Frame RMS level in dB re full scale (1.0), floored at -80 dB."""
    out = Measures()
    rate = w.sample_rate_hz
    frame_len = int(round(frame_s * rate))
    hop = int(round(hop_s * rate))
    x = w.samples
    if x.size < frame_len:
        x = np.concatenate([x, np.full(frame_len - x.size, x.mean())])
    frames = frame_array(x, frame_len, hop)
    frames = frames - frames.mean(axis=1, keepdims=True)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    with np.errstate(divide="ignore"):
        db = np.maximum(20.0 * np.log10(rms), INTENSITY_FLOOR_DB)
    live = db[db > INTENSITY_FLOOR_DB]
    if live.size == 0:
        for k in ("intensity_min", "intensity_max", "intensity_mean", "intensity_std"):
            out.values[k] = INTENSITY_FLOOR_DB
        out.flags.add("intensity_silent")
        return out
    out.values["intensity_min"] = float(live.min())
    out.values["intensity_max"] = float(live.max())
    out.values["intensity_mean"] = float(live.mean())
    out.values["intensity_std"] = float(live.std(ddof=1)) if live.size > 1 else 0.0
    return out


def spectral_cog(w: Waveform) -> float:
    """Power-weighted mean frequency of the whole (DC-removed) utterance; 0 if silent."""
    x = w.samples - w.samples.mean()
    spec = np.fft.rfft(x)
    power = spec.real**2 + spec.imag**2
    total = power.sum()
    if total <= 0 or not np.isfinite(total):
        return 0.0
    freqs = np.fft.rfftfreq(x.size, 1.0 / w.sample_rate_hz)
    return float(np.dot(freqs, power) / total)
