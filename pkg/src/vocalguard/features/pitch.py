"""Autocorrelation pitch tracking.

Each frame's autocorrelation is normalized by the autocorrelation of the
analysis window, so a perfectly periodic frame peaks near 1 at its period.
Lags are evaluated on a grid 1/4 sample apart (zero-padded spectrum) and the
best peak is refined with a parabola, which keeps peak strength accurate for
periods that are not a whole number of samples.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..audio_io import Waveform, frame_array, make_window

log = logging.getLogger(__name__)

LAG_UPSAMPLE = 4


@dataclass(frozen=True)
class PitchConfig:
    floor_hz: float = 75.0
    ceiling_hz: float = 600.0
    frame_s: float = 0.040
    hop_s: float = 0.010
    voicing_threshold: float = 0.45
    silence_threshold_db: float = -40.0
    octave_cost: float = 0.1

    def __post_init__(self):
        if not 0 < self.floor_hz < self.ceiling_hz:
            raise ValueError("need 0 < floor_hz < ceiling_hz")
        if not 0.0 < self.voicing_threshold < 1.0:
            raise ValueError("voicing_threshold must lie in (0, 1)")
        if not self.frame_s >= self.hop_s > 0:
            raise ValueError("need frame_s >= hop_s > 0")
        if self.frame_s < 3.0 / self.floor_hz - 1e-12:
            log.warning(
                "frame_s %.4f s holds fewer than 3 periods of the %.0f Hz floor",
                self.frame_s,
                self.floor_hz,
            )

    @property
    def max_period_s(self) -> float:
        """Longest inter-pulse interval that is still one period (Praat's 1.25/floor)."""
        return 1.25 / self.floor_hz


@dataclass(frozen=True, eq=False)
class PitchTrack:
    times: np.ndarray  # frame centers, s
    f0: np.ndarray  # Hz, 0.0 where unvoiced
    strength: np.ndarray  # r' in [0, 1]
    intensity_db: np.ndarray  # frame level relative to the loudest frame
    frame_s: float
    hop_s: float

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    def __len__(self) -> int:
        return self.times.size

    def voiced_runs(self) -> list[tuple[int, int]]:
        """Half-open [start, stop) frame index ranges of consecutive voiced frames."""
        v = self.voiced.astype(np.int8)
        edges = np.diff(np.concatenate([[0], v, [0]]))
        starts = np.flatnonzero(edges == 1)
        stops = np.flatnonzero(edges == -1)
        return list(zip(starts.tolist(), stops.tolist()))


def _autocorr_fine(frames: np.ndarray, nfft: int) -> np.ndarray:
    """Autocorrelation of each row on a lag grid of 1/LAG_UPSAMPLE samples."""
    spec = np.fft.rfft(frames, n=nfft, axis=-1)
    power = spec.real**2 + spec.imag**2
    # the Nyquist bin is shared by both halves of the original spectrum
    power[..., -1] *= 0.5
    return np.fft.irfft(power, n=nfft * LAG_UPSAMPLE, axis=-1) * LAG_UPSAMPLE


def normalized_autocorr(frames: np.ndarray, window: np.ndarray) -> np.ndarray:
    """r'(tau) = (r_x(tau)/r_x(0)) / (r_w(tau)/r_w(0)) for windowed, DC-removed frames."""
    length = frames.shape[-1]
    nfft = 1 << int(np.ceil(np.log2(2 * length)))
    rx = _autocorr_fine(frames, nfft)
    rw = _autocorr_fine(window[None, :], nfft)[0]
    max_lag = (length // 2) * LAG_UPSAMPLE
    rx = rx[:, :max_lag]
    rw = rw[:max_lag]
    r0 = rx[:, :1]
    safe = np.where(r0 > 0, r0, 1.0)
    out = (rx / safe) / (rw / rw[0])
    out[r0[:, 0] <= 0] = 0.0
    return out


def _parabolic(y0: np.ndarray, y1: np.ndarray, y2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vertex offset in [-0.5, 0.5] and height of the parabola through three points."""
    denom = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom < 0, 0.5 * (y0 - y2) / denom, 0.0)
    off = np.clip(off, -0.5, 0.5)
    height = y1 - 0.25 * (y0 - y2) * off
    return off, height


def _best_candidates(
    r: np.ndarray, lo: int, hi: int, rate: int, cfg: PitchConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy per-frame choice among local maxima in the admissible lag range.

    Score = r' + octave_cost * log2(f / floor), favoring the highest-frequency
    candidate among near-equal peaks (avoids picking period multiples).
    Returns (f0 Hz, r') per frame; f0 = 0 where no peak exists.
    """
    n = r.shape[0]
    seg = r[:, lo - 1 : hi + 2]
    mid = seg[:, 1:-1]
    is_peak = (mid >= seg[:, :-2]) & (mid > seg[:, 2:]) & (mid > 0)
    lags_fine = np.arange(lo, hi + 1)
    f0 = np.zeros(n)
    strength = np.zeros(n)
    for i in range(n):
        idx = np.flatnonzero(is_peak[i])
        if idx.size == 0:
            continue
        off, height = _parabolic(seg[i, idx], seg[i, idx + 1], seg[i, idx + 2])
        lag = (lags_fine[idx] + off) / LAG_UPSAMPLE
        freq = rate / lag
        score = height + cfg.octave_cost * np.log2(freq / cfg.floor_hz)
        j = int(np.argmax(score))
        f0[i] = freq[j]
        strength[i] = min(max(height[j], 0.0), 1.0)
    return f0, strength


def _median3_runs(f0: np.ndarray, voiced: np.ndarray) -> np.ndarray:
    """3-point median within voiced runs (run edges keep their value)."""
    out = f0.copy()
    for i in range(1, f0.size - 1):
        if voiced[i - 1] and voiced[i] and voiced[i + 1]:
            out[i] = np.median(f0[i - 1 : i + 2])
    return out


def frame_levels_db(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    frames = frame_array(x, frame_len, hop)
    frames = frames - frames.mean(axis=1, keepdims=True)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(rms)


def track_pitch(w: Waveform, cfg: PitchConfig = PitchConfig()) -> PitchTrack:
    rate = w.sample_rate_hz
    frame_len = int(round(cfg.frame_s * rate))
    hop = int(round(cfg.hop_s * rate))
    x = w.samples
    if x.size < frame_len:
        x = np.concatenate([x, np.full(frame_len - x.size, x.mean())])
    raw = frame_array(x, frame_len, hop)
    times = (np.arange(raw.shape[0]) * hop + frame_len / 2.0) / rate

    level = frame_levels_db(x, frame_len, hop)
    loudest = np.max(level)
    if not np.isfinite(loudest):
        rel = np.full(level.shape, -np.inf)
    else:
        rel = level - loudest

    window = make_window("hann", frame_len)
    frames = (raw - raw.mean(axis=1, keepdims=True)) * window
    r = normalized_autocorr(frames, window)

    lo = int(np.ceil(rate / cfg.ceiling_hz * LAG_UPSAMPLE))
    hi = int(np.floor(rate / cfg.floor_hz * LAG_UPSAMPLE))
    hi = min(hi, r.shape[1] - 2)
    f0, strength = _best_candidates(r, lo, hi, rate, cfg)

    voiced = (
        (f0 > 0)
        & (strength >= cfg.voicing_threshold)
        & (rel > cfg.silence_threshold_db)
        & (f0 >= cfg.floor_hz)
        & (f0 <= cfg.ceiling_hz)
    )
    f0 = np.where(voiced, f0, 0.0)
    f0 = np.where(voiced, _median3_runs(f0, voiced), 0.0)
    return PitchTrack(times, f0, strength, rel, cfg.frame_s, cfg.hop_s)
