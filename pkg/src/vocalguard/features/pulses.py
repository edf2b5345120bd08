"""Glottal pulse marking within voiced stretches of a pitch track."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..audio_io import Waveform
from .pitch import PitchTrack

SEARCH_FRAC = 0.2
MIN_MATCH = 0.5
PEAK_FRAC = 0.1
EDGE_MIN_RATIO = 0.7


@dataclass(frozen=True, eq=False)
class PulseSequence:
    times: np.ndarray  # s, strictly increasing
    amplitudes: np.ndarray  # peak |deviation| from local mean
    run_ids: np.ndarray  # voiced run each pulse belongs to

    def __len__(self) -> int:
        return self.times.size

    @classmethod
    def empty(cls) -> "PulseSequence":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))


def _refine(dev: np.ndarray, i: int) -> tuple[float, float]:
    """Parabolic sub-sample position and height around sample ``i``."""
    if i <= 0 or i >= dev.size - 1:
        return float(i), float(dev[i])
    y0, y1, y2 = dev[i - 1], dev[i], dev[i + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom >= 0:
        return float(i), float(y1)
    off = float(np.clip(0.5 * (y0 - y2) / denom, -0.5, 0.5))
    return i + off, float(y1 - 0.25 * (y0 - y2) * off)


def _moving_mean(x: np.ndarray, length: float) -> np.ndarray:
    """Centered mean over a window of fractional ``length`` samples.

    The running sum is interpolated linearly at the window ends. Near the
    signal edges the window slides inward instead of shrinking, so it always
    spans a full period.
    """
    length = min(float(length), float(x.size))
    c = np.concatenate([[0.0], np.cumsum(x)])
    grid = np.arange(c.size, dtype=np.float64)
    lo = np.clip(np.arange(x.size) + 0.5 - length / 2.0, 0.0, x.size - length)
    return (np.interp(lo + length, grid, c) - np.interp(lo, grid, c)) / length


def _local_period(track: PitchTrack, t: float) -> float:
    voiced = track.voiced
    times = track.times[voiced]
    f0 = track.f0[voiced]
    return 1.0 / float(np.interp(t, times, f0))


def _is_local_max(y: np.ndarray, k: int) -> bool:
    # a window maximum sitting on a clipped edge is a slope, not a pulse
    return 0 < k < y.size - 1 and y[k] >= y[k - 1] and y[k] >= y[k + 1]


def _next_peak(
    signed: np.ndarray, p: float, T: float, direction: int, i_lo: int, i_hi: int
) -> tuple[float, float] | None:
    """Edge fallback: the polarity peak within +/-20% of one period away.

    Without a waveform match to confirm it, a peak much lower than the
    pulse it follows is taken to be ringing rather than a new cycle.
    """
    centre = p + direction * T
    lo = max(int(np.ceil(centre - SEARCH_FRAC * T)), i_lo)
    hi = min(int(np.floor(centre + SEARCH_FRAC * T)), i_hi)
    if hi - lo < 1:
        return None
    k = lo + int(np.argmax(signed[lo : hi + 1]))
    if not _is_local_max(signed, k):
        return None
    p_new, height = _refine(signed, k)
    if height < EDGE_MIN_RATIO * _refine(signed, int(round(p)))[1] or direction * (p_new - p) <= 0:
        return None
    return p_new, height


def _next_pulse(
    dev: np.ndarray, signed: np.ndarray, p: float, T: float, direction: int, i_lo: int, i_hi: int
) -> tuple[float, float] | None:
    """Position (samples) and height of the neighbouring pulse, or None at the run edge.

    The shift is the lag that best matches one period of waveform around
    ``p`` against the next (or previous) period, refined parabolically.
    Matching whole periods keeps the pulse on the same phase of the cycle
    even when formant ringing makes several peaks per period look alike.
    """
    m = int(round(T))
    s0 = int(round(p - T / 2.0))
    lags = np.arange(int(np.floor((1.0 - SEARCH_FRAC) * T)), int(np.ceil((1.0 + SEARCH_FRAC) * T)) + 1)
    if direction < 0:
        lags = -lags[::-1]
    first, last = s0 + lags[0], s0 + lags[-1] + m
    if s0 < 0 or s0 + m > dev.size or first < 0 or last > dev.size:
        return _next_peak(signed, p, T, direction, i_lo, i_hi)
    tmpl = dev[s0 : s0 + m]
    cands = np.lib.stride_tricks.sliding_window_view(dev[first:last], m)
    norms = np.sqrt(np.einsum("ij,ij->i", cands, cands) * float(tmpl @ tmpl))
    r = np.divide(cands @ tmpl, norms, out=np.zeros(len(cands)), where=norms > 0)
    j = int(np.argmax(r))
    if r[j] < MIN_MATCH:
        return None
    off = 0.0
    if 0 < j < r.size - 1:
        denom = r[j - 1] - 2.0 * r[j] + r[j + 1]
        if denom < 0:
            off = float(np.clip(0.5 * (r[j - 1] - r[j + 1]) / denom, -0.5, 0.5))
    p_new = p + lags[j] + off
    if not i_lo <= p_new <= i_hi:
        return None
    # height: the peak with the run's polarity next to the new position
    w = max(1, int(round(PEAK_FRAC * T)))
    lo, hi = max(int(round(p_new)) - w, 0), min(int(round(p_new)) + w, dev.size - 1)
    k = lo + int(np.argmax(signed[lo : hi + 1]))
    if not _is_local_max(signed, k):
        return None
    peak, height = _refine(signed, k)
    if height <= 0:
        return None
    return peak, height


def extract_pulses(w: Waveform, track: PitchTrack) -> PulseSequence:
    """Mark one pulse per period inside each voiced run.

    Each run is seeded at its strongest deviation peak; pulses are then
    propagated one local period at a time in both directions by waveform
    matching within +/-20% of the expected period.
    """
    if not np.any(track.voiced):
        return PulseSequence.empty()
    rate = w.sample_rate_hz
    x = w.samples

    half_frame = track.hop_s / 2.0
    times, amps, runs = [], [], []
    for run_id, (a, b) in enumerate(track.voiced_runs()):
        # runs touching either end of the track extend to the signal edge
        t_lo = 0.0 if a == 0 else track.times[a] - half_frame
        t_hi = (x.size - 1) / rate if b == len(track) else track.times[b - 1] + half_frame
        i_lo, i_hi = int(np.ceil(t_lo * rate)), int(np.floor(t_hi * rate))
        if i_hi - i_lo < 3:
            continue
        # one-period moving mean: exactly the DC level of a periodic stretch
        run_f0 = float(np.median(track.f0[a:b]))
        dev = x - _moving_mean(x, rate / run_f0)
        seg = dev[i_lo : i_hi + 1]
        seed = i_lo + int(np.argmax(np.abs(seg)))
        polarity = 1.0 if dev[seed] >= 0 else -1.0
        signed = polarity * dev

        pos, height = _refine(signed, seed)
        run_t = [pos]
        run_a = [height]
        for direction in (1, -1):
            p = pos
            while True:
                step = _next_pulse(dev, signed, p, _local_period(track, p / rate) * rate, direction, i_lo, i_hi)
                if step is None:
                    break
                p, hgt = step
                if direction > 0:
                    run_t.append(p)
                    run_a.append(hgt)
                else:
                    run_t.insert(0, p)
                    run_a.insert(0, hgt)
        run_t = [t / rate for t in run_t]
        times.extend(run_t)
        amps.extend(run_a)
        runs.extend([run_id] * len(run_t))
    if not times:
        return PulseSequence.empty()
    times_arr = np.asarray(times)
    order = np.argsort(times_arr, kind="stable")
    times_arr = times_arr[order]
    keep = np.concatenate([[True], np.diff(times_arr) > 0])
    return PulseSequence(
        times_arr[keep], np.asarray(amps)[order][keep], np.asarray(runs)[order][keep]
    )
