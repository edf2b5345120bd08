"""Formant estimation: pre-emphasis, 10 kHz analysis, Burg LPC, polynomial roots."""
from __future__ import annotations

import numpy as np
from scipy import signal

from ..audio_io import Waveform, make_window
from .measures import Measures
from .pitch import PitchTrack

ANALYSIS_RATE = 10000
LPC_ORDER = 10
WINDOW_S = 0.025
F_MIN, F_MAX, BW_MAX = 90.0, 4800.0, 400.0
# a frame predicted this well is a bare sinusoid, not a vocal-tract response
DEGENERATE_GAIN_DB = 50.0


def burg(frames: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Burg's method on every row at once.

    Returns prediction polynomials ``a`` of shape (n, order + 1) with
    a[:, 0] = 1, i.e. x[t] + sum_k a[k] x[t-k] is the forward error, and the
    residual-to-signal power ratio prod(1 - k_m^2) of each row.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n, length = frames.shape
    a = np.zeros((n, order + 1))
    a[:, 0] = 1.0
    ratio = np.ones(n)
    f = frames.copy()
    b = frames.copy()
    for m in range(order):
        ef = f[:, m + 1 :]
        eb = b[:, m : length - 1]
        num = -2.0 * np.sum(ef * eb, axis=1)
        den = np.sum(ef * ef, axis=1) + np.sum(eb * eb, axis=1)
        k = np.divide(num, den, out=np.zeros(n), where=den > 0)
        ratio *= 1.0 - k * k
        a_prev = a.copy()
        a[:, 1 : m + 2] = a_prev[:, 1 : m + 2] + k[:, None] * a_prev[:, m::-1]
        f_new = ef + k[:, None] * eb
        b_new = eb + k[:, None] * ef
        f[:, m + 1 :] = f_new
        b[:, m + 1 :] = b_new
    return a, ratio


def lpc_roots(a: np.ndarray) -> np.ndarray:
    """Roots of each prediction polynomial via companion-matrix eigenvalues."""
    n, p1 = a.shape
    order = p1 - 1
    comp = np.zeros((n, order, order))
    comp[:, 0, :] = -a[:, 1:]
    comp[:, np.arange(1, order), np.arange(order - 1)] = 1.0
    return np.linalg.eigvals(comp)


def roots_to_formants(roots: np.ndarray, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Frequencies and bandwidths (Hz) of the upper-half-plane roots of one frame."""
    r = roots[roots.imag > 0]
    freqs = np.angle(r) * rate / (2.0 * np.pi)
    bws = -np.log(np.abs(r)) * rate / np.pi
    return freqs, bws


def preemphasize(x: np.ndarray, rate: float, from_hz: float = 50.0) -> np.ndarray:
    alpha = np.exp(-2.0 * np.pi * from_hz / rate)
    return np.concatenate([[x[0]], x[1:] - alpha * x[:-1]])


def formant_frames(w: Waveform, track: PitchTrack) -> tuple[np.ndarray, np.ndarray]:
    """F1-F3 per voiced frame and each frame's LPC prediction gain (dB).

    Rows are NaN where a frame had fewer than 3 qualifying roots.
    """
    voiced_t = track.times[track.voiced]
    if voiced_t.size == 0:
        return np.zeros((0, 3)), np.zeros(0)
    x = w.samples - w.samples.mean()
    x = preemphasize(x, w.sample_rate_hz)
    g = np.gcd(int(w.sample_rate_hz), ANALYSIS_RATE)
    y = signal.resample_poly(x, ANALYSIS_RATE // g, int(w.sample_rate_hz) // g)

    length = int(round(WINDOW_S * ANALYSIS_RATE))
    centres = np.round(voiced_t * ANALYSIS_RATE).astype(int)
    starts = np.clip(centres - length // 2, 0, max(y.size - length, 0))
    if y.size < length:
        return np.full((voiced_t.size, 3), np.nan), np.zeros(voiced_t.size)
    idx = starts[:, None] + np.arange(length)[None, :]
    frames = y[idx]
    frames = (frames - frames.mean(axis=1, keepdims=True)) * make_window("gaussian", length)
    energy = np.sum(frames**2, axis=1)

    out = np.full((frames.shape[0], 3), np.nan)
    gain = np.zeros(frames.shape[0])
    live = energy > 0
    if not np.any(live):
        return out, gain
    a, ratio = burg(frames[live], LPC_ORDER)
    gain[live] = -10.0 * np.log10(np.maximum(ratio, 1e-300))
    roots = lpc_roots(a)
    for row, rts in zip(np.flatnonzero(live), roots):
        freqs, bws = roots_to_formants(rts, ANALYSIS_RATE)
        keep = (freqs > F_MIN) & (freqs < F_MAX) & (bws < BW_MAX)
        good = np.sort(freqs[keep])
        if good.size >= 3:
            out[row] = good[:3]
    return out, gain


def formants(w: Waveform, track: PitchTrack) -> Measures:
    """Median F1-F3 over voiced frames (0 sentinel + flag if no frame qualifies)."""
    out = Measures()
    fr, gain = formant_frames(w, track)
    ok = ~np.isnan(fr[:, 0]) if fr.size else np.zeros(0, dtype=bool)
    names = ("formant_f1_mean", "formant_f2_mean", "formant_f3_mean")
    if gain.size and np.median(gain) > DEGENERATE_GAIN_DB:
        for k in names:
            out.values[k] = 0.0
        out.flags.add("formants_degenerate")
        return out
    if not np.any(ok):
        for k in names:
            out.values[k] = 0.0
        out.flags.add("formants_undefined")
        return out
    med = np.median(fr[ok], axis=0)
    for k, v in zip(names, med):
        out.values[k] = float(v)
    return out
