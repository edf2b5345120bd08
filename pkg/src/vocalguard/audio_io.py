"""Waveform container, WAV/manifest I/O and framing helpers.

Audio is kept in the [0, 1] representation throughout the pipeline: every
utterance is min-max normalized on load, 0.5 is silence, and the attack clips
against the [0, 1] box. DSP code removes the per-frame mean before analysis.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

from .errors import (
    EmptyFramesError,
    EmptyInputError,
    ManifestError,
    SampleRateError,
    WavFormatError,
)

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
SILENCE = 0.5
GENDERS = ("F", "M")
MANIFEST_COLUMNS = ("path", "speaker_id", "gender", "tags")

DEGENERATE_RANGE = "degenerate_range"


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    source_id: str = ""
    gender: str | None = None
    tags: frozenset[str] = frozenset()
    flags: frozenset[str] = frozenset()

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {x.shape}")
        if x.size == 0:
            raise EmptyInputError(f"{self.source_id or 'waveform'}: zero-length audio")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.source_id or 'waveform'}: non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if self.gender is not None and self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "tags", frozenset(self.tags))
        object.__setattr__(self, "flags", frozenset(self.flags))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray, **changes) -> "Waveform":
        return replace(self, samples=samples, **changes)


def normalize_minmax(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Map ``x`` onto [0, 1]. Returns (normalized, degenerate).

    A constant input has no range to stretch; it maps to all zeros and the
    degenerate flag is set.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return np.zeros_like(x), True
    y = (x - lo) / (hi - lo)
    # guard the endpoints against rounding
    np.clip(y, 0.0, 1.0, out=y)
    return y, False


def normalize_waveform(w: Waveform) -> Waveform:
    y, degenerate = normalize_minmax(w.samples)
    flags = w.flags | {DEGENERATE_RANGE} if degenerate else w.flags
    if degenerate:
        log.warning("%s: constant signal, normalized to zeros", w.source_id or "waveform")
    return w.with_samples(y, flags=flags)


# --------------------------------------------------------------------- WAV


def _read_raw(path: Path) -> tuple[int, np.ndarray]:
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as exc:
        raise WavFormatError(f"{path}: cannot parse WAV ({exc})") from exc
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported sample format {data.dtype}; "
            "only 16-bit PCM and 32-bit IEEE float are accepted"
        )
    return rate, data


def load_wav(
    path: str | Path,
    *,
    normalize: bool = True,
    source_id: str | None = None,
    gender: str | None = None,
    tags: Iterable[str] = (),
) -> Waveform:
    """Read a WAV file into a mono [0, 1] waveform.

    Channels are averaged before min-max normalization. Files that are not
    16 kHz are rejected rather than resampled. ``normalize=False`` keeps the
    stored values as-is, which is how already-perturbed audio is read back
    (renormalizing would rescale the perturbation).
    """
    path = Path(path)
    rate, data = _read_raw(path)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.size == 0:
        raise EmptyInputError(f"{path}: zero-length audio")
    if rate != SAMPLE_RATE:
        raise SampleRateError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz")
    w = Waveform(
        data,
        rate,
        source_id=source_id if source_id is not None else path.stem,
        gender=gender,
        tags=frozenset(tags),
    )
    if normalize:
        return normalize_waveform(w)
    return w


def write_wav(path: str | Path, w: Waveform, pcm16: bool = False) -> None:
    """Write ``w`` as 32-bit float (default, lossless round-trip) or 16-bit PCM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if pcm16:
        # [0, 1] -> [-1, 1) full scale
        data = np.clip(np.round((w.samples * 2.0 - 1.0) * 32767.0), -32768, 32767)
        wavfile.write(path, w.sample_rate_hz, data.astype(np.int16))
    else:
        wavfile.write(path, w.sample_rate_hz, w.samples.astype(np.float32))


# ----------------------------------------------------------------- shaping


def fix_length(w: Waveform, seconds: float) -> Waveform:
    """Cut to the first ``seconds`` or pad the end with silence (0.5)."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * w.sample_rate_hz))
    x = w.samples
    if x.size >= n:
        if x.size == n:
            return w
        return w.with_samples(x[:n].copy())
    pad = np.full(n - x.size, SILENCE)
    return w.with_samples(np.concatenate([x, pad]))


def random_chunk(w: Waveform, seconds: float, rng: np.random.Generator) -> Waveform:
    """Contiguous chunk of exactly ``seconds``; short inputs are padded first."""
    n = int(round(seconds * w.sample_rate_hz))
    if w.samples.size <= n:
        return fix_length(w, seconds)
    start = int(rng.integers(0, w.samples.size - n + 1))
    return w.with_samples(w.samples[start : start + n].copy())


# ----------------------------------------------------------------- framing

WINDOWS = ("rectangular", "hann", "gaussian")


def make_window(kind: str, length: int) -> np.ndarray:
    if kind == "rectangular":
        return np.ones(length)
    if kind == "hann":
        return np.hanning(length)
    if kind == "gaussian":
        # Praat-style Gaussian, effectively zero at the edges
        t = (np.arange(length) + 0.5) / length - 0.5
        edge = np.exp(-12.0 * 0.25)
        return (np.exp(-12.0 * t * t) - edge) / (1.0 - edge)
    raise ValueError(f"unknown window {kind!r}; choose from {WINDOWS}")


@dataclass(frozen=True, eq=False)
class FrameSequence:
    frames: np.ndarray  # (n_frames, frame_len)
    frame_s: float
    hop_s: float
    window: str
    start_times: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.start_times + self.frames.shape[1] / (2.0 * self.sample_rate_hz)


def frame_count(n: int, frame_len: int, hop: int) -> int:
    if n < frame_len:
        return 0
    return (n - frame_len) // hop + 1


def frame_array(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Strided (n_frames, frame_len) copy of ``x`` without windowing."""
    count = frame_count(x.size, frame_len, hop)
    if count == 0:
        raise EmptyFramesError(
            f"signal of {x.size} samples is shorter than one frame ({frame_len})"
        )
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return np.array(view[:count])


def frame_signal(
    w: Waveform, frame_s: float, hop_s: float, window: str = "hann"
) -> FrameSequence:
    """Slice into overlapping frames, remove each frame's mean, then window."""
    if not frame_s >= hop_s > 0:
        raise ValueError("need frame_s >= hop_s > 0")
    rate = w.sample_rate_hz
    frame_len = int(round(frame_s * rate))
    hop = int(round(hop_s * rate))
    frames = frame_array(w.samples, frame_len, hop)
    frames -= frames.mean(axis=1, keepdims=True)
    frames *= make_window(window, frame_len)
    starts = np.arange(frames.shape[0]) * hop / rate
    return FrameSequence(frames, frame_s, hop_s, window, starts, rate)


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    speaker_id: str
    gender: str | None
    tags: frozenset[str] = field(default_factory=frozenset)


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ManifestError(f"duplicate path in manifest: {e.path}")
            seen.add(e.path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def require_labels(self) -> None:
        missing = [e.path for e in self.entries if e.gender is None]
        if missing:
            raise ManifestError(f"unlabeled rows: {', '.join(missing[:5])}")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"{path}: manifest not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames[:4]) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: header must be {','.join(MANIFEST_COLUMNS)}, got {reader.fieldnames}"
            )
        entries = []
        for lineno, row in enumerate(reader, start=2):
            gender = (row["gender"] or "").strip() or None
            if gender is not None and gender not in GENDERS:
                raise ManifestError(f"{path}:{lineno}: bad gender {gender!r}")
            tags = frozenset(t for t in (row["tags"] or "").split(";") if t)
            entries.append(ManifestEntry(row["path"], row["speaker_id"], gender, tags))
    return Manifest(entries, root=path.parent)


def write_manifest(path: str | Path, manifest: Manifest | Sequence[ManifestEntry]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = manifest.entries if isinstance(manifest, Manifest) else list(manifest)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in entries:
            writer.writerow([e.path, e.speaker_id, e.gender or "", ";".join(sorted(e.tags))])


def load_corpus(manifest: Manifest) -> list[Waveform]:
    """Load every manifest row. Rows tagged ``perturbed`` are read without renormalizing."""
    out = []
    for e in manifest:
        raw = "perturbed" in e.tags
        out.append(
            load_wav(
                manifest.resolve(e),
                normalize=not raw,
                source_id=Path(e.path).stem,
                gender=e.gender,
                tags=e.tags,
            )
        )
    return out


def save_corpus(
    waves: Sequence[Waveform], out_dir: str | Path, manifest_name: str = "manifest.csv"
) -> Manifest:
    """Write each waveform as ``<source_id>.wav`` and a manifest next to them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for w in waves:
        fname = f"{w.source_id}.wav"
        write_wav(out_dir / fname, w)
        entries.append(ManifestEntry(fname, w.source_id, w.gender, w.tags))
    manifest = Manifest(entries, root=out_dir)
    write_manifest(out_dir / manifest_name, manifest)
    return manifest
