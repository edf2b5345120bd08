"""Full feature chain and the delimited feature-file format."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..audio_io import Waveform
from ..errors import DataError
from .formants import formants
from .measures import jitter_measures, shimmer_measures, voice_break_stats
from .pitch import PitchConfig, track_pitch
from .pulses import extract_pulses
from .registry import FEATURE_NAMES, REGISTRY_VERSION, FeatureVector
from .spectral import harmonicity, intensity_stats, spectral_cog


def extract_all(w: Waveform, cfg: PitchConfig = PitchConfig()) -> FeatureVector:
    """Pitch -> pulses -> every measure. Degenerate audio yields sentinels, never raises."""
    track = track_pitch(w, cfg)
    pulses = extract_pulses(w, track)
    values: dict[str, float] = {"duration_s": w.duration_s}
    flags: set[str] = set()
    for part in (
        voice_break_stats(pulses, track, cfg, w.duration_s),
        jitter_measures(pulses, cfg),
        shimmer_measures(pulses, cfg),
        harmonicity(track),
        intensity_stats(w),
        formants(w, track),
    ):
        values.update(part.values)
        flags |= part.flags
    values["spectral_cog"] = spectral_cog(w)
    if values["spectral_cog"] == 0.0:
        flags.add("spectrum_zero")
    return FeatureVector.from_dict(
        values, flags=frozenset(flags), source_id=w.source_id, gender=w.gender, tags=w.tags
    )


def extract_corpus(waves: Iterable[Waveform], cfg: PitchConfig = PitchConfig()) -> list[FeatureVector]:
    return [extract_all(w, cfg) for w in waves]


# Feature file: '#'-prefixed header comment with the registry version and slot
# order, then a CSV header row and one row per utterance.

HEADER_PREFIX = "# vocalguard feature registry v"


def write_features(path: str | Path, vectors: Sequence[FeatureVector]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"{HEADER_PREFIX}{REGISTRY_VERSION}: {' '.join(FEATURE_NAMES)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source_id", "gender", "tags", *FEATURE_NAMES, "flags"])
        for v in vectors:
            writer.writerow(
                [v.source_id, v.gender or "", ";".join(sorted(v.tags))]
                + [repr(float(x)) for x in v.values]
                + [";".join(sorted(v.flags))]
            )


def read_features(path: str | Path) -> list[FeatureVector]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith(HEADER_PREFIX):
            raise DataError(f"{path}: missing feature registry header")
        version = int(first[len(HEADER_PREFIX) :].split(":", 1)[0])
        if version != REGISTRY_VERSION:
            raise DataError(f"{path}: registry v{version}, expected v{REGISTRY_VERSION}")
        reader = csv.DictReader(fh)
        missing = [n for n in FEATURE_NAMES if n not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        out = []
        for row in reader:
            out.append(
                FeatureVector(
                    np.array([float(row[n]) for n in FEATURE_NAMES]),
                    flags=frozenset(f for f in row["flags"].split(";") if f),
                    source_id=row["source_id"],
                    gender=row["gender"] or None,
                    tags=frozenset(t for t in row["tags"].split(";") if t),
                )
            )
    return out
