"""Fixed, versioned slot order of the acoustic feature vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REGISTRY_VERSION = 1

FEATURE_NAMES: tuple[str, ...] = (
    "duration_s",
    "pitch_min",
    "pitch_max",
    "pitch_mean",
    "pitch_median",
    "pitch_std",
    "f0",
    "period_mean",
    "period_std",
    "num_pulses",
    "num_periods",
    "num_voicebreaks",
    "degree_voicebreaks",
    "fraction_unvoiced",
    "jitter_local",
    "jitter_rap",
    "jitter_ppq5",
    "jitter_local_absolute",
    "shimmer_local",
    "shimmer_apq3",
    "shimmer_apq5",
    "shimmer_apq11",
    "shimmer_local_db",
    "autocor_mean",
    "nhr_mean",
    "hnr_mean",
    "intensity_min",
    "intensity_max",
    "intensity_mean",
    "intensity_std",
    "formant_f1_mean",
    "formant_f2_mean",
    "formant_f3_mean",
    "spectral_cog",
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}
N_FEATURES = len(FEATURE_NAMES)

INTENSITY_SLOTS = ("intensity_min", "intensity_max", "intensity_mean", "intensity_std")


def feature_index(names) -> list[int]:
    try:
        return [FEATURE_INDEX[n] for n in names]
    except KeyError as exc:
        raise KeyError(f"unknown feature {exc.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    flags: frozenset[str] = frozenset()
    source_id: str = ""
    gender: str | None = None
    tags: frozenset[str] = frozenset()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_FEATURES,):
            raise ValueError(f"feature vector needs {N_FEATURES} slots, got {v.shape}")
        object.__setattr__(self, "values", v)

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_INDEX[name]])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))

    @classmethod
    def from_dict(cls, d: dict[str, float], **kw) -> "FeatureVector":
        missing = [n for n in FEATURE_NAMES if n not in d]
        if missing:
            raise KeyError(f"missing feature slots: {missing}")
        return cls(np.array([d[n] for n in FEATURE_NAMES]), **kw)


def feature_matrix(vectors) -> np.ndarray:
    return np.stack([v.values for v in vectors]) if vectors else np.zeros((0, N_FEATURES))
