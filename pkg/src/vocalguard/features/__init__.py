"""Praat-style acoustic measures computed from first principles."""
from .extract import extract_all, extract_corpus, read_features, write_features
from .formants import formants
from .measures import jitter_measures, shimmer_measures, voice_break_stats
from .pitch import PitchConfig, PitchTrack, track_pitch
from .pulses import PulseSequence, extract_pulses
from .registry import FEATURE_INDEX, FEATURE_NAMES, N_FEATURES, FeatureVector, feature_matrix
from .spectral import harmonicity, intensity_stats, spectral_cog

__all__ = [
    "FEATURE_INDEX",
    "FEATURE_NAMES",
    "N_FEATURES",
    "FeatureVector",
    "PitchConfig",
    "PitchTrack",
    "PulseSequence",
    "extract_all",
    "extract_corpus",
    "extract_pulses",
    "feature_matrix",
    "formants",
    "harmonicity",
    "intensity_stats",
    "jitter_measures",
    "read_features",
    "shimmer_measures",
    "spectral_cog",
    "track_pitch",
    "voice_break_stats",
    "write_features",
]
