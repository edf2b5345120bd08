"""Accuracy reports, attack matrices, RFE intersection, utility and adaptation tables.

Accuracies are percentages formatted the way gender-protection results are
usually tabulated: ``All (F / M)`` with one decimal.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .attack import GradientModel, PerturbedCorpus, PgdConfig, perturb_corpus
from .audio_io import Waveform, fix_length
from .errors import DataError
from .features import FEATURE_NAMES, N_FEATURES, FeatureVector, PitchConfig, extract_all, feature_matrix
from .linmodels import labels_to_y, svm_rfe, train_linear_svm

log = logging.getLogger(__name__)

EVAL_SEGMENT_S = 6.0
ADAPTATION_PREFIX = "adaptation:"
KNOWN_ADAPTATIONS = ("default", "whisper", "lowrobot", "highrobot", "overlyhappy")


class Classifier(Protocol):
    model_id: str

    def predict(self, corpus: "EvalCorpus") -> list[str]: ...


class EvalCorpus:
    """Labeled utterances cut/padded to the evaluation segment, with cached features."""

    def __init__(
        self,
        waves: Sequence[Waveform],
        corpus_id: str = "corpus",
        segment_s: float = EVAL_SEGMENT_S,
        pitch_cfg: PitchConfig = PitchConfig(),
        features: Sequence[FeatureVector] | None = None,
    ):
        self.corpus_id = corpus_id
        self.segment_s = segment_s
        self.pitch_cfg = pitch_cfg
        self.waveforms = [fix_length(w, segment_s) for w in waves]
        if features is not None and len(features) != len(self.waveforms):
            raise DataError("feature list does not match the corpus length")
        self._features = list(features) if features is not None else None

    def __len__(self) -> int:
        return len(self.waveforms)

    @property
    def labels(self) -> list[str | None]:
        return [w.gender for w in self.waveforms]

    @property
    def source_ids(self) -> list[str]:
        return [w.source_id for w in self.waveforms]

    def features(self) -> list[FeatureVector]:
        if self._features is None:
            self._features = [extract_all(w, self.pitch_cfg) for w in self.waveforms]
        return self._features

    def feature_matrix(self) -> np.ndarray:
        return feature_matrix(self.features())

    def subset(self, idx: Sequence[int], corpus_id: str | None = None) -> "EvalCorpus":
        feats = [self.features()[i] for i in idx] if self._features is not None else None
        out = EvalCorpus.__new__(EvalCorpus)
        out.corpus_id = corpus_id or self.corpus_id
        out.segment_s = self.segment_s
        out.pitch_cfg = self.pitch_cfg
        out.waveforms = [self.waveforms[i] for i in idx]
        out._features = feats
        return out


# ------------------------------------------------------------------ report


@dataclass(frozen=True)
class EvalReport:
    accuracy_all: float
    accuracy_f: float
    accuracy_m: float
    n_f: int
    n_m: int
    model_id: str = ""
    corpus_id: str = ""

    def cell(self) -> str:
        return f"{self.accuracy_all:.1f} ({self.accuracy_f:.1f} / {self.accuracy_m:.1f})"

    def pooled_consistent(self, tol: float = 1e-9) -> bool:
        n = self.n_f + self.n_m
        pooled = (self.n_f * self.accuracy_f + self.n_m * self.accuracy_m) / n
        return abs(pooled - self.accuracy_all) <= tol


def report_from_predictions(
    labels: Sequence[str | None], preds: Sequence[str], model_id: str = "", corpus_id: str = ""
) -> EvalReport:
    if any(g is None for g in labels):
        raise DataError("every utterance needs a gender label for evaluation")
    labels = np.asarray(labels)
    correct = np.asarray(preds) == labels
    is_f = labels == "F"
    n_f, n_m = int(is_f.sum()), int((~is_f).sum())

    def pct(mask):
        return 100.0 * float(correct[mask].mean()) if mask.any() else 0.0

    # pooled from the per-gender rates so the pooling identity is exact
    acc_f, acc_m = pct(is_f), pct(~is_f)
    acc_all = (n_f * acc_f + n_m * acc_m) / (n_f + n_m)
    return EvalReport(acc_all, acc_f, acc_m, n_f, n_m, model_id, corpus_id)


def accuracy_by_gender(model: Classifier, corpus: EvalCorpus) -> EvalReport:
    labels = corpus.labels
    if any(g is None for g in labels):
        raise DataError("every utterance needs a gender label for evaluation")
    return report_from_predictions(labels, model.predict(corpus), model.model_id, corpus.corpus_id)


# ---------------------------------------------------------- attack matrix

ORIGINAL = "Original"


@dataclass
class AttackMatrix:
    rows: list[str]
    columns: list[str]
    cells: dict[tuple[str, str], EvalReport | str]  # str = error marker
    white_box: set[tuple[str, str]] = field(default_factory=set)

    def get(self, row: str, col: str) -> EvalReport:
        cell = self.cells[(row, col)]
        if isinstance(cell, str):
            raise DataError(f"cell ({row}, {col}) failed: {cell}")
        return cell

    def to_text(self, title: str = "") -> str:
        header = ["Ref model"] + [f"-> {c}" for c in self.columns]
        body = []
        for r in self.rows:
            row = [r]
            for c in self.columns:
                cell = self.cells[(r, c)]
                text = cell.cell() if isinstance(cell, EvalReport) else f"ERROR: {cell}"
                row.append(f"*{text}*" if (r, c) in self.white_box else text)
            body.append(row)
        out = aligned_table(header, body)
        notes = "Format: All (F / M). White-box cells are marked with *...*."
        return (title + "\n" if title else "") + out + notes + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ref_model", "attack_classifier", "cell", "accuracy_all", "accuracy_f",
                    "accuracy_m", "n_f", "n_m", "white_box", "error"])
        for r in self.rows:
            for c in self.columns:
                cell = self.cells[(r, c)]
                wb = int((r, c) in self.white_box)
                if isinstance(cell, EvalReport):
                    w.writerow([r, c, cell.cell(), f"{cell.accuracy_all:.1f}", f"{cell.accuracy_f:.1f}",
                                f"{cell.accuracy_m:.1f}", cell.n_f, cell.n_m, wb, ""])
                else:
                    w.writerow([r, c, "", "", "", "", "", "", wb, cell])
        return buf.getvalue()


class PerturbationCache:
    """Perturbed corpora keyed by (reference model id, PGD config digest, corpus id)."""

    def __init__(self):
        self._store: dict[tuple[str, str, str], PerturbedCorpus] = {}

    def get(self, ref: GradientModel, corpus: EvalCorpus, cfg: PgdConfig) -> PerturbedCorpus:
        key = (ref.model_id, cfg.digest(), corpus.corpus_id)
        if key not in self._store:
            log.info("perturbing %s with %s", corpus.corpus_id, ref.model_id)
            self._store[key] = perturb_corpus(ref, corpus.waveforms, cfg)
        return self._store[key]


def perturbed_eval_corpus(pc: PerturbedCorpus, corpus: EvalCorpus) -> EvalCorpus:
    return EvalCorpus(
        pc.waveforms,
        corpus_id=f"{corpus.corpus_id}+pgd[{pc.reference_model_id}]",
        segment_s=corpus.segment_s,
        pitch_cfg=corpus.pitch_cfg,
    )


def attack_matrix(
    refs: Sequence[GradientModel],
    attackers: Sequence[Classifier],
    corpus: EvalCorpus,
    cfg: PgdConfig = PgdConfig(),
    cache: PerturbationCache | None = None,
    perturbed: dict[str, EvalCorpus] | None = None,
) -> AttackMatrix:
    """Rows: Original plus one per reference model; columns: attack classifiers.

    ``perturbed`` may carry already-built perturbed corpora by ref id; any
    missing ones are generated (and cached) here.
    """
    cache = cache or PerturbationCache()
    perturbed = dict(perturbed or {})
    rows = [ORIGINAL] + [r.model_id for r in refs]
    cols = [a.model_id for a in attackers]
    cells: dict[tuple[str, str], EvalReport | str] = {}
    white: set[tuple[str, str]] = set()
    sources: dict[str, EvalCorpus | str] = {ORIGINAL: corpus}
    for ref in refs:
        if ref.model_id in perturbed:
            sources[ref.model_id] = perturbed[ref.model_id]
            continue
        try:
            sources[ref.model_id] = perturbed_eval_corpus(cache.get(ref, corpus, cfg), corpus)
        except Exception as exc:  # a failed row is reported, not fatal
            sources[ref.model_id] = f"{type(exc).__name__}: {exc}"
    for r in rows:
        for a in attackers:
            src = sources[r]
            if r == a.model_id:
                white.add((r, a.model_id))
            if isinstance(src, str):
                cells[(r, a.model_id)] = src
                continue
            try:
                cells[(r, a.model_id)] = accuracy_by_gender(a, src)
            except Exception as exc:
                cells[(r, a.model_id)] = f"{type(exc).__name__}: {exc}"
    return AttackMatrix(rows, cols, cells, white)


# ------------------------------------------------------ RFE intersection


@dataclass(frozen=True)
class IntersectionReport:
    top_gender: tuple[str, ...]
    top_perturb: tuple[str, ...]
    intersection: tuple[str, ...]  # in gender-ranking order
    origin_accuracy: float  # training accuracy of the perturbed-vs-original SVM, %
    origin_separable: bool

    def to_text(self) -> str:
        lines = [
            "rank  gender (F vs M)          perturbed vs original",
        ]
        for i in range(max(len(self.top_gender), len(self.top_perturb))):
            g = self.top_gender[i] if i < len(self.top_gender) else ""
            p = self.top_perturb[i] if i < len(self.top_perturb) else ""
            lines.append(f"{i + 1:>4}  {g:<24} {p}")
        lines.append(f"intersection: {', '.join(self.intersection) if self.intersection else '(none)'}")
        lines.append(f"origin SVM training accuracy: {self.origin_accuracy:.1f}%"
                     + ("" if self.origin_separable else " (origin task not separable)"))
        return "\n".join(lines) + "\n"


def rfe_intersection(
    clean: Sequence[FeatureVector],
    perturbed: Sequence[FeatureVector],
    n: int = 10,
    C: float = 1.0,
    seed: int = 0,
    separable_threshold: float = 60.0,
) -> IntersectionReport:
    """Top-n features for gender and for perturbed-vs-original, and their overlap."""
    Xc = feature_matrix(clean)
    Xp = feature_matrix(perturbed)
    y_gender = labels_to_y([v.gender for v in clean])
    gender_rank = svm_rfe(Xc, y_gender, n, C=C, seed=seed)

    X_origin = np.vstack([Xc, Xp])
    y_origin = np.concatenate([np.full(len(Xc), -1.0), np.full(len(Xp), 1.0)])
    origin_rank = svm_rfe(X_origin, y_origin, n, C=C, seed=seed)
    # how well can the origin be told apart at all, using every feature
    full = train_linear_svm(X_origin, y_origin, C=C, seed=seed)
    acc = 100.0 * float(np.mean(np.where(full.decision(X_origin) >= 0, 1.0, -1.0) == y_origin))

    g_names = tuple(gender_rank.names())
    p_names = tuple(origin_rank.names())
    inter = tuple(f for f in g_names if f in set(p_names))
    return IntersectionReport(g_names, p_names, inter, acc, acc >= separable_threshold)


# ---------------------------------------------------------------- utility


@dataclass(frozen=True)
class UtilityReport:
    source_ids: tuple[str, ...]
    delta_linf: np.ndarray
    delta_l2: np.ndarray
    seg_snr_db: np.ndarray  # +inf where the perturbation is identically zero
    drift: np.ndarray  # (n_utterances, N_FEATURES) |adv - orig| / train_std

    @property
    def mean_drift(self) -> np.ndarray:
        return self.drift.mean(axis=0)

    def to_text(self) -> str:
        finite = self.seg_snr_db[np.isfinite(self.seg_snr_db)]
        snr = f"{np.median(finite):.1f}" if finite.size else "+inf"
        lines = [
            f"utterances: {len(self.source_ids)}",
            f"delta Linf: mean {self.delta_linf.mean():.4f} max {self.delta_linf.max():.4f}",
            f"delta L2:   mean {self.delta_l2.mean():.4f}",
            f"segmental SNR (median, dB): {snr}",
            "feature drift (mean |change| in training-std units):",
        ]
        order = np.argsort(-self.mean_drift, kind="stable")
        for i in order:
            lines.append(f"  {FEATURE_NAMES[i]:<24} {self.mean_drift[i]:.3f}")
        return "\n".join(lines) + "\n"


def segmental_snr(orig: np.ndarray, adv: np.ndarray, rate: int, seg_s: float = 0.032) -> float:
    """Mean over segments of 10*log10(P_signal / P_perturbation); signal power is DC-removed."""
    delta = adv - orig
    if not np.any(delta):
        return math.inf
    seg = int(round(seg_s * rate))
    n = (orig.size // seg) * seg
    s = orig[:n].reshape(-1, seg)
    d = delta[:n].reshape(-1, seg)
    ps = np.mean((s - s.mean(axis=1, keepdims=True)) ** 2, axis=1)
    pd = np.mean(d**2, axis=1)
    ok = (ps > 0) & (pd > 0)
    if not np.any(ok):
        return math.inf
    return float(np.mean(10.0 * np.log10(ps[ok] / pd[ok])))


def utility_metrics(
    orig: EvalCorpus, perturbed: EvalCorpus, train_std: np.ndarray
) -> UtilityReport:
    by_id = {w.source_id: i for i, w in enumerate(perturbed.waveforms)}
    missing = [sid for sid in orig.source_ids if sid not in by_id]
    extra = sorted(set(by_id) - set(orig.source_ids))
    if missing or extra:
        raise DataError(f"unmatched source ids: missing {missing[:10]}, extra {extra[:10]}")
    train_std = np.asarray(train_std, dtype=np.float64)
    if train_std.shape != (N_FEATURES,):
        raise ValueError("train_std needs one entry per feature slot")
    scale = np.where(train_std > 0, train_std, 1.0)
    of, pf = orig.features(), perturbed.features()
    linf, l2, snr, drift = [], [], [], []
    for i, w in enumerate(orig.waveforms):
        j = by_id[w.source_id]
        a = perturbed.waveforms[j].samples
        d = a - w.samples
        linf.append(float(np.max(np.abs(d))))
        l2.append(float(np.sqrt(np.sum(d**2))))
        snr.append(segmental_snr(w.samples, a, w.sample_rate_hz))
        drift.append(np.abs(pf[j].values - of[i].values) / scale)
    return UtilityReport(
        tuple(orig.source_ids), np.array(linf), np.array(l2), np.array(snr), np.array(drift)
    )


# ------------------------------------------------------------ adaptations


def adaptation_of(w: Waveform) -> str | None:
    for t in sorted(w.tags):
        if t.startswith(ADAPTATION_PREFIX):
            return t[len(ADAPTATION_PREFIX) :]
    for t in sorted(w.tags):
        if t in KNOWN_ADAPTATIONS:
            return t
    return None


@dataclass
class AdaptationTable:
    adaptations: list[str]
    models: list[str]
    cells: dict[tuple[str, str], EvalReport]
    skipped: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        header = ["data"] + self.models
        body = [[a] + [self.cells[(a, m)].cell() for m in self.models] for a in self.adaptations]
        return aligned_table(header, body) + "Format: All (F / M).\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["adaptation", "model", "cell", "accuracy_all", "accuracy_f", "accuracy_m", "n_f", "n_m"])
        for a in self.adaptations:
            for m in self.models:
                c = self.cells[(a, m)]
                w.writerow([a, m, c.cell(), f"{c.accuracy_all:.1f}", f"{c.accuracy_f:.1f}",
                            f"{c.accuracy_m:.1f}", c.n_f, c.n_m])
        return buf.getvalue()


def adaptation_report(models: Sequence[Classifier], corpus: EvalCorpus) -> AdaptationTable:
    """Per-adaptation accuracy of every model; rows without an adaptation tag are skipped."""
    groups: dict[str, list[int]] = {}
    skipped = []
    for i, w in enumerate(corpus.waveforms):
        name = adaptation_of(w)
        if name is None:
            log.warning("%s: no adaptation tag, skipped", w.source_id)
            skipped.append(w.source_id)
            continue
        if w.gender is None:
            raise DataError(f"{w.source_id}: adaptation rows need a gender label")
        groups.setdefault(name, []).append(i)
    ordered = [a for a in KNOWN_ADAPTATIONS if a in groups] + sorted(set(groups) - set(KNOWN_ADAPTATIONS))
    cells = {}
    for a in ordered:
        sub = corpus.subset(groups[a], corpus_id=f"{corpus.corpus_id}/{a}")
        for m in models:
            cells[(a, m.model_id)] = accuracy_by_gender(m, sub)
    return AdaptationTable(ordered, [m.model_id for m in models], cells, skipped)


# -------------------------------------------------------------- formatting


def aligned_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    def fmt(r):
        return "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def report_to_text(reports: Sequence[EvalReport]) -> str:
    header = ["model", "corpus", "All (F / M)", "n_f", "n_m"]
    rows = [[r.model_id, r.corpus_id, r.cell(), str(r.n_f), str(r.n_m)] for r in reports]
    return aligned_table(header, rows) + "Format: All (F / M).\n"


def write_text(path: str | Path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
