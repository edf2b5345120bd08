"""Gender-protecting perturbations by projected sign-gradient ascent (PGD).

Per iteration::

    x <- x + alpha * sign(grad_x CE(ref(x), y))     (untargeted)
    x <- w + clip(x - w, -eps, +eps)
    x <- clip(x, 0, 1)

In ``flip`` mode the step instead descends the loss of the opposite label.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .audio_io import Waveform, fix_length
from .errors import DataError, NumericError, ShapeError

log = logging.getLogger(__name__)

OPPOSITE = {"F": "M", "M": "F"}


class GradientModel(Protocol):
    model_id: str

    def loss_and_input_grad(self, x: np.ndarray, labels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]: ...

    def accepts_length(self, n: int) -> bool: ...


@dataclass(frozen=True)
class PgdConfig:
    alpha: float = 0.0005
    iterations: int = 100
    epsilon_clip: float = 0.1
    segment_s: float = 6.0
    signal_range: tuple[float, float] = (0.0, 1.0)
    flip: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.epsilon_clip <= 0:
            raise ValueError("epsilon_clip must be positive")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class PerturbationResult:
    adversarial: Waveform
    delta_linf: float
    delta_l2: float
    loss_trace: np.ndarray  # loss at x_0 .. x_iterations
    reference_model_id: str


def project(x: np.ndarray, w: np.ndarray, cfg: PgdConfig) -> np.ndarray:
    lo, hi = cfg.signal_range
    delta = np.clip(x - w, -cfg.epsilon_clip, cfg.epsilon_clip)
    return np.clip(w + delta, lo, hi)


def pgd_batch(
    ref: GradientModel,
    clean: np.ndarray,
    labels: Sequence[str],
    cfg: PgdConfig,
    check_every_step: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Run PGD on a (B, T) batch. Returns (adversarial batch, losses of shape (B, iters + 1)).

    Losses are the true-label cross-entropy on the reference model at every
    iterate, including the starting point and the final result.
    """
    clean = np.atleast_2d(np.asarray(clean, dtype=np.float64))
    if any(g not in OPPOSITE for g in labels):
        raise DataError("PGD needs a true F/M label for every input")
    if len(labels) != clean.shape[0]:
        raise ShapeError("one label per input row required")
    if not ref.accepts_length(clean.shape[1]):
        raise ShapeError(f"reference model {ref.model_id} cannot take inputs of {clean.shape[1]} samples")
    step_labels = [OPPOSITE[g] for g in labels] if cfg.flip else list(labels)
    direction = -1.0 if cfg.flip else 1.0

    x = clean.copy()
    losses = np.zeros((clean.shape[0], cfg.iterations + 1))
    for i in range(cfg.iterations):
        loss, grad = ref.loss_and_input_grad(x, step_labels)
        if cfg.flip:
            loss, _ = ref.loss_and_input_grad(x, labels)
        if not np.all(np.isfinite(loss)):
            raise NumericError(f"non-finite loss at PGD iteration {i}")
        losses[:, i] = loss
        x = project(x + direction * cfg.alpha * np.sign(grad), clean, cfg)
        if check_every_step:
            assert np.all(np.abs(x - clean) <= cfg.epsilon_clip + 1e-9)
            assert np.all((x >= cfg.signal_range[0]) & (x <= cfg.signal_range[1]))
    losses[:, -1], _ = ref.loss_and_input_grad(x, labels)
    return x, losses


def _result(w: Waveform, x: np.ndarray, trace: np.ndarray, ref_id: str) -> PerturbationResult:
    delta = x - w.samples
    adv = w.with_samples(x, tags=w.tags | {"perturbed", f"ref:{ref_id}"})
    return PerturbationResult(
        adv, float(np.max(np.abs(delta))), float(np.sqrt(np.sum(delta**2))), trace, ref_id
    )


def pgd_perturb(ref: GradientModel, w: Waveform, y: str | None, cfg: PgdConfig = PgdConfig()) -> PerturbationResult:
    """Perturb one utterance that is already cut/padded to the attack segment."""
    if y is None:
        raise DataError(f"{w.source_id}: PGD needs the true gender label")
    x, losses = pgd_batch(ref, w.samples[None, :], [y], cfg)
    return _result(w, x[0], losses[0], ref.model_id)


@dataclass
class PerturbedCorpus:
    results: list[PerturbationResult]
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (source_id, reason)
    reference_model_id: str = ""
    config: PgdConfig = PgdConfig()

    @property
    def waveforms(self) -> list[Waveform]:
        return [r.adversarial for r in self.results]


def perturb_corpus(
    ref: GradientModel,
    waves: Sequence[Waveform],
    cfg: PgdConfig = PgdConfig(),
    batch_size: int = 32,
) -> PerturbedCorpus:
    """Fix every utterance to the attack segment and perturb it.

    Failing batches are retried one utterance at a time so that a single bad
    file is recorded as skipped instead of aborting the corpus.
    """
    fixed: list[Waveform] = []
    skipped: list[tuple[str, str]] = []
    for w in waves:
        if w.gender is None:
            skipped.append((w.source_id, "missing gender label"))
            continue
        fixed.append(fix_length(w, cfg.segment_s))
    results: list[PerturbationResult] = []
    for start in range(0, len(fixed), batch_size):
        chunk = fixed[start : start + batch_size]
        try:
            x, losses = pgd_batch(ref, np.stack([w.samples for w in chunk]), [w.gender for w in chunk], cfg)
            results.extend(_result(w, x[i], losses[i], ref.model_id) for i, w in enumerate(chunk))
        except (DataError, ShapeError, NumericError, ValueError) as exc:
            log.warning("batch at %d failed (%s); retrying per file", start, exc)
            for w in chunk:
                try:
                    results.append(pgd_perturb(ref, w, w.gender, cfg))
                except (DataError, ShapeError, NumericError, ValueError) as err:
                    skipped.append((w.source_id, str(err)))
    return PerturbedCorpus(results, skipped, ref.model_id, cfg)
