"""Desk-scale end-to-end run: synthesize, train, perturb, evaluate, write reports."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attack import PerturbedCorpus
from .config import RunConfig, log_resolved
from .evaluation import (
    AdaptationTable,
    AttackMatrix,
    EvalCorpus,
    IntersectionReport,
    PerturbationCache,
    UtilityReport,
    accuracy_by_gender,
    adaptation_report,
    attack_matrix,
    perturbed_eval_corpus,
    report_to_text,
    rfe_intersection,
    utility_metrics,
    write_text,
)
from .features import FEATURE_INDEX
from .linmodels import (
    FeatureClassifier,
    RfeRanking,
    labels_to_y,
    svm_rfe,
    train_linear_svm,
    train_ridge_single,
)
from .neuralnet import M5Classifier, train
from .synth import make_adaptation_corpus, make_corpus

log = logging.getLogger(__name__)

REPORT_FILES = (
    "config.json",
    "accuracy.txt",
    "matrix.txt",
    "matrix.csv",
    "intersection.txt",
    "utility.txt",
    "adaptations.txt",
    "adaptations.csv",
)


@dataclass
class PipelineResult:
    config: RunConfig
    train: EvalCorpus
    test: EvalCorpus
    adaptation: EvalCorpus
    cnn_a: M5Classifier
    cnn_b: M5Classifier
    svm: FeatureClassifier
    svm_rfe: FeatureClassifier
    ridge: FeatureClassifier
    rfe: RfeRanking
    perturbed: dict[str, PerturbedCorpus]
    perturbed_eval: dict[str, EvalCorpus]
    matrix: AttackMatrix
    intersection: IntersectionReport
    utility: UtilityReport
    adaptations: AdaptationTable
    timings: dict[str, float]
    out_dir: Path | None = None


def _tick(timings: dict, name: str, t0: float) -> float:
    now = time.perf_counter()
    timings[name] = now - t0
    log.info("%s done in %.1f s", name, timings[name])
    return now


def run_pipeline(cfg: RunConfig = RunConfig(), out_dir: str | Path | None = None) -> PipelineResult:
    log_resolved(cfg)
    timings: dict[str, float] = {}
    t = time.perf_counter()
    seg = cfg.eval.segment_s

    train_w, _ = make_corpus(replace(cfg.synth, seed=cfg.seeds.train_corpus, id_prefix="train"))
    test_w, _ = make_corpus(
        replace(cfg.synth, seed=cfg.seeds.test_corpus, n_per_gender=cfg.eval.test_per_gender, id_prefix="test")
    )
    adapt_w, _ = make_adaptation_corpus(
        replace(cfg.synth, seed=cfg.seeds.adaptation_corpus, n_per_gender=cfg.eval.adaptation_per_gender),
        cfg.eval.adaptations,
    )
    t = _tick(timings, "synth", t)

    train_c = EvalCorpus(train_w, "train", seg, cfg.pitch)
    test_c = EvalCorpus(test_w, "test", seg, cfg.pitch)
    adapt_c = EvalCorpus(adapt_w, "adaptation", seg, cfg.pitch)
    X = train_c.feature_matrix()
    test_c.features()
    adapt_c.features()
    t = _tick(timings, "features", t)

    y = labels_to_y(train_c.labels)
    svm = FeatureClassifier(train_linear_svm(X, y, C=cfg.svm.C, seed=cfg.seeds.base, model_id="svm-all"))
    rfe = svm_rfe(X, y, cfg.svm.rfe_n, C=cfg.svm.C, seed=cfg.seeds.base)
    top = list(rfe.top_n)
    svm_top = FeatureClassifier(
        train_linear_svm(X[:, top], y, C=cfg.svm.C, seed=cfg.seeds.base, feature_subset=top,
                         model_id=f"svm-rfe{cfg.svm.rfe_n}")
    )
    j = FEATURE_INDEX[cfg.svm.ridge_feature]
    ridge = FeatureClassifier(
        train_ridge_single(X[:, j], y, cfg.svm.ridge_lambda, feature=j, model_id=f"ridge-{cfg.svm.ridge_feature}")
    )
    t = _tick(timings, "linear", t)

    cnns = []
    for name, seed in (("cnn-a", cfg.seeds.cnn_a), ("cnn-b", cfg.seeds.cnn_b)):
        res = train(cfg.m5, replace(cfg.train, seed=seed), train_w, log_every=0)
        cnns.append(M5Classifier(res.model, name, segment_s=seg))
    t = _tick(timings, "cnn", t)

    cache = PerturbationCache()
    perturbed = {c.model_id: cache.get(c, test_c, cfg.pgd) for c in cnns}
    perturbed_eval = {k: perturbed_eval_corpus(v, test_c) for k, v in perturbed.items()}
    for c in perturbed_eval.values():
        c.features()
    t = _tick(timings, "pgd", t)

    attackers = [*cnns, svm, svm_top, ridge]
    matrix = attack_matrix(cnns, attackers, test_c, cfg.pgd, cache, perturbed_eval)
    inter = rfe_intersection(
        test_c.features(), perturbed_eval["cnn-a"].features(), n=cfg.svm.rfe_n, C=cfg.svm.C, seed=cfg.seeds.base
    )
    util = utility_metrics(test_c, perturbed_eval["cnn-a"], X.std(axis=0))
    adapt = adaptation_report(attackers, adapt_c)
    t = _tick(timings, "evaluate", t)

    result = PipelineResult(
        cfg, train_c, test_c, adapt_c, cnns[0], cnns[1], svm, svm_top, ridge, rfe,
        perturbed, perturbed_eval, matrix, inter, util, adapt, timings,
    )
    if out_dir is not None:
        write_reports(result, out_dir)
    return result


def write_reports(r: PipelineResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "config.json", r.config.to_json() + "\n")
    reports = [accuracy_by_gender(m, c) for c in (r.train, r.test) for m in (r.cnn_a, r.cnn_b, r.svm, r.svm_rfe, r.ridge)]
    write_text(out / "accuracy.txt", report_to_text(reports))
    write_text(out / "matrix.txt", r.matrix.to_text("Gender accuracy on the held-out corpus, rows = reference model"))
    write_text(out / "matrix.csv", r.matrix.to_csv())
    rfe_line = "training-set RFE top features: " + ", ".join(r.rfe.names()) + "\n\n"
    write_text(out / "intersection.txt", rfe_line + r.intersection.to_text())
    write_text(out / "utility.txt", r.utility.to_text())
    write_text(out / "adaptations.txt", r.adaptations.to_text())
    write_text(out / "adaptations.csv", r.adaptations.to_csv())
    r.out_dir = out


def perturbation_stats(pc: PerturbedCorpus, cfg) -> dict[str, float]:
    """Bookkeeping used by the acceptance checks and the CLI summary."""
    linf = np.array([p.delta_linf for p in pc.results])
    lo, hi = cfg.signal_range
    in_range = all(np.all((p.adversarial.samples >= lo) & (p.adversarial.samples <= hi)) for p in pc.results)
    rose = np.array([p.loss_trace[-1] >= p.loss_trace[0] for p in pc.results])
    return {
        "max_linf": float(linf.max()) if linf.size else 0.0,
        "in_range": float(in_range),
        "loss_rose_frac": float(rose.mean()) if rose.size else 0.0,
    }
