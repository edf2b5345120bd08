"""Batch command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import config as cfgmod
from .audio_io import fix_length, load_corpus, read_manifest, save_corpus
from .errors import ConfigError, DataError, NumericError
from .features import FEATURE_INDEX, FEATURE_NAMES, read_features, write_features

log = logging.getLogger("vocalguard")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _guard(fn):
    """Map handled failures to exit codes with a one-line diagnostic."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except NumericError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (DataError, FileNotFoundError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


def _config(ctx: click.Context, seed_key: str | None = None, seed: int | None = None) -> cfgmod.RunConfig:
    cfg = cfgmod.load_config(ctx.obj.get("config"))
    if seed is not None:
        cfg = cfgmod.override(cfg, seed_key or "seeds.base", seed)
    cfgmod.log_resolved(cfg)
    return cfg


def _corpus(manifest: str):
    m = read_manifest(manifest)
    return load_corpus(m)


def _load_classifier(path: str, segment_s: float):
    """A feature model (JSON) or a CNN checkpoint, told apart by the file's first bytes."""
    from .linmodels import FeatureClassifier, load_model
    from .neuralnet import CHECKPOINT_MAGIC, M5Classifier, load_checkpoint

    p = Path(path)
    if not p.exists():
        raise DataError(f"{p}: model file not found")
    if p.read_bytes()[:4] == CHECKPOINT_MAGIC:
        model, mid = load_checkpoint(p)
        return M5Classifier(model, mid or p.stem, segment_s=segment_s)
    try:
        lm = load_model(p)
    except (ValueError, KeyError) as exc:
        raise DataError(f"{p}: unreadable model file ({exc})") from None
    return FeatureClassifier(lm, lm.model_id or p.stem)


def _eval_corpus(manifest: str, cfg: cfgmod.RunConfig, corpus_id: str | None = None):
    from .evaluation import EvalCorpus

    return EvalCorpus(_corpus(manifest), corpus_id or Path(manifest).parent.name, cfg.eval.segment_s, cfg.pitch)


def _features_xy(path: str):
    from .features import feature_matrix
    from .linmodels import labels_to_y

    vecs = read_features(path)
    if not vecs:
        raise DataError(f"{path}: no feature rows")
    return feature_matrix(vecs), labels_to_y([v.gender for v in vecs])


CONFIG_HELP = "TOML run config; flags override single keys."


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help=CONFIG_HELP)
@click.option("-v", "--verbose", is_flag=True, help="Log progress and the resolved config to stderr.")
@click.pass_context
def main(ctx, config_path, verbose):
    """Acoustic-feature and CNN gender classifiers, PGD protection and its evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory for WAVs and manifest.csv.")
@click.option("--seed", type=int, default=None, help="Corpus seed (config: seeds.base; corpus seed = base + 1).")
@click.option("--n-per-gender", type=int, default=None, help="Utterances per gender (config: synth.n_per_gender).")
@click.option("--adaptations", is_flag=True, help="Build the adaptation-tagged corpus (config: eval.adaptations, eval.adaptation_per_gender).")
@click.pass_context
@_guard
def synth(ctx, out, seed, n_per_gender, adaptations):
    """Synthesize a labeled corpus."""
    from .synth import make_adaptation_corpus, make_corpus

    cfg = _config(ctx, "seeds.base", seed)
    if n_per_gender is not None:
        cfg = cfgmod.override(cfg, "synth.n_per_gender", n_per_gender)
    if adaptations:
        spec = replace(cfg.synth, seed=cfg.seeds.adaptation_corpus, n_per_gender=n_per_gender or cfg.eval.adaptation_per_gender)
        waves, _ = make_adaptation_corpus(spec, cfg.eval.adaptations)
    else:
        waves, _ = make_corpus(replace(cfg.synth, seed=cfg.seeds.train_corpus))
    save_corpus(waves, out)
    click.echo(f"wrote {len(waves)} utterances to {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Corpus manifest CSV.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Feature CSV to write.")
@click.pass_context
@_guard
def extract(ctx, manifest, out):
    """Extract the acoustic feature registry for each utterance (config: pitch.*, eval.segment_s)."""
    from .features import extract_corpus

    cfg = _config(ctx)
    waves = [fix_length(w, cfg.eval.segment_s) for w in _corpus(manifest)]
    write_features(out, extract_corpus(waves, cfg.pitch))
    click.echo(f"wrote {len(waves)} feature rows to {out}")


@main.command("train-svm")
@click.option("--features", "features_path", required=True, type=click.Path(dir_okay=False), help="Training feature CSV.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model JSON to write.")
@click.option("--subset", "subset_path", type=click.Path(dir_okay=False), default=None,
              help="RFE ranking JSON; train only on its top features.")
@click.option("--seed", type=int, default=None, help="Coordinate-order seed (config: seeds.base).")
@click.option("--C", "C", type=float, default=None, help="Hinge penalty (config: svm.C).")
@click.option("--model-id", default=None, help="Identifier stored in the model file.")
@click.pass_context
@_guard
def train_svm(ctx, features_path, out, subset_path, seed, C, model_id):
    """Train a linear SVM on standardized features."""
    from .linmodels import save_model, train_linear_svm

    cfg = _config(ctx, "seeds.base", seed)
    if C is not None:
        cfg = cfgmod.override(cfg, "svm.C", C)
    X, y = _features_xy(features_path)
    subset = None
    if subset_path:
        subset = json.loads(Path(subset_path).read_text(encoding="utf-8"))["top_n"]
        X = X[:, subset]
    m = train_linear_svm(X, y, C=cfg.svm.C, seed=cfg.seeds.base, feature_subset=subset,
                         model_id=model_id or Path(out).stem)
    save_model(out, m)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(dir_okay=False), help="Feature CSV.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Ranking JSON to write.")
@click.option("--n", type=int, default=None, help="Features to keep (config: svm.rfe_n).")
@click.option("--seed", type=int, default=None, help="Coordinate-order seed (config: seeds.base).")
@click.pass_context
@_guard
def rfe(ctx, features_path, out, n, seed):
    """Rank features by SVM recursive feature elimination."""
    from .linmodels import svm_rfe

    cfg = _config(ctx, "seeds.base", seed)
    if n is not None:
        cfg = cfgmod.override(cfg, "svm.rfe_n", n)
    X, y = _features_xy(features_path)
    r = svm_rfe(X, y, cfg.svm.rfe_n, C=cfg.svm.C, seed=cfg.seeds.base)
    doc = {
        "top_n": list(r.top_n),
        "top_names": r.names(),
        "elimination_order": list(r.elimination_order),
        "elimination_names": [FEATURE_NAMES[i] for i in r.elimination_order],
    }
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    click.echo("\n".join(f"{i + 1:>3} {name}" for i, name in enumerate(r.names())))


@main.command("train-ridge")
@click.option("--features", "features_path", required=True, type=click.Path(dir_okay=False), help="Training feature CSV.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model JSON to write.")
@click.option("--feature", default=None, help="Feature name (config: svm.ridge_feature).")
@click.option("--lam", type=float, default=None, help="Ridge penalty (config: svm.ridge_lambda).")
@click.option("--model-id", default=None, help="Identifier stored in the model file.")
@click.pass_context
@_guard
def train_ridge(ctx, features_path, out, feature, lam, model_id):
    """Fit a single-feature ridge classifier."""
    from .linmodels import save_model, train_ridge_single

    cfg = _config(ctx)
    if feature is not None:
        cfg = cfgmod.override(cfg, "svm.ridge_feature", feature)
    if lam is not None:
        cfg = cfgmod.override(cfg, "svm.ridge_lambda", lam)
    X, y = _features_xy(features_path)
    j = FEATURE_INDEX[cfg.svm.ridge_feature]
    save_model(out, train_ridge_single(X[:, j], y, cfg.svm.ridge_lambda, feature=j, model_id=model_id or Path(out).stem))
    click.echo(f"wrote {out}")


@main.command("train-cnn")
@click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Training corpus manifest.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Checkpoint file to write.")
@click.option("--seed", type=int, default=None, help="Init and batch seed (config: seeds.base).")
@click.option("--steps", type=int, default=None, help="Optimizer steps (config: train.total_steps).")
@click.option("--model-id", default=None, help="Identifier stored in the checkpoint.")
@click.pass_context
@_guard
def train_cnn(ctx, manifest, out, seed, steps, model_id):
    """Train the raw-waveform CNN (config: m5.*, train.*)."""
    from .neuralnet import save_checkpoint, train

    cfg = _config(ctx, "seeds.base", seed)
    if steps is not None:
        cfg = cfgmod.override(cfg, "train.total_steps", steps)
    res = train(cfg.m5, replace(cfg.train, seed=cfg.seeds.base), _corpus(manifest))
    save_checkpoint(out, res.model, model_id or Path(out).stem)
    click.echo(f"wrote {out} (final loss {res.loss_trace[-1]:.4f})")


@main.command()
@click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Clean corpus manifest.")
@click.option("--ref-model", required=True, type=click.Path(dir_okay=False), help="CNN checkpoint whose gradients drive PGD.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Directory for the perturbed corpus.")
@click.option("--iterations", type=int, default=None, help="PGD steps (config: pgd.iterations).")
@click.pass_context
@_guard
def attack(ctx, manifest, ref_model, out, iterations):
    """Perturb a corpus with PGD against a reference CNN (config: pgd.*)."""
    from .attack import perturb_corpus

    cfg = _config(ctx)
    if iterations is not None:
        cfg = cfgmod.override(cfg, "pgd.iterations", iterations)
    ref = _load_classifier(ref_model, cfg.pgd.segment_s)
    if not hasattr(ref, "loss_and_input_grad"):
        raise DataError(f"{ref_model}: the reference model must be a CNN checkpoint")
    pc = perturb_corpus(ref, _corpus(manifest), cfg.pgd)
    save_corpus(pc.waveforms, out)
    for sid, why in pc.skipped:
        click.echo(f"skipped {sid}: {why}", err=True)
    click.echo(f"wrote {len(pc.results)} perturbed utterances to {out}")


def _write_report(out: str | None, text: str) -> None:
    click.echo(text, nl=False)
    if out:
        from .evaluation import write_text

        write_text(out, text)


@main.command()
@click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Labeled corpus manifest.")
@click.option("--model", "models", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Model file (repeatable): feature JSON or CNN checkpoint.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report file (text).")
@click.pass_context
@_guard
def evaluate(ctx, manifest, models, out):
    """Per-gender accuracy of each model."""
    from .evaluation import accuracy_by_gender, report_to_text

    cfg = _config(ctx)
    corpus = _eval_corpus(manifest, cfg)
    reports = [accuracy_by_gender(_load_classifier(m, cfg.eval.segment_s), corpus) for m in models]
    _write_report(out, report_to_text(reports))


@main.command()
@click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Clean held-out corpus manifest.")
@click.option("--ref-model", "refs", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Reference CNN checkpoint (repeatable); one matrix row each.")
@click.option("--model", "models", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Attacked classifier (repeatable); one matrix column each.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for matrix.txt and matrix.csv.")
@click.pass_context
@_guard
def matrix(ctx, manifest, refs, models, out):
    """Attack matrix: accuracy of every model on corpora perturbed by every reference (config: pgd.*)."""
    from .evaluation import attack_matrix, write_text

    cfg = _config(ctx)
    corpus = _eval_corpus(manifest, cfg)
    ref_models = [_load_classifier(r, cfg.eval.segment_s) for r in refs]
    attackers = [_load_classifier(m, cfg.eval.segment_s) for m in models]
    am = attack_matrix(ref_models, attackers, corpus, cfg.pgd)
    text = am.to_text()
    click.echo(text, nl=False)
    if out:
        write_text(Path(out) / "matrix.txt", text)
        write_text(Path(out) / "matrix.csv", am.to_csv())


@main.command()
@click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Clean corpus manifest.")
@click.option("--perturbed", required=True, type=click.Path(dir_okay=False), help="Perturbed corpus manifest.")
@click.option("--n", type=int, default=None, help="List length (config: svm.rfe_n).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report file (text).")
@click.pass_context
@_guard
def intersect(ctx, manifest, perturbed, n, out):
    """Top features for gender vs. for perturbed-vs-original, and their overlap."""
    from .evaluation import rfe_intersection

    cfg = _config(ctx)
    if n is not None:
        cfg = cfgmod.override(cfg, "svm.rfe_n", n)
    clean = _eval_corpus(manifest, cfg, "clean")
    pert = _eval_corpus(perturbed, cfg, "perturbed")
    r = rfe_intersection(clean.features(), pert.features(), n=cfg.svm.rfe_n, C=cfg.svm.C, seed=cfg.seeds.base)
    _write_report(out, r.to_text())


@main.command()
@click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Clean corpus manifest.")
@click.option("--perturbed", required=True, type=click.Path(dir_okay=False), help="Perturbed corpus manifest.")
@click.option("--train-features", required=True, type=click.Path(dir_okay=False),
              help="Training feature CSV; its column stds scale the drift.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report file (text).")
@click.pass_context
@_guard
def utility(ctx, manifest, perturbed, train_features, out):
    """Perturbation norms, segmental SNR and feature drift."""
    from .evaluation import utility_metrics

    cfg = _config(ctx)
    X, _ = _features_xy(train_features)
    r = utility_metrics(_eval_corpus(manifest, cfg), _eval_corpus(perturbed, cfg), X.std(axis=0))
    _write_report(out, r.to_text())


@main.command()
@click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Adaptation-tagged corpus manifest.")
@click.option("--model", "models", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Model file (repeatable): feature JSON or CNN checkpoint.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report file (text).")
@click.pass_context
@_guard
def adaptations(ctx, manifest, models, out):
    """Per-adaptation accuracy table."""
    from .evaluation import adaptation_report

    cfg = _config(ctx)
    corpus = _eval_corpus(manifest, cfg)
    table = adaptation_report([_load_classifier(m, cfg.eval.segment_s) for m in models], corpus)
    _write_report(out, table.to_text())


@main.command()
@click.option("--out", default=None, type=click.Path(file_okay=False), help="Report directory (config: paths.out).")
@click.option("--seed", type=int, default=None, help="Base seed (config: seeds.base).")
@click.pass_context
@_guard
def pipeline(ctx, out, seed):
    """Run the whole desk-scale experiment and write every report."""
    from .pipeline import run_pipeline

    cfg = _config(ctx, "seeds.base", seed)
    if out is not None:
        cfg = cfgmod.override(cfg, "paths.out", out)
    r = run_pipeline(cfg, cfg.paths.out)
    click.echo(r.matrix.to_text(), nl=False)
    click.echo(f"reports in {r.out_dir}")


if __name__ == "__main__":
    main()
