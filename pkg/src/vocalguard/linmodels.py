"""Linear classifiers over acoustic feature vectors.

Label convention everywhere: F -> +1, M -> -1, and a score of exactly 0 is
classified F.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .features.registry import FEATURE_NAMES, REGISTRY_VERSION, FeatureVector

MODEL_FORMAT_VERSION = 1
LABEL_SIGN = {"F": 1.0, "M": -1.0}


def labels_to_y(labels: Sequence[str]) -> np.ndarray:
    try:
        return np.array([LABEL_SIGN[g] for g in labels])
    except KeyError as exc:
        raise DataError(f"bad or missing gender label {exc.args[0]!r}") from None


def y_to_labels(y: np.ndarray) -> list[str]:
    return ["F" if v >= 0 else "M" for v in y]


# ------------------------------------------------------------ standardizer


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    frozen: np.ndarray  # True where the training column had zero variance

    def apply(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        if np.any(self.frozen):
            Z[..., self.frozen] = 0.0
        return Z

    def subset(self, idx: Sequence[int]) -> "Standardizer":
        idx = np.asarray(idx, dtype=int)
        return Standardizer(self.mean[idx], self.std[idx], self.frozen[idx])


def fit_standardizer(X: np.ndarray) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot standardize an empty matrix")
    if X.shape[0] < 2:
        raise DataError("standardizer needs at least 2 rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    frozen = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    std = np.where(frozen, 1.0, std)
    return Standardizer(mean, std, frozen)


# ------------------------------------------------------------------ model


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    standardizer: Standardizer
    feature_subset: tuple[int, ...]
    kind: str  # "svm_hinge" | "ridge"
    hyperparams: dict = field(default_factory=dict)
    model_id: str = ""

    def __post_init__(self):
        if len(self.weights) != len(self.feature_subset):
            raise ValueError("weights and feature_subset must have equal length")

    @property
    def feature_names(self) -> list[str]:
        return [FEATURE_NAMES[i] for i in self.feature_subset]

    def decision(self, X_full: np.ndarray) -> np.ndarray:
        """Scores for rows of full-width (registry) feature matrices."""
        X_full = np.atleast_2d(X_full)
        Z = self.standardizer.apply(X_full[:, list(self.feature_subset)])
        return Z @ self.weights + self.bias

    def predict_matrix(self, X_full: np.ndarray) -> list[str]:
        return y_to_labels(self.decision(X_full))


def predict(m: LinearModel, x: FeatureVector | np.ndarray) -> tuple[str, float]:
    values = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if values.shape[-1] <= max(m.feature_subset):
        raise DataError("feature vector is missing slots required by the model")
    score = float(m.decision(values)[0])
    return ("F" if score >= 0 else "M"), score


# -------------------------------------------------------------------- SVM


def svm_objective(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, C: float) -> float:
    """0.5 * (|w|^2 + b^2) + C * sum(hinge). The bias is regularized like a weight."""
    margins = y * (Z @ w + b)
    return 0.5 * (float(w @ w) + b * b) + C * float(np.maximum(0.0, 1.0 - margins).sum())


def _dual_cd(
    Z: np.ndarray,
    y: np.ndarray,
    C: float,
    rng: np.random.Generator,
    tol: float,
    max_epochs: int,
    alpha0: np.ndarray | None = None,
) -> tuple[np.ndarray, float, int, float, np.ndarray]:
    """Dual coordinate descent for the L2-regularized hinge loss (bias as a constant column).

    Coordinates stuck at a bound are shrunk out of the sweep (projected
    gradient test) and brought back whenever the active set looks converged
    but the full duality gap is still above ``tol``. ``alpha0`` warm-starts
    the dual variables; the returned alphas can seed a nearby problem.
    """
    n = Z.shape[0]
    A = np.hstack([Z, np.ones((n, 1))])
    YA = y[:, None] * A
    Qd = np.einsum("ij,ij->i", A, A)
    alpha = np.zeros(n) if alpha0 is None else np.clip(alpha0, 0.0, C).astype(np.float64)
    v = YA.T @ alpha  # = sum_i alpha_i y_i a_i
    active = np.flatnonzero(Qd > 0)
    everyone = active.copy()
    pg_max_old, pg_min_old = np.inf, -np.inf
    eps = 1.0
    gap = np.inf
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        pg_max, pg_min = -np.inf, np.inf
        keep = []
        for i in rng.permutation(active):
            ya = YA[i]
            g = float(v @ ya) - 1.0
            a = alpha[i]
            if a == 0.0:
                if g > pg_max_old:
                    continue
                pg = min(g, 0.0)
            elif a == C:
                if g < pg_min_old:
                    continue
                pg = max(g, 0.0)
            else:
                pg = g
            keep.append(i)
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0:
                new = min(max(a - g / Qd[i], 0.0), C)
                v += (new - a) * ya
                alpha[i] = new
        primal = 0.5 * float(v @ v) + C * float(np.maximum(0.0, 1.0 - A @ v * y).sum())
        dual = float(alpha.sum()) - 0.5 * float(v @ v)
        gap = primal - dual
        if gap <= tol:
            break
        if not keep or pg_max - pg_min <= eps:
            # active set converged but the whole problem is not: unshrink
            active = everyone
            pg_max_old, pg_min_old = np.inf, -np.inf
            eps = max(eps * 0.1, 1e-12)
            continue
        active = np.array(sorted(keep), dtype=int)
        pg_max_old = pg_max if pg_max > 0 else np.inf
        pg_min_old = pg_min if pg_min < 0 else -np.inf
    return v[:-1].copy(), float(v[-1]), epoch, gap, alpha


def _fit_svm(X, y, C, seed, subset, tol, max_epochs, model_id, alpha0=None):
    std = fit_standardizer(X)
    Z = std.apply(X)
    w, b, epochs, gap, alpha = _dual_cd(Z, y, C, np.random.default_rng(seed), tol, max_epochs, alpha0)
    model = LinearModel(
        w,
        b,
        std,
        subset,
        "svm_hinge",
        {"C": C, "seed": seed, "epochs": epochs, "duality_gap": gap},
        model_id,
    )
    return model, alpha


def train_linear_svm(
    X: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    seed: int = 0,
    feature_subset: Sequence[int] | None = None,
    tol: float = 1e-6,
    max_epochs: int = 10000,
    model_id: str = "",
) -> LinearModel:
    """Soft-margin linear SVM on internally standardized columns.

    ``X`` holds the columns named by ``feature_subset`` (default: all of them,
    in registry order). Coordinate order is shuffled by ``seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if C <= 0:
        raise ValueError("C must be positive")
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise DataError("linear SVM needs both classes (+1 and -1) present")
    subset = tuple(range(X.shape[1])) if feature_subset is None else tuple(feature_subset)
    if len(subset) != X.shape[1]:
        raise ValueError("feature_subset length must match X columns")
    return _fit_svm(X, y, C, seed, subset, tol, max_epochs, model_id)[0]


# -------------------------------------------------------------------- RFE


@dataclass(frozen=True)
class RfeRanking:
    elimination_order: tuple[int, ...]  # least important first
    top_n: tuple[int, ...]  # most important first

    def names(self) -> list[str]:
        return [FEATURE_NAMES[i] for i in self.top_n]


def svm_rfe(
    X: np.ndarray,
    y: np.ndarray,
    n: int,
    C: float = 1.0,
    seed: int = 0,
    feature_ids: Sequence[int] | None = None,
) -> RfeRanking:
    """Drop the feature with the smallest squared weight until ``n`` remain.

    Ties go to the lowest feature id. The SVMs trained here are thrown away.
    Each round warm-starts from the previous round's dual solution.
    """
    X = np.asarray(X, dtype=np.float64)
    ids = list(range(X.shape[1])) if feature_ids is None else list(feature_ids)
    if not 1 <= n <= len(ids):
        raise ValueError(f"n must be in [1, {len(ids)}]")
    surviving = list(range(X.shape[1]))
    eliminated: list[int] = []
    alpha = None
    while True:
        m, alpha = _fit_svm(X[:, surviving], y, C, seed, tuple(surviving), 1e-6, 10000, "", alpha)
        if len(surviving) == n:
            break
        importance = m.weights**2
        lowest = importance.min()
        candidates = [surviving[j] for j in np.flatnonzero(importance == lowest)]
        drop = min(candidates, key=lambda c: ids[c])
        eliminated.append(drop)
        surviving.remove(drop)
    order = sorted(range(len(surviving)), key=lambda j: (-abs(m.weights[j]), ids[surviving[j]]))
    return RfeRanking(
        tuple(ids[c] for c in eliminated), tuple(ids[surviving[j]] for j in order)
    )


# ------------------------------------------------------------------ ridge


def train_ridge_single(
    x_col: np.ndarray, y: np.ndarray, lam: float = 0.0, feature: int = 0, model_id: str = ""
) -> LinearModel:
    """Closed-form ridge regression of +/-1 labels on one standardized column."""
    x_col = np.asarray(x_col, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    std = fit_standardizer(x_col[:, None])
    if std.frozen[0]:
        raise DataError("ridge column has zero variance")
    z = std.apply(x_col[:, None])[:, 0]
    w = float(z @ y / (z @ z + lam))
    b = float(y.mean())
    return LinearModel(np.array([w]), b, std, (feature,), "ridge", {"lambda": lam}, model_id)


# ------------------------------------------------------------ persistence


def model_to_dict(m: LinearModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "registry_version": REGISTRY_VERSION,
        "model_id": m.model_id,
        "kind": m.kind,
        "hyperparams": m.hyperparams,
        "feature_subset": list(m.feature_subset),
        "feature_names": m.feature_names,
        "weights": [float(v) for v in m.weights],
        "bias": float(m.bias),
        "standardizer": {
            "mean": [float(v) for v in m.standardizer.mean],
            "std": [float(v) for v in m.standardizer.std],
            "frozen": [bool(v) for v in m.standardizer.frozen],
        },
    }


def model_from_dict(d: dict) -> LinearModel:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported linear model format {d.get('format_version')}")
    s = d["standardizer"]
    return LinearModel(
        np.array(d["weights"], dtype=np.float64),
        float(d["bias"]),
        Standardizer(
            np.array(s["mean"], dtype=np.float64),
            np.array(s["std"], dtype=np.float64),
            np.array(s["frozen"], dtype=bool),
        ),
        tuple(d["feature_subset"]),
        d["kind"],
        dict(d["hyperparams"]),
        d.get("model_id", ""),
    )


def save_model(path: str | Path, m: LinearModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(model_to_dict(m), indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> LinearModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ------------------------------------------------------------- classifier


class FeatureClassifier:
    """Evaluation adapter: classifies an evaluation corpus through its feature matrix."""

    kind = "features"

    def __init__(self, model: LinearModel, model_id: str | None = None):
        self.model = model
        self.model_id = model_id or model.model_id or model.kind

    def predict(self, corpus) -> list[str]:
        return self.model.predict_matrix(corpus.feature_matrix())
