import numpy as np
import pytest
from hypothesis import given, strategies as st

from vocalguard.errors import DataError
from vocalguard.features import FeatureVector, N_FEATURES
from vocalguard.linmodels import (
    LinearModel,
    Standardizer,
    fit_standardizer,
    labels_to_y,
    load_model,
    predict,
    save_model,
    svm_objective,
    svm_rfe,
    train_linear_svm,
    train_ridge_single,
    y_to_labels,
)


def blobs(n=40, d=2, sep=4.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([1.0, -1.0], n // 2)
    X = rng.normal(size=(n, d))
    X[:, 0] += sep / 2 * y
    return X, y


# ------------------------------------------------------------ standardizer


def test_standardizer_two_values():
    s = fit_standardizer(np.array([[1.0], [3.0]]))
    assert s.mean[0] == 2.0 and s.std[0] == 1.0
    assert np.array_equal(s.apply(np.array([[1.0], [3.0]]))[:, 0], [-1.0, 1.0])


def test_constant_column_frozen():
    X = np.column_stack([np.arange(5.0), np.full(5, 7.0)])
    s = fit_standardizer(X)
    assert s.frozen.tolist() == [False, True]
    assert np.all(s.apply(X)[:, 1] == 0)
    assert np.all(s.std > 0)


def test_standardizer_uses_training_stats():
    s = fit_standardizer(np.array([[0.0], [2.0]]))
    assert s.apply(np.array([[10.0]]))[0, 0] == 9.0


def test_standardizer_rejects_tiny_input():
    with pytest.raises(DataError):
        fit_standardizer(np.zeros((0, 3)))
    with pytest.raises(DataError):
        fit_standardizer(np.zeros((1, 3)))


@given(st.integers(2, 30), st.integers(1, 5), st.integers(0, 10_000))
def test_standardized_moments(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * rng.uniform(0.1, 100, d) + rng.normal(size=d) * 50
    s = fit_standardizer(X)
    Z = s.apply(X)
    live = ~s.frozen
    assert np.allclose(Z[:, live].mean(axis=0), 0, atol=1e-9)
    assert np.allclose(Z[:, live].std(axis=0), 1, atol=1e-9)


# --------------------------------------------------------------------- SVM


def test_separable_blobs_fit_perfectly():
    X, y = blobs(sep=8.0)
    m = train_linear_svm(X, y)
    assert np.array_equal(labels_to_y(m.predict_matrix(X)), y)
    assert m.hyperparams["duality_gap"] <= 1e-6


def test_xor_is_half_right_at_best():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    m = train_linear_svm(X, y)
    acc = np.mean(labels_to_y(m.predict_matrix(X)) == y)
    assert acc <= 0.75
    # no line does better than 3/4 on XOR, and the hinge optimum sits at w = 0
    assert np.allclose(m.weights, 0, atol=1e-6)


def test_single_class_rejected():
    with pytest.raises(DataError):
        train_linear_svm(np.random.default_rng(0).normal(size=(5, 2)), np.ones(5))


def test_bad_C_rejected():
    X, y = blobs()
    with pytest.raises(ValueError):
        train_linear_svm(X, y, C=0.0)


def grid_oracle(Z, y, C):
    """Dense grid search over (w1, w2, b), refined twice around the best cell."""
    centre, half = np.zeros(3), 3.0
    best = None
    for _ in range(4):
        axes = [np.linspace(c - half, c + half, 61) for c in centre]
        W1, W2, B = np.meshgrid(*axes, indexing="ij")
        P = np.stack([W1.ravel(), W2.ravel(), B.ravel()], axis=1)
        margins = y[None, :] * (P[:, :2] @ Z.T + P[:, 2:3])
        obj = 0.5 * np.sum(P**2, axis=1) + C * np.maximum(0, 1 - margins).sum(axis=1)
        k = int(np.argmin(obj))
        best, centre = float(obj[k]), P[k]
        half /= 12.0
    return best


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("C", [0.3, 1.0])
def test_objective_matches_grid_search(seed, C):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 6))
    X = rng.normal(size=(n, 2))
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    m = train_linear_svm(X, y, C=C, seed=seed)
    Z = m.standardizer.apply(X)
    got = svm_objective(m.weights, m.bias, Z, y, C)
    oracle = grid_oracle(Z, y, C)
    assert got <= oracle + 1e-4
    assert oracle <= got + 1e-3


def test_deterministic_per_seed():
    X, y = blobs(n=60, d=5, sep=1.0, seed=3)
    a = train_linear_svm(X, y, seed=4)
    b = train_linear_svm(X, y, seed=4)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_column_scaling_keeps_predictions():
    X, y = blobs(n=60, d=4, sep=2.0, seed=8)
    base = train_linear_svm(X, y).predict_matrix(X)
    Xs = X * np.array([1e3, 0.01, 5.0, 1.0])
    assert train_linear_svm(Xs, y).predict_matrix(Xs) == base


@given(st.integers(0, 1000))
def test_solver_never_worse_than_zero_model(seed):
    X, y = blobs(n=20, d=3, sep=1.0, seed=seed)
    m = train_linear_svm(X, y, seed=seed)
    Z = m.standardizer.apply(X)
    assert svm_objective(m.weights, m.bias, Z, y, 1.0) <= svm_objective(np.zeros(3), 0.0, Z, y, 1.0) + 1e-9


# ----------------------------------------------------------------- predict


def unit_model(w=1.0, b=0.0):
    s = Standardizer(np.zeros(1), np.ones(1), np.zeros(1, dtype=bool))
    return LinearModel(np.array([w]), b, s, (0,), "svm_hinge")


def test_predict_plug_in_and_tie():
    assert predict(unit_model(), np.array([2.3])) == ("F", 2.3)
    assert predict(unit_model(), np.array([0.0]))[0] == "F"
    assert predict(unit_model(), np.array([-0.1]))[0] == "M"


def test_predict_missing_slot():
    m = LinearModel(np.ones(1), 0.0, Standardizer(np.zeros(1), np.ones(1), np.zeros(1, bool)), (5,), "ridge")
    with pytest.raises(DataError):
        predict(m, np.zeros(3))


def test_predict_feature_vector():
    m = LinearModel(np.ones(1), 0.0, Standardizer(np.full(1, 165.0), np.ones(1), np.zeros(1, bool)), (3,), "ridge")
    v = np.zeros(N_FEATURES)
    v[3] = 220.0
    assert predict(m, FeatureVector(v))[0] == "F"


def test_label_mapping():
    assert labels_to_y(["F", "M"]).tolist() == [1.0, -1.0]
    assert y_to_labels(np.array([0.0, -1e-9])) == ["F", "M"]
    with pytest.raises(DataError):
        labels_to_y(["F", None])


# --------------------------------------------------------------------- RFE


def one_informative(seed, n=120, d=10, j=3):
    rng = np.random.default_rng(seed)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    X = rng.normal(size=(n, d))
    X[:, j] += 1.5 * y
    return X, y


def test_rfe_recovers_informative_feature():
    hits = sum(svm_rfe(*one_informative(s), n=1, seed=s).top_n == (3,) for s in range(100))
    assert hits >= 95


def test_brute_force_confirms_feature_three_dominates():
    X, y = one_informative(0)
    # best single-threshold accuracy per column
    acc = []
    for col in X.T:
        best = max(np.mean(np.where(col > t, 1.0, -1.0) == y) for t in col)
        acc.append(max(best, 1 - best))
    assert int(np.argmax(acc)) == 3


def test_rfe_elimination_is_permutation_and_deterministic():
    X, y = one_informative(5)
    a = svm_rfe(X, y, n=4, seed=2)
    b = svm_rfe(X, y, n=4, seed=2)
    assert a == b
    assert sorted(a.elimination_order + a.top_n) == list(range(10))
    assert len(a.top_n) == 4


def test_rfe_full_size_keeps_everything():
    X, y = one_informative(1, d=5)
    r = svm_rfe(X, y, n=5)
    assert r.elimination_order == ()
    m = train_linear_svm(X, y)
    assert list(r.top_n) == list(np.argsort(-np.abs(m.weights), kind="stable"))


def test_rfe_duplicate_columns_one_survives():
    X, y = one_informative(2, d=6)
    X = np.column_stack([X, X[:, 3]])
    r = svm_rfe(X, y, n=1, seed=0)
    assert r.top_n[0] in (3, 6)
    # the copies split one weight evenly, so they are the last two standing
    assert set(r.elimination_order[-1:] + r.top_n) == {3, 6}


def test_rfe_tie_drops_lowest_index():
    # identical columns give identical weights; the lower index goes first
    X, y = one_informative(3, d=4)
    X = np.column_stack([X[:, 0], X[:, 0], X[:, 3]])
    r = svm_rfe(X, y, n=2, seed=0)
    if r.elimination_order[0] in (0, 1):
        assert r.elimination_order[0] == 0


def test_rfe_bad_n():
    X, y = one_informative(0, d=4)
    with pytest.raises(ValueError):
        svm_rfe(X, y, n=0)
    with pytest.raises(ValueError):
        svm_rfe(X, y, n=5)


# ------------------------------------------------------------------- ridge


@given(st.integers(0, 10_000), st.floats(0.0, 50.0))
def test_ridge_matches_lstsq(seed, lam):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=25) * 30 + 150
    y = np.where(rng.random(25) < 0.4, 1.0, -1.0)
    m = train_ridge_single(x, y, lam)
    z = (x - x.mean()) / x.std()
    # augmented least squares: penalize the slope only
    A = np.vstack([np.column_stack([z, np.ones_like(z)]), [np.sqrt(lam), 0.0]])
    coef, *_ = np.linalg.lstsq(A, np.append(y, 0.0), rcond=None)
    assert m.weights[0] == pytest.approx(coef[0], rel=1e-9, abs=1e-12)
    assert m.bias == pytest.approx(coef[1], rel=1e-9, abs=1e-12)


def test_ridge_perfect_column_threshold_at_midpoint():
    x = np.array([100.0, 110.0, 200.0, 210.0])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    m = train_ridge_single(x, y)
    mid = 155.0
    assert m.predict_matrix(np.array([[mid + 1e-6]])) == ["F"]
    assert m.predict_matrix(np.array([[mid - 1e-6]])) == ["M"]


def test_ridge_huge_lambda_follows_majority():
    x = np.arange(10.0)
    y = np.array([1.0] * 7 + [-1.0] * 3)
    m = train_ridge_single(x, y, lam=1e12)
    assert abs(m.weights[0]) < 1e-9
    assert set(m.predict_matrix(x[:, None])) == {"F"}


def test_ridge_zero_variance():
    with pytest.raises(DataError):
        train_ridge_single(np.ones(6), np.array([1.0, -1.0] * 3))


# ------------------------------------------------------------- persistence


def test_model_round_trip_exact(tmp_path):
    X, y = blobs(n=30, d=N_FEATURES, seed=1)
    X[:, 5] = 3.0
    m = train_linear_svm(X, y, model_id="svm-x")
    save_model(tmp_path / "m.json", m)
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.weights, m.weights)
    assert back.bias == m.bias
    assert np.array_equal(back.standardizer.mean, m.standardizer.mean)
    assert np.array_equal(back.standardizer.std, m.standardizer.std)
    assert np.array_equal(back.standardizer.frozen, m.standardizer.frozen)
    assert back.feature_subset == m.feature_subset and back.model_id == "svm-x"
    assert back.predict_matrix(X) == m.predict_matrix(X)
    save_model(tmp_path / "m2.json", back)
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_model_version_checked(tmp_path):
    p = tmp_path / "m.json"
    save_model(p, unit_model())
    p.write_text(p.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(DataError):
        load_model(p)


def test_weights_subset_length_checked():
    with pytest.raises(ValueError):
        LinearModel(np.ones(2), 0.0, unit_model().standardizer, (0,), "ridge")


def test_grid_oracle_is_tight_on_known_case():
    # one point each side at +/-1 with C large: optimum w = 1, b = 0 -> 0.5 (hinge zero)
    Z = np.array([[1.0, 0.0], [-1.0, 0.0]])
    y = np.array([1.0, -1.0])
    assert grid_oracle(Z, y, 10.0) == pytest.approx(0.5, abs=1e-6)
