import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from vocalguard.attack import PgdConfig, pgd_batch, pgd_perturb, perturb_corpus, project
from vocalguard.audio_io import Waveform
from vocalguard.errors import DataError, ShapeError
from vocalguard.neuralnet import M5, M5Classifier, M5Config


class LinearLogit:
    """Two-class model with logits (s, -s), s = u.x + c; loss and gradient in closed form."""

    model_id = "lin"

    def __init__(self, u, c=0.0):
        self.u = np.asarray(u, dtype=np.float64)
        self.c = c

    def loss_and_input_grad(self, x, labels):
        x = np.atleast_2d(x)
        s = x @ self.u + self.c
        sign = np.array([1.0 if g == "F" else -1.0 for g in labels])
        # CE with logits (s, -s) against class F is log(1 + exp(-2s))
        m = sign * s
        loss = np.logaddexp(0.0, -2.0 * m)
        dlds = -2.0 * sign / (1.0 + np.exp(2.0 * m))
        return loss, dlds[:, None] * self.u[None, :]

    def accepts_length(self, n):
        return n == self.u.size


def reference_pgd(model, clean, labels, cfg):
    """Plain loop over the update rule, written without the library helpers."""
    x = clean.copy()
    for _ in range(cfg.iterations):
        _, g = model.loss_and_input_grad(x, labels)
        x = x + cfg.alpha * np.sign(g)
        x = clean + np.minimum(np.maximum(x - clean, -cfg.epsilon_clip), cfg.epsilon_clip)
        x = np.minimum(np.maximum(x, 0.0), 1.0)
    return x


def test_linear_oracle_gradient_is_right():
    rng = np.random.default_rng(0)
    m = LinearLogit(rng.normal(size=8), 0.3)
    x = rng.uniform(size=(1, 8))
    _, g = m.loss_and_input_grad(x, ["M"])
    h = 1e-6
    for j in range(8):
        e = np.zeros_like(x)
        e[0, j] = h
        fd = (m.loss_and_input_grad(x + e, ["M"])[0] - m.loss_and_input_grad(x - e, ["M"])[0]) / (2 * h)
        assert fd[0] == pytest.approx(g[0, j], rel=1e-6)


@pytest.mark.parametrize("iters", [1, 7, 60])
def test_pgd_matches_reference_loop(iters):
    rng = np.random.default_rng(iters)
    model = LinearLogit(rng.normal(size=200), 0.1)
    clean = rng.uniform(size=(3, 200))
    cfg = PgdConfig(alpha=0.005, iterations=iters, epsilon_clip=0.05)
    got, losses = pgd_batch(model, clean, ["F", "M", "F"], cfg)
    assert np.array_equal(got, reference_pgd(model, clean, ["F", "M", "F"], cfg))
    assert losses.shape == (3, iters + 1)
    assert np.allclose(losses[:, -1], model.loss_and_input_grad(got, ["F", "M", "F"])[0])


def test_zero_iterations_identity():
    rng = np.random.default_rng(1)
    model = LinearLogit(rng.normal(size=50))
    w = Waveform(rng.uniform(size=50), gender="F")
    r = pgd_perturb(model, w, "F", PgdConfig(iterations=0))
    assert np.array_equal(r.adversarial.samples, w.samples)
    assert r.delta_linf == 0.0 and r.delta_l2 == 0.0
    assert r.loss_trace.shape == (1,)


def test_zero_gradient_leaves_input_unchanged():
    # sign(0) = 0: a model with no input dependence never moves the signal
    model = LinearLogit(np.zeros(30), 1.0)
    clean = np.random.default_rng(2).uniform(size=(1, 30))
    got, _ = pgd_batch(model, clean, ["M"], PgdConfig(iterations=20))
    assert np.array_equal(got, clean)


@given(
    st.integers(0, 10_000),
    st.floats(1e-4, 0.2),
    st.integers(0, 40),
    st.floats(0.001, 0.3),
)
def test_projection_contract(seed, alpha, iters, eps):
    rng = np.random.default_rng(seed)
    model = LinearLogit(rng.normal(size=64))
    clean = rng.choice([0.0, 1.0, 0.5], size=(2, 64)) * rng.uniform(size=(2, 64)) ** 0.1
    clean = np.clip(clean, 0, 1)
    cfg = PgdConfig(alpha=alpha, iterations=iters, epsilon_clip=eps)
    x, _ = pgd_batch(model, clean, ["F", "M"], cfg, check_every_step=True)
    assert np.max(np.abs(x - clean)) <= eps + 1e-9
    assert np.all((x >= 0) & (x <= 1))


@given(st.integers(0, 10_000))
def test_project_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=40)
    x = w + rng.normal(scale=0.5, size=40)
    cfg = PgdConfig()
    p = project(x, w, cfg)
    assert np.array_equal(project(p, w, cfg), p)


def test_ascent_raises_loss():
    rng = np.random.default_rng(3)
    model = LinearLogit(rng.normal(size=300) * 0.05)
    clean = rng.uniform(0.2, 0.8, size=(10, 300))
    labels = ["F", "M"] * 5
    _, losses = pgd_batch(model, clean, labels, PgdConfig(iterations=30))
    assert np.mean(losses[:, -1] >= losses[:, 0]) >= 0.9
    assert np.all(np.diff(losses, axis=1) >= -1e-12)


def test_flip_mode_descends_opposite_label():
    rng = np.random.default_rng(4)
    model = LinearLogit(rng.normal(size=100) * 0.1)
    clean = rng.uniform(0.2, 0.8, size=(1, 100))
    x, _ = pgd_batch(model, clean, ["M"], PgdConfig(iterations=40, flip=True))
    before = model.loss_and_input_grad(clean, ["F"])[0][0]
    after = model.loss_and_input_grad(x, ["F"])[0][0]
    assert after < before


def test_errors():
    model = LinearLogit(np.ones(10))
    with pytest.raises(DataError):
        pgd_perturb(model, Waveform(np.full(10, 0.5)), None)
    with pytest.raises(ShapeError):
        pgd_batch(model, np.zeros((1, 12)), ["F"], PgdConfig())
    with pytest.raises(ShapeError):
        pgd_batch(model, np.zeros((2, 10)), ["F"], PgdConfig())
    with pytest.raises(ValueError):
        PgdConfig(alpha=0)
    with pytest.raises(ValueError):
        PgdConfig(iterations=-1)


def test_config_digest_tracks_values():
    assert PgdConfig().digest() == PgdConfig().digest()
    assert PgdConfig().digest() != PgdConfig(iterations=99).digest()


def small_cnn():
    gen = torch.Generator().manual_seed(0)
    cfg = M5Config(blocks=((16, 40, 8), (16, 3, 1), (32, 3, 1), (32, 3, 1)))
    return M5Classifier(M5(cfg, generator=gen).double(), "cnn-t", segment_s=0.5)


def test_corpus_perturbation_tags_and_determinism():
    rng = np.random.default_rng(5)
    waves = [
        Waveform(rng.uniform(size=8000), gender="FM"[i % 2], source_id=f"u{i}") for i in range(5)
    ]
    waves.append(Waveform(rng.uniform(size=8000), source_id="nolabel"))
    cfg = PgdConfig(iterations=5, segment_s=0.5)
    ref = small_cnn()
    a = perturb_corpus(ref, waves, cfg, batch_size=2)
    b = perturb_corpus(ref, waves, cfg, batch_size=2)
    assert len(a.results) == 5
    assert a.skipped == [("nolabel", "missing gender label")]
    for r, s in zip(a.results, b.results):
        assert np.array_equal(r.adversarial.samples, s.adversarial.samples)
        assert {"perturbed", "ref:cnn-t"} <= r.adversarial.tags
        assert r.delta_linf <= 0.1 + 1e-9
        assert r.reference_model_id == "cnn-t"


def test_too_short_utterances_are_skipped_not_fatal():
    waves = [Waveform(np.full(8000, 0.5), gender="F", source_id="ok")]
    cfg = PgdConfig(iterations=2, segment_s=0.1)  # 1600 samples, below the CNN minimum
    out = perturb_corpus(small_cnn(), waves, cfg)
    assert out.results == [] and out.skipped[0][0] == "ok"
