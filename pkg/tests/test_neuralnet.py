import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from vocalguard.config import DESK_M5
from vocalguard.errors import DataError, ModeError, ShapeError
from vocalguard.neuralnet import (
    M5,
    M5Classifier,
    M5Config,
    TrainConfig,
    cyclic_lr,
    forward,
    input_tensor,
    labels_tensor,
    load_checkpoint,
    loss_and_input_grad,
    save_checkpoint,
    train,
)
from vocalguard.synth import CorpusSpec, make_corpus

SMALL = M5Config(blocks=((16, 40, 8), (16, 3, 1), (32, 3, 1), (32, 3, 1)))


def random_model(seed, config=DESK_M5, dtype=torch.float64):
    """Random weights and random batch-norm statistics, in eval mode."""
    gen = torch.Generator().manual_seed(seed)
    m = M5(config, generator=gen).to(dtype)
    with torch.no_grad():
        for mod in m.modules():
            if isinstance(mod, torch.nn.BatchNorm1d):
                mod.running_mean.uniform_(-0.2, 0.2, generator=gen)
                mod.running_var.uniform_(0.5, 2.0, generator=gen)
                mod.weight.uniform_(0.5, 1.5, generator=gen)
                mod.bias.uniform_(-0.1, 0.1, generator=gen)
    return m.eval()


def row_loss(model, x, y):
    with torch.no_grad():
        return float(torch.nn.functional.cross_entropy(model(x), y, reduction="sum"))


# ---------------------------------------------------------- gradient check


def gradient_check(seed, n_coords=20, h=1e-4, length=8000):
    model = random_model(seed)
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(rng.uniform(0, 1, (1, length)), dtype=torch.float64)
    y = torch.tensor([int(rng.integers(2))])
    _, grad = loss_and_input_grad(model, x, y)
    worst = 0.0
    # coordinates that lose every max-pool have an exact zero gradient; skip them
    live = np.flatnonzero(grad[0].numpy() != 0)
    for j in rng.choice(live, n_coords, replace=False):
        xp, xm = x.clone(), x.clone()
        xp[0, j] += h
        xm[0, j] -= h
        fd = (row_loss(model, xp, y) - row_loss(model, xm, y)) / (2 * h)
        ad = float(grad[0, j])
        scale = max(abs(fd), abs(ad), 1e-10)
        worst = max(worst, abs(fd - ad) / scale)
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_input_gradient_matches_finite_differences(seed):
    assert gradient_check(seed) <= 1e-4


def test_duplicate_rows_get_identical_gradients():
    model = random_model(1)
    x = torch.rand(1, 8000, dtype=torch.float64).repeat(2, 1)
    _, g = loss_and_input_grad(model, x, torch.tensor([0, 0]))
    assert torch.equal(g[0], g[1])


def test_sum_reduction_gives_per_row_gradients():
    model = random_model(2)
    x = torch.rand(3, 8000, dtype=torch.float64)
    y = torch.tensor([0, 1, 1])
    _, g = loss_and_input_grad(model, x, y)
    _, g1 = loss_and_input_grad(model, x[1:2], y[1:2])
    assert torch.allclose(g[1], g1[0], atol=1e-14)


def test_uniform_logits_loss_is_ln2():
    model = random_model(0)
    with torch.no_grad():
        model.fc.weight.zero_()
        model.fc.bias.zero_()
    loss, _ = loss_and_input_grad(model, torch.rand(2, 8000, dtype=torch.float64), torch.tensor([0, 1]))
    assert np.allclose(loss.numpy(), math.log(2))


def test_train_mode_refuses_input_gradient():
    model = M5(SMALL).train()
    with pytest.raises(ModeError):
        loss_and_input_grad(model, torch.rand(1, 4000), torch.tensor([0]))


# ------------------------------------------------------------------ forward


def test_too_short_input_names_minimum():
    model = M5(DESK_M5).eval()
    need = DESK_M5.min_input_length()
    with pytest.raises(ShapeError, match=str(need)):
        forward(model, torch.zeros(1, need - 1))
    assert forward(model, torch.zeros(1, need)).shape == (1, 2)


@given(st.integers(1, 200_000))
def test_min_input_length_is_tight(n):
    need = DESK_M5.min_input_length()
    assert (DESK_M5.output_length(n) >= 1) == (n >= need)


def test_zero_input_rows_equal():
    model = random_model(3, dtype=torch.float32)
    out = forward(model, torch.zeros(4, 8000))
    assert torch.all(out == out[0])


def test_batch_independence_in_eval_mode():
    model = random_model(4, dtype=torch.float32)
    x = torch.rand(32, 8000, generator=torch.Generator().manual_seed(0))
    full = forward(model, x)
    alone = forward(model, x[7:8])
    assert torch.allclose(full[7], alone[0], atol=1e-6)
    assert torch.equal(forward(model, x), full)


def test_desk_scale_divides_channels():
    assert DESK_M5.channels == [16, 16, 32, 64]
    assert M5Config().channels == [128, 128, 256, 512]
    with pytest.raises(ValueError):
        M5Config(blocks=())


def test_labels_tensor_rejects_unknown():
    assert labels_tensor(["F", "M"]).tolist() == [0, 1]
    with pytest.raises(DataError):
        labels_tensor(["F", "X"])


# ------------------------------------------------------------- schedule


def test_cyclic_lr_shape():
    cfg = TrainConfig(max_lr=1e-3, min_lr=1e-8, cycle_steps=100)
    assert cyclic_lr(0, cfg) == pytest.approx(1e-8)
    assert cyclic_lr(50, cfg) == pytest.approx(1e-3)
    assert cyclic_lr(100, cfg) == pytest.approx(1e-8)
    assert cyclic_lr(25, cfg) == pytest.approx((1e-3 + 1e-8) / 2)
    with pytest.raises(ValueError):
        cyclic_lr(-1, cfg)


@given(st.integers(0, 10_000), st.integers(2, 500))
def test_cyclic_lr_bounded_and_periodic(step, cycle):
    cfg = TrainConfig(max_lr=1e-3, cycle_steps=cycle)
    lr = cyclic_lr(step, cfg)
    assert cfg.min_lr - 1e-18 <= lr <= cfg.max_lr + 1e-18
    assert lr == pytest.approx(cyclic_lr(step + cycle, cfg), rel=1e-12)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(max_lr=1e-9, min_lr=1e-8)
    with pytest.raises(ValueError):
        TrainConfig(total_steps=0)


# ----------------------------------------------------------------- training


@pytest.fixture(scope="module")
def tiny_corpus():
    waves, _ = make_corpus(CorpusSpec(n_per_gender=8, duration_s=1.5, seed=5))
    return waves


TINY_TRAIN = TrainConfig(max_lr=3e-3, cycle_steps=60, total_steps=60, batch_size=8, chunk_s=1.0, seed=3)


def test_training_reduces_loss(tiny_corpus):
    res = train(SMALL, TINY_TRAIN, tiny_corpus, log_every=0)
    head, tail = np.mean(res.loss_trace[:5]), np.mean(res.loss_trace[-5:])
    assert tail <= 0.5 * head
    assert not res.model.training


def test_training_deterministic_in_float64(tiny_corpus):
    cfg = TrainConfig(max_lr=3e-3, cycle_steps=10, total_steps=5, batch_size=4, chunk_s=1.0, seed=9)
    a = train(SMALL, cfg, tiny_corpus, dtype=torch.float64, log_every=0).model
    b = train(SMALL, cfg, tiny_corpus, dtype=torch.float64, log_every=0).model
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)


def test_training_needs_both_genders(tiny_corpus):
    only_f = [w for w in tiny_corpus if w.gender == "F"]
    with pytest.raises(DataError):
        train(SMALL, TINY_TRAIN, only_f)


# --------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path):
    model = random_model(6, dtype=torch.float32)
    save_checkpoint(tmp_path / "m.ckpt", model, "cnn-x")
    back, mid = load_checkpoint(tmp_path / "m.ckpt")
    assert mid == "cnn-x"
    assert back.config == model.config
    for (k, v), (k2, v2) in zip(model.state_dict().items(), back.state_dict().items()):
        if k.endswith("num_batches_tracked"):
            continue
        assert k == k2 and torch.equal(v, v2)
    x = torch.rand(2, 8000)
    assert torch.equal(forward(model, x), forward(back, x))
    save_checkpoint(tmp_path / "m2.ckpt", back, "cnn-x")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(DataError):
        load_checkpoint(p)


def test_classifier_segments_and_predicts(tiny_corpus):
    clf = M5Classifier(random_model(7, dtype=torch.float32), "cnn-r", segment_s=1.0)
    labels = clf.predict(tiny_corpus[:5])
    assert len(labels) == 5 and set(labels) <= {"F", "M"}
    loss, grad = clf.loss_and_input_grad(input_tensor(tiny_corpus[:2]).numpy(), ["F", "M"])
    assert loss.shape == (2,) and grad.shape == (2, tiny_corpus[0].samples.size)
    assert clf.accepts_length(18000) and not clf.accepts_length(10)
