"""M5-style raw-waveform CNN gender classifier, its training loop and checkpoints.

Labels follow the package-wide convention: class index 0 = F, 1 = M.
"""
from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .audio_io import SAMPLE_RATE, Waveform, fix_length, random_chunk
from .errors import DataError, ModeError, NumericError, ShapeError

log = logging.getLogger(__name__)

CLASS_INDEX = {"F": 0, "M": 1}
CLASS_LABELS = ("F", "M")
CHECKPOINT_MAGIC = b"VGM5"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class M5Config:
    blocks: tuple[tuple[int, int, int], ...] = ((128, 80, 4), (128, 3, 1), (256, 3, 1), (512, 3, 1))
    pool: int = 4
    n_classes: int = 2
    desk_scale: bool = False

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ValueError("M5Config needs at least one conv block")
        object.__setattr__(self, "blocks", tuple(tuple(int(v) for v in b) for b in self.blocks))

    @property
    def channels(self) -> list[int]:
        div = 8 if self.desk_scale else 1
        return [max(1, b[0] // div) for b in self.blocks]

    def output_length(self, n: int) -> int:
        """Sequence length after the conv stack (<= 0 means the input is too short)."""
        for _, k, s in self.blocks:
            if n < k:
                return 0
            n = (n - k) // s + 1
            n //= self.pool
        return n

    def min_input_length(self) -> int:
        lo, hi = 1, 1 << 24
        while lo < hi:
            mid = (lo + hi) // 2
            if self.output_length(mid) >= 1:
                hi = mid
            else:
                lo = mid + 1
        return lo


@dataclass(frozen=True)
class TrainConfig:
    max_lr: float = 1e-4
    min_lr: float = 1e-8
    cycle_steps: int = 12500
    total_steps: int = 50000
    batch_size: int = 32
    chunk_s: float = 3.0
    eval_s: float = 6.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.min_lr < self.max_lr:
            raise ValueError("min_lr must be below max_lr")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.cycle_steps < 2:
            raise ValueError("cycle_steps must be >= 2")


def cyclic_lr(step: int, cfg: TrainConfig) -> float:
    """Triangular schedule: min_lr at the cycle edges, max_lr mid-cycle."""
    if step < 0:
        raise ValueError("step must be non-negative")
    half = cfg.cycle_steps / 2.0
    pos = step % cfg.cycle_steps
    frac = 1.0 - abs(pos - half) / half
    return cfg.min_lr + (cfg.max_lr - cfg.min_lr) * frac


class M5(nn.Module):
    """Conv/BN/ReLU/max-pool blocks, global average pool, linear head."""

    def __init__(self, config: M5Config = M5Config(), generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        layers = []
        in_ch = 1
        for out_ch, (_, k, s) in zip(config.channels, config.blocks):
            layers += [
                nn.Conv1d(in_ch, out_ch, kernel_size=k, stride=s),
                nn.BatchNorm1d(out_ch),
                nn.ReLU(),
                nn.MaxPool1d(config.pool),
            ]
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(in_ch, config.n_classes)
        self.reset_parameters(generator)

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases
        for mod in self.modules():
            if isinstance(mod, (nn.Conv1d, nn.Linear)):
                fan_in = mod.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                mod.weight.uniform_(-bound, bound, generator=generator)
                mod.bias.uniform_(-bound, bound, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(1)
        n = x.shape[-1]
        if self.config.output_length(n) < 1:
            raise ShapeError(
                f"input length {n} too short for the conv stack; "
                f"minimum is {self.config.min_input_length()} samples"
            )
        h = self.features(x)
        h = h.mean(dim=-1)
        return self.fc(h)


def input_tensor(waves: Sequence[Waveform] | np.ndarray, dtype=torch.float32) -> torch.Tensor:
    if isinstance(waves, np.ndarray):
        arr = np.atleast_2d(waves)
    else:
        arr = np.stack([w.samples for w in waves])
    return torch.as_tensor(arr, dtype=dtype)


def labels_tensor(labels: Sequence[str]) -> torch.Tensor:
    try:
        return torch.tensor([CLASS_INDEX[g] for g in labels], dtype=torch.long)
    except KeyError as exc:
        raise DataError(f"missing or bad gender label: {exc}") from exc


def forward(model: M5, batch: torch.Tensor) -> torch.Tensor:
    return model(batch)


def loss_and_input_grad(
    model: M5, x: torch.Tensor, y: torch.Tensor, reduction: str = "sum"
) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-entropy and its gradient w.r.t. the input waveform.

    Requires eval mode: with batch statistics the loss of one row depends on
    every other row. ``reduction='sum'`` keeps each row's gradient equal to
    the gradient of that row's own loss. Returns per-row losses and grads.
    """
    if model.training:
        raise ModeError("input gradients need eval mode (frozen batch-norm statistics)")
    dtype = next(model.parameters()).dtype
    x = x.detach().to(dtype).clone().requires_grad_(True)
    logits = model(x)
    per_row = F.cross_entropy(logits, y, reduction="none")
    total = per_row.sum() if reduction == "sum" else per_row.mean()
    (grad,) = torch.autograd.grad(total, x)
    return per_row.detach(), grad.detach()


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: M5
    loss_trace: list[float] = field(default_factory=list)


def train(
    cfg_m: M5Config,
    cfg_t: TrainConfig,
    corpus: Sequence[Waveform],
    dtype: torch.dtype = torch.float32,
    log_every: int = 100,
) -> TrainResult:
    """Adam + triangular cyclic LR on random fixed-length chunks; returns an eval-mode model."""
    labels = [w.gender for w in corpus]
    if None in labels:
        raise DataError("every training utterance needs a gender label")
    if len(set(labels)) < 2:
        raise DataError("training corpus must contain both genders")
    rng = np.random.default_rng(cfg_t.seed)
    gen = torch.Generator().manual_seed(cfg_t.seed)
    model = M5(cfg_m, generator=gen).to(dtype)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg_t.min_lr, betas=cfg_t.betas, eps=cfg_t.eps)
    y_all = labels_tensor(labels)
    n = len(corpus)
    trace: list[float] = []
    for step in range(cfg_t.total_steps):
        lr = cyclic_lr(step, cfg_t)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = rng.choice(n, size=cfg_t.batch_size, replace=n < cfg_t.batch_size)
        chunks = [random_chunk(corpus[i], cfg_t.chunk_s, rng) for i in idx]
        x = input_tensor(chunks, dtype)
        y = y_all[torch.as_tensor(idx)]
        logits = model(x)
        loss = F.cross_entropy(logits, y)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite training loss at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        trace.append(float(loss.detach()))
        if log_every and (step % log_every == 0 or step == cfg_t.total_steps - 1):
            log.info("step %d lr %.3g loss %.4f", step, lr, trace[-1])
    model.eval()
    return TrainResult(model, trace)


# -------------------------------------------------------------- classifier


class M5Classifier:
    """Evaluation wrapper: fixed-length segments in, F/M labels out."""

    kind = "cnn"

    def __init__(self, model: M5, model_id: str, segment_s: float = 6.0, batch_size: int = 16):
        model.eval()
        self.model = model
        self.model_id = model_id
        self.segment_s = segment_s
        self.batch_size = batch_size

    @property
    def dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype

    def segment(self, w: Waveform) -> Waveform:
        return fix_length(w, self.segment_s)

    @torch.no_grad()
    def logits(self, waves: Sequence[Waveform]) -> np.ndarray:
        out = []
        for i in range(0, len(waves), self.batch_size):
            chunk = [self.segment(w) for w in waves[i : i + self.batch_size]]
            out.append(self.model(input_tensor(chunk, self.dtype)).double().numpy())
        return np.concatenate(out) if out else np.zeros((0, 2))

    def predict(self, corpus) -> list[str]:
        """Labels for an evaluation corpus (anything with ``.waveforms``) or a waveform list."""
        waves = getattr(corpus, "waveforms", corpus)
        lg = self.logits(waves)
        return [CLASS_LABELS[int(i)] for i in np.argmax(lg, axis=1)]

    def loss_and_input_grad(self, x: np.ndarray, labels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        loss, grad = loss_and_input_grad(self.model, input_tensor(x, self.dtype), labels_tensor(labels))
        return loss.double().numpy(), grad.double().numpy()

    def accepts_length(self, n: int) -> bool:
        return self.model.config.output_length(n) >= 1


# ------------------------------------------------------------- checkpoint
#
# Layout (little-endian):
#   4 bytes magic "VGM5", uint32 version, uint32 header length H,
#   H bytes UTF-8 JSON header {config, model_id, tensors: [[name, shape], ...]},
#   then each tensor's values as row-major float32, in header order
#   (parameters first, then batch-norm running statistics).


def _tensor_items(model: M5) -> list[tuple[str, torch.Tensor]]:
    params = [(k, v) for k, v in model.state_dict().items() if not k.endswith("num_batches_tracked")]
    learn = [(k, v) for k, v in params if not k.endswith(("running_mean", "running_var"))]
    stats = [(k, v) for k, v in params if k.endswith(("running_mean", "running_var"))]
    return learn + stats


def save_checkpoint(path: str | Path, model: M5, model_id: str) -> None:
    items = _tensor_items(model)
    header = {
        "config": asdict(model.config),
        "model_id": model_id,
        "tensors": [[k, list(v.shape)] for k, v in items],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    for _, v in items:
        buf.write(v.detach().cpu().numpy().astype("<f4").tobytes(order="C"))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[M5, str]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an M5 checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    cfg = header["config"]
    config = M5Config(
        blocks=tuple(tuple(b) for b in cfg["blocks"]),
        pool=cfg["pool"],
        n_classes=cfg["n_classes"],
        desk_scale=cfg["desk_scale"],
    )
    model = M5(config)
    state = model.state_dict()
    offset = 12 + hlen
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, header["model_id"]
