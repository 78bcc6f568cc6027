"""Supervised training of the candidate generator."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import FrameSpec, frame
from .bins import BinGrid
from .network import forward, backward, save_params
from .network.kernels import log_softmax, softmax
from .network.model import NetworkParams

log = logging.getLogger(__name__)

UNVOICED = -1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    total_steps: int = 3000
    learning_rate: float = 2e-4
    seed: int = 0
    blur_std_cents: float = 25.0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.blur_std_cents < 0:
            raise ValueError("blur_std_cents must be >= 0")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")


@dataclass
class TrainExample:
    frame: np.ndarray
    target_bin: int = UNVOICED


@dataclass
class FrameDataset:
    """Frames stacked as ``(N, window)`` with one target bin each (``-1`` = unvoiced)."""

    frames: np.ndarray
    bins: np.ndarray

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        self.bins = np.asarray(self.bins, dtype=np.int64)
        if len(self.frames) != len(self.bins):
            raise ValueError("frames and bins must have equal length")

    def __len__(self):
        return len(self.bins)

    @classmethod
    def from_examples(cls, examples) -> "FrameDataset":
        return cls(np.stack([e.frame for e in examples]), np.array([e.target_bin for e in examples]))

    @classmethod
    def from_clips(cls, clips, grid: BinGrid, voiced_only: bool = False) -> "FrameDataset":
        frames, bins = [], []
        for clip in clips:
            windows = frame(clip.audio, FrameSpec(clip.frames.window_size, clip.frames.hop))
            n = min(len(windows), len(clip.pitch))
            target = np.full(n, UNVOICED, dtype=np.int64)
            v = clip.voiced[:n]
            target[v] = grid.quantize(clip.pitch[:n][v])
            if voiced_only:
                windows, target = windows[:n][v], target[v]
            frames.append(windows[: len(target)])
            bins.append(target)
        return cls(np.concatenate(frames), np.concatenate(bins))

    @property
    def has_unvoiced(self) -> bool:
        return bool(np.any(self.bins == UNVOICED))


def make_targets(grid: BinGrid, target_bins, rng, blur_std_cents: float = 25.0) -> np.ndarray:
    """Gaussian-blurred, sum-normalized target rows.

    Unvoiced entries (``-1``) get a uniformly random bin, drawn anew on
    every call, and are then blurred like any other target.
    """
    target_bins = np.asarray(target_bins, dtype=np.int64).copy()
    unvoiced = target_bins == UNVOICED
    if np.any(unvoiced):
        target_bins[unvoiced] = rng.integers(0, grid.num_bins, size=int(unvoiced.sum()))
    if np.any((target_bins < 0) | (target_bins >= grid.num_bins)):
        raise ValueError("target bin out of range")
    out = np.zeros((len(target_bins), grid.num_bins), dtype=np.float64)
    if blur_std_cents == 0:
        out[np.arange(len(target_bins)), target_bins] = 1.0
        return out
    sigma = blur_std_cents / grid.cents_per_bin
    idx = np.arange(grid.num_bins)
    out = np.exp(-0.5 * ((idx[None, :] - target_bins[:, None]) / sigma) ** 2)
    return out / out.sum(axis=1, keepdims=True)


def make_target(grid: BinGrid, example: TrainExample, rng, blur_std_cents: float = 25.0) -> np.ndarray:
    return make_targets(grid, [example.target_bin], rng, blur_std_cents)[0]


def cce_loss(logits, targets) -> float:
    """Batch mean of the categorical cross-entropy against soft targets."""
    logits = np.asarray(logits)
    if np.any(np.isnan(logits)):
        raise ValueError("NaN in logits")
    return float(-(targets * log_softmax(logits.astype(np.float64))).sum(axis=1).mean())


def cce_grad(logits, targets) -> np.ndarray:
    return ((softmax(logits.astype(np.float64)) - targets) / len(logits)).astype(logits.dtype)


def loss_and_grads(params: NetworkParams, frames, targets, rng=None):
    tape = []
    logits = forward(params, frames, training=True, rng=rng, tape=tape)
    loss = cce_loss(logits, targets)
    grads = backward(params, tape, cce_grad(logits, targets))
    return loss, grads


def gradient_check(params: NetworkParams, frames, targets, h: float = 1e-3, names=None) -> dict[str, float]:
    """Compare backprop gradients with central finite differences in float64.

    Returns, per tensor, ``|g - fd| / max(|g|, |fd|)`` over the flattened
    tensor (0 when both vanish). Dropout must be disabled.
    """
    if params.config.dropout_prob > 0:
        raise ValueError("gradient check requires dropout_prob == 0")
    params = params.astype(np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    _, grads = loss_and_grads(params, frames, targets)
    errors = {}
    for name in names or params.trainable():
        tensor = params.tensors[name]
        numeric = np.zeros_like(tensor)
        flat, out = tensor.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = cce_loss(forward(params, frames, training=True), targets)
            flat[i] = saved - h
            down = cce_loss(forward(params, frames, training=True), targets)
            flat[i] = saved
            out[i] = (up - down) / (2 * h)
        scale = max(np.linalg.norm(grads[name]), np.linalg.norm(numeric))
        errors[name] = 0.0 if scale == 0 else float(np.linalg.norm(grads[name] - numeric) / scale)
    return errors


class Adam:
    def __init__(self, params: NetworkParams, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(params[n]) for n in params.trainable()}
        self.v = {n: np.zeros_like(params[n]) for n in params.trainable()}

    def step(self, params: NetworkParams, grads: dict) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        lr_t = self.lr * np.sqrt(1 - b2**self.step_count) / (1 - b1**self.step_count)
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params.tensors[name] -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(params.dtype)


def train(config: TrainConfig, dataset: FrameDataset, params: NetworkParams, grid: BinGrid,
          checkpoint_dir=None, progress=None):
    """Run exactly ``config.total_steps`` Adam steps; no early stopping.

    Returns the trained parameters (a copy) and the per-step loss list.
    Batches are drawn from a fresh permutation each epoch.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if len(dataset) < config.batch_size:
        raise ValueError(f"dataset of {len(dataset)} frames smaller than one batch")
    if dataset.bins.max() >= grid.num_bins:
        raise ValueError("dataset targets exceed the bin grid")
    params = params.copy()
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(params, config.learning_rate, config.betas, config.adam_eps)
    losses = []
    order, cursor = rng.permutation(len(dataset)), 0
    for step in range(1, config.total_steps + 1):
        if cursor + config.batch_size > len(order):
            order, cursor = rng.permutation(len(dataset)), 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        targets = make_targets(grid, dataset.bins[idx], rng, config.blur_std_cents)
        loss, grads = loss_and_grads(params, dataset.frames[idx], targets, rng)
        optimizer.step(params, grads)
        losses.append(loss)
        if progress is not None:
            progress(step, loss)
        if checkpoint_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_params(Path(checkpoint_dir) / f"step{step:07d}.pnpe", params, grid)
            log.info("checkpoint at step %d, loss %.4f", step, loss)
    return params, losses


def write_loss_log(path, losses) -> None:
    with open(path, "w") as f:
        f.write("step,loss\n")
        for step, loss in enumerate(losses, start=1):
            f.write(f"{step},{loss:.6f}\n")


def read_loss_log(path) -> list[float]:
    with open(path) as f:
        header = f.readline().strip()
        if header != "step,loss":
            raise ValueError(f"unexpected loss log header {header!r}")
        return [float(line.split(",")[1]) for line in f if line.strip()]
