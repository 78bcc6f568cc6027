"""The convolutional candidate generator: one frame in, one logit per pitch bin out."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..audio import WINDOW_SIZE
from . import kernels as K

BN_MOMENTUM = 0.1


class Normalization(str, enum.Enum):
    LAYER = "layer"
    BATCH = "batch"


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    out_channels: int
    kernel_size: int
    pool: tuple[int, int] | None = None  # (size, stride)
    stride: int = 1

    def output_length(self, length: int) -> int:
        length = (length - self.kernel_size) // self.stride + 1
        if self.pool is not None:
            size, stride = self.pool
            length = (length - size) // stride + 1
        return length


@dataclass(frozen=True)
class ArchitectureConfig:
    """Conv blocks (conv, ReLU, norm, optional max-pool) then a conv head.

    The constructor rejects any configuration whose valid-convolution shape
    arithmetic does not map ``input_size`` samples to exactly one output
    position with ``num_bins`` channels.
    """

    blocks: tuple[BlockConfig, ...]
    head_kernel: int
    num_bins: int
    input_size: int = WINDOW_SIZE
    normalization: Normalization = Normalization.LAYER
    dropout_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if not self.blocks:
            raise ValueError("at least one block is required")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")
        channels = 1
        for i, block in enumerate(self.blocks):
            if block.in_channels != channels:
                raise ValueError(f"block {i} expects {block.in_channels} channels, receives {channels}")
            channels = block.out_channels
        lengths = self.lengths()
        if min(lengths) < 1 or lengths[-1] != 1:
            raise ValueError(f"shape chain {lengths} does not end at length 1")

    def lengths(self) -> list[int]:
        """Sequence lengths after the input, each block and the head."""
        out = [self.input_size]
        for block in self.blocks:
            out.append(block.output_length(out[-1]))
        out.append(out[-1] - self.head_kernel + 1)
        return out

    def to_dict(self) -> dict:
        return {
            "blocks": [
                {
                    "in_channels": b.in_channels,
                    "out_channels": b.out_channels,
                    "kernel_size": b.kernel_size,
                    "pool": list(b.pool) if b.pool else None,
                    "stride": b.stride,
                }
                for b in self.blocks
            ],
            "head_kernel": self.head_kernel,
            "num_bins": self.num_bins,
            "input_size": self.input_size,
            "normalization": self.normalization.value,
            "dropout_prob": self.dropout_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        blocks = tuple(
            BlockConfig(
                b["in_channels"], b["out_channels"], b["kernel_size"],
                tuple(b["pool"]) if b.get("pool") else None, b.get("stride", 1),
            )
            for b in d["blocks"]
        )
        return cls(
            blocks, d["head_kernel"], d["num_bins"], d.get("input_size", WINDOW_SIZE),
            Normalization(d.get("normalization", "layer")), d.get("dropout_prob", 0.0),
        )


def _chain(channels, kernel, pools, head_kernel, num_bins, **kwargs):
    blocks, prev = [], 1
    for ch, pool in zip(channels, pools):
        blocks.append(BlockConfig(prev, ch, kernel, pool))
        prev = ch
    return ArchitectureConfig(tuple(blocks), head_kernel, num_bins, **kwargs)


_POOLS = [(2, 2), (2, 2), (2, 2), None, None, None]


def reference_config(num_bins: int = 1440, **kwargs) -> ArchitectureConfig:
    """Six blocks, channels 256-32-32-128-256-512, kernel 32, head kernel 7."""
    return _chain([256, 32, 32, 128, 256, 512], 32, _POOLS, 7, num_bins, **kwargs)


def desk_config(num_bins: int = 1440, **kwargs) -> ArchitectureConfig:
    """Narrow five-block network with early 4x pooling, trainable on one CPU core.

    Shape chain 1024 -> 248 -> 116 -> 50 -> 17 -> 8 -> 1.
    """
    blocks = (
        BlockConfig(1, 16, 32, (4, 4)),
        BlockConfig(16, 16, 16, (2, 2)),
        BlockConfig(16, 32, 16, (2, 2)),
        BlockConfig(32, 64, 16, (2, 2)),
        BlockConfig(64, 128, 10),
    )
    return ArchitectureConfig(blocks, 8, num_bins, **kwargs)


def tiny_config(num_bins: int = 32, channels: int = 8, **kwargs) -> ArchitectureConfig:
    """Two blocks, used for gradient checks and speed floors."""
    return _chain([channels, channels], 32, [(8, 8), (8, 8)], 11, num_bins, **kwargs)


CONFIGS = {"reference": reference_config, "desk": desk_config, "tiny": tiny_config}


@dataclass
class NetworkParams:
    """Named weight tensors in a fixed order, plus the config they realize."""

    config: ArchitectureConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.tensors)

    def trainable(self) -> list[str]:
        return [n for n in self.tensors if not n.endswith(("running_mean", "running_var"))]

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


def expected_shapes(config: ArchitectureConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for i, b in enumerate(config.blocks):
        shapes[f"block{i}.conv.weight"] = (b.out_channels, b.in_channels, b.kernel_size)
        shapes[f"block{i}.conv.bias"] = (b.out_channels,)
        shapes[f"block{i}.norm.gain"] = (b.out_channels,)
        shapes[f"block{i}.norm.shift"] = (b.out_channels,)
        if config.normalization is Normalization.BATCH:
            shapes[f"block{i}.norm.running_mean"] = (b.out_channels,)
            shapes[f"block{i}.norm.running_var"] = (b.out_channels,)
    last = config.blocks[-1].out_channels
    shapes["head.weight"] = (config.num_bins, last, config.head_kernel)
    shapes["head.bias"] = (config.num_bins,)
    return shapes


def init_params(config: ArchitectureConfig, seed: int = 0, dtype=np.float32) -> NetworkParams:
    """Uniform fan-in initialization for convs, identity for norms."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith(".weight"):
            bound = 1.0 / np.sqrt(shape[1] * shape[2])
            tensors[name] = rng.uniform(-bound, bound, shape)
        elif name.endswith("conv.bias") or name == "head.bias":
            weight_shape = expected_shapes(config)[name.replace("bias", "weight")]
            bound = 1.0 / np.sqrt(weight_shape[1] * weight_shape[2])
            tensors[name] = rng.uniform(-bound, bound, shape)
        elif name.endswith(("gain", "running_var")):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return NetworkParams(config, {k: v.astype(dtype) for k, v in tensors.items()})


def validate_params(params: NetworkParams) -> None:
    shapes = expected_shapes(params.config)
    if list(shapes) != params.names():
        raise ValueError(f"parameter names {params.names()} do not match config {list(shapes)}")
    for name, shape in shapes.items():
        if params.tensors[name].shape != shape:
            raise ValueError(f"{name}: shape {params.tensors[name].shape}, expected {shape}")


def _as_input(params: NetworkParams, frames) -> np.ndarray:
    x = np.asarray(frames, dtype=params.dtype)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != params.config.input_size:
        raise ValueError(f"expected frames of {params.config.input_size} samples, got shape {np.shape(frames)}")
    return x


def forward(params: NetworkParams, frames, *, training=False, rng=None, tape=None) -> np.ndarray:
    """Logits of shape ``(batch, num_bins)`` for raw (unnormalized) frames.

    ``training`` switches batch normalization to batch statistics (updating
    the running buffers) and enables dropout. When ``tape`` is a list, the
    intermediate values needed by :func:`backward` are appended to it.
    """
    config = params.config
    t = params.tensors
    x = _as_input(params, frames)
    for i, block in enumerate(config.blocks):
        p = f"block{i}."
        rec = {"input": x}
        x = K.conv1d_valid(x, t[p + "conv.weight"], t[p + "conv.bias"], block.stride)
        rec["conv"] = x
        x = K.relu(x)
        rec["relu"] = x
        if config.normalization is Normalization.LAYER:
            x = K.layer_norm(x, t[p + "norm.gain"], t[p + "norm.shift"])
        elif training:
            mean, var = x.mean(axis=(0, 2)), x.var(axis=(0, 2))
            t[p + "norm.running_mean"] *= 1 - BN_MOMENTUM
            t[p + "norm.running_mean"] += BN_MOMENTUM * mean.astype(params.dtype)
            t[p + "norm.running_var"] *= 1 - BN_MOMENTUM
            t[p + "norm.running_var"] += BN_MOMENTUM * var.astype(params.dtype)
            x = K.batch_norm(x, t[p + "norm.gain"], t[p + "norm.shift"])
        else:
            x = K.batch_norm(
                x, t[p + "norm.gain"], t[p + "norm.shift"],
                mean=t[p + "norm.running_mean"], var=t[p + "norm.running_var"],
            )
        if block.pool is not None:
            rec["norm"] = x
            x = K.max_pool1d(x, *block.pool)
        if training and config.dropout_prob > 0:
            keep = 1.0 - config.dropout_prob
            mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
            rec["dropout"] = mask
            x = x * mask
        if tape is not None:
            tape.append(rec)
    if tape is not None:
        tape.append({"input": x})
    logits = K.conv1d_valid(x, t["head.weight"], t["head.bias"])
    return logits[:, :, 0]


def backward(params: NetworkParams, tape: list, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse pass through a recorded :func:`forward` call (training mode)."""
    config = params.config
    t = params.tensors
    grads = {}
    head_in = tape[-1]["input"]
    g, grads["head.weight"], grads["head.bias"] = K.conv1d_valid_backward(
        grad_logits[:, :, None], head_in, t["head.weight"]
    )
    for i in reversed(range(len(config.blocks))):
        block, rec, p = config.blocks[i], tape[i], f"block{i}."
        if "dropout" in rec:
            g = g * rec["dropout"]
        if block.pool is not None:
            g = K.max_pool1d_backward(g, rec["norm"], *block.pool)
        norm_backward = K.layer_norm_backward if config.normalization is Normalization.LAYER else K.batch_norm_backward
        g, grads[p + "norm.gain"], grads[p + "norm.shift"] = norm_backward(g, rec["relu"], t[p + "norm.gain"])
        g = K.relu_backward(g, rec["conv"])
        g, grads[p + "conv.weight"], grads[p + "conv.bias"] = K.conv1d_valid_backward(
            g, rec["input"], t[p + "conv.weight"], block.stride, need_input_grad=i > 0
        )
    return {name: grads[name] for name in params.trainable()}
