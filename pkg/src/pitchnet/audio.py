"""Audio buffers, WAV ingestion, resampling and framing."""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

MODEL_SAMPLE_RATE = 8000
WINDOW_SIZE = 1024
# Zero crossings of the windowed-sinc kernel on each side of its center.
RESAMPLE_ZERO_CROSSINGS = 64


class WavFormatError(ValueError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(ValueError):
    """The WAV encoding is valid but not one we decode."""


class DegenerateInputError(ValueError):
    pass


class Alignment(str, enum.Enum):
    CENTER_AT_ZERO = "center_at_zero"
    CENTER_AT_HALF_WINDOW = "center_at_half_window"


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameSpec:
    window_size: int = WINDOW_SIZE
    hop: int = 80
    alignment: Alignment = Alignment.CENTER_AT_ZERO

    def __post_init__(self):
        if self.window_size <= 0 or self.hop <= 0:
            raise ValueError("window_size and hop must be positive")
        object.__setattr__(self, "alignment", Alignment(self.alignment))

    def centers(self, num_samples: int) -> np.ndarray:
        """Sample index at the center of every frame for a signal of ``num_samples``."""
        offset = 0 if self.alignment is Alignment.CENTER_AT_ZERO else self.window_size // 2
        if num_samples < offset:
            count = 1
        else:
            count = (num_samples - offset) // self.hop + 1
        return offset + self.hop * np.arange(count, dtype=np.int64)

    def times(self, num_samples: int, sample_rate: int) -> np.ndarray:
        return self.centers(num_samples) / float(sample_rate)

    def to_dict(self) -> dict:
        return {"window_size": self.window_size, "hop": self.hop, "alignment": self.alignment.value}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameSpec":
        return cls(int(d["window_size"]), int(d["hop"]), Alignment(d["alignment"]))


def _parse_fmt(chunk: bytes):
    if len(chunk) < 16:
        raise WavFormatError("fmt chunk too short")
    fmt_tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if fmt_tag == 0xFFFE:  # WAVE_FORMAT_EXTENSIBLE: real tag is in the subformat GUID
        if len(chunk) < 26:
            raise WavFormatError("extensible fmt chunk too short")
        fmt_tag = struct.unpack("<H", chunk[24:26])[0]
    return fmt_tag, channels, rate, block_align, bits


def load_wav(path) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file, averaging channels to mono."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing data chunk")

    fmt_tag, channels, rate, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise WavFormatError(f"{path}: invalid channel count or sample rate")
    if fmt_tag == 1 and bits == 16:
        samples = np.frombuffer(payload, dtype="<i2", count=len(payload) // 2).astype(np.float64) / 32768.0
    elif fmt_tag == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4", count=len(payload) // 4).astype(np.float64)
    else:
        raise UnsupportedWavError(f"{path}: unsupported encoding (format {fmt_tag}, {bits} bits)")
    usable = len(samples) - len(samples) % channels
    samples = samples[:usable].reshape(-1, channels).mean(axis=1)
    return AudioBuffer(samples, rate)


def write_wav(path, buf: AudioBuffer) -> None:
    """Write a mono IEEE-float32 WAV file."""
    payload = np.asarray(buf.samples, dtype="<f4").tobytes()
    header = b"RIFF" + struct.pack("<I", 4 + 8 + 18 + 8 + len(payload)) + b"WAVE"
    fmt = struct.pack("<HHIIHHH", 3, 1, buf.sample_rate, buf.sample_rate * 4, 4, 32, 0)
    body = b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(header + body)


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling to ``target_rate``.

    The output holds ``ceil(len * target_rate / sample_rate)`` samples, so the
    duration is preserved to within one sample.
    """
    if int(target_rate) != target_rate or target_rate <= 0:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == buf.sample_rate:
        return buf
    g = math.gcd(buf.sample_rate, target_rate)
    up, down = target_rate // g, buf.sample_rate // g
    factor = max(up, down)
    taps = 2 * RESAMPLE_ZERO_CROSSINGS * factor + 1
    kernel = signal.firwin(taps, 1.0 / factor, window=("kaiser", 8.6))
    out = signal.resample_poly(np.asarray(buf.samples, dtype=np.float64), up, down, window=kernel)
    return AudioBuffer(out, target_rate)


def frame(buf: AudioBuffer, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Slice ``buf`` into windows of ``spec.window_size`` samples.

    Frame ``t`` is centered on sample ``t * hop`` (or ``window_size // 2 +
    t * hop`` for half-window alignment); samples outside the signal are
    zeros. Frames are returned unnormalized as a ``(frames, window_size)``
    float32 array.
    """
    n = len(buf.samples)
    if n == 0:
        raise DegenerateInputError("cannot frame an empty buffer")
    if spec.window_size > 4 * n:
        raise DegenerateInputError(f"window of {spec.window_size} samples exceeds 4x signal length {n}")
    centers = spec.centers(n)
    half = spec.window_size // 2
    left = half
    right = max(0, int(centers[-1]) - half + spec.window_size - n)
    padded = np.pad(buf.samples, (left, right))
    windows = np.lib.stride_tricks.sliding_window_view(padded, spec.window_size)
    # centers[t] - half + left == centers[t]
    return np.ascontiguousarray(windows[centers])
