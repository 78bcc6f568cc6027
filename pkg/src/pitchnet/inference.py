"""Batch inference: audio in, pitch track out."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .audio import MODEL_SAMPLE_RATE, AudioBuffer, FrameSpec, frame, load_wav, resample
from .bins import BinGrid
from .decode import (
    DEFAULT_WINDOW_BINS,
    PitchTrack,
    Posteriorgram,
    decode_argmax,
    decode_local_expected_value,
    periodicity_entropy,
    periodicity_max,
    voicing,
    write_track,
)
from .network import forward, softmax
from .network.model import NetworkParams

DECODERS = ("argmax", "weighted")
PERIODICITY = ("entropy", "max")


def all_cores() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


@dataclass
class Estimator:
    params: NetworkParams
    grid: BinGrid
    decoder: str = "argmax"
    periodicity: str = "entropy"
    threshold: float = 0.5
    hop_ms: float = 10.0
    window_bins: int = DEFAULT_WINDOW_BINS
    threads: int = 1
    chunk_frames: int = 32

    def __post_init__(self):
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}")
        if self.periodicity not in PERIODICITY:
            raise ValueError(f"periodicity must be one of {PERIODICITY}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if self.hop_ms <= 0:
            raise ValueError("hop must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def frame_spec(self) -> FrameSpec:
        hop = max(1, int(round(self.hop_ms * MODEL_SAMPLE_RATE / 1000.0)))
        return FrameSpec(self.params.config.input_size, hop)

    def logits(self, frames: np.ndarray) -> np.ndarray:
        chunks = [frames[i:i + self.chunk_frames] for i in range(0, len(frames), self.chunk_frames)]
        # one BLAS thread per worker; parallelism comes from the frame chunks
        with threadpool_limits(limits=1):
            if self.threads == 1 or len(chunks) == 1:
                outs = [forward(self.params, c) for c in chunks]
            else:
                with ThreadPoolExecutor(self.threads) as pool:
                    outs = list(pool.map(lambda c: forward(self.params, c), chunks))
        return np.concatenate(outs)

    def posteriorgram(self, buf: AudioBuffer) -> tuple[np.ndarray, Posteriorgram]:
        buf = resample(buf, MODEL_SAMPLE_RATE)
        spec = self.frame_spec
        frames = frame(buf, spec)
        probs = softmax(self.logits(frames).astype(np.float64))
        return spec.times(len(buf), buf.sample_rate), Posteriorgram(probs, self.grid)

    def track_from_posteriorgram(self, times, post: Posteriorgram) -> PitchTrack:
        if self.decoder == "argmax":
            f0 = decode_argmax(post)
        else:
            f0 = decode_local_expected_value(post, self.window_bins)
        h = periodicity_entropy(post) if self.periodicity == "entropy" else periodicity_max(post)
        return PitchTrack(times, f0, h, voicing(h, self.threshold))

    def estimate(self, buf: AudioBuffer) -> PitchTrack:
        return self.track_from_posteriorgram(*self.posteriorgram(buf))

    def process_file(self, wav_path, csv_path) -> float:
        """Load, estimate and save; returns the audio duration in seconds."""
        buf = load_wav(wav_path)
        write_track(csv_path, self.estimate(buf))
        return buf.duration


@dataclass
class CorpusPredictions:
    """Frame-aligned reference and estimates concatenated over clips."""

    ref_f0: np.ndarray
    ref_voiced: np.ndarray
    f0: np.ndarray
    entropy: np.ndarray
    max: np.ndarray


def predict_corpus(estimator: Estimator, clips) -> CorpusPredictions:
    cols = {k: [] for k in ("ref_f0", "ref_voiced", "f0", "entropy", "max")}
    for clip in clips:
        if clip.frames.hop != estimator.frame_spec.hop or clip.audio.sample_rate != MODEL_SAMPLE_RATE:
            raise ValueError(f"{clip.name}: annotations are not on the estimator's frame grid")
        times, post = estimator.posteriorgram(clip.audio)
        n = min(len(clip.pitch), len(times))
        track = estimator.track_from_posteriorgram(times, post)
        cols["ref_f0"].append(clip.pitch[:n])
        cols["ref_voiced"].append(clip.voiced[:n])
        cols["f0"].append(track.f0[:n])
        cols["entropy"].append(periodicity_entropy(post)[:n])
        cols["max"].append(periodicity_max(post)[:n])
    return CorpusPredictions(**{k: np.concatenate(v) for k, v in cols.items()})
