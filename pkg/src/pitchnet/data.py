"""Synthetic annotated corpora, annotation CSV ingestion and data splits."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .bins import DEFAULT_GRID
from .audio import MODEL_SAMPLE_RATE, Alignment, AudioBuffer, FrameSpec, load_wav, write_wav

# Spacing of random-walk knots in the synthetic f0 contour.
CONTOUR_KNOT_SECONDS = 0.25
CONTOUR_STEP_CENTS = 80.0
FADE_SECONDS = 0.005


class AnnotationError(ValueError):
    pass


@dataclass
class AnnotatedClip:
    audio: AudioBuffer
    pitch: np.ndarray          # Hz per frame, 0 where unvoiced
    voiced: np.ndarray         # bool per frame
    frames: FrameSpec = field(default_factory=FrameSpec)
    name: str = ""

    def __post_init__(self):
        self.pitch = np.asarray(self.pitch, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.pitch.shape != self.voiced.shape:
            raise AnnotationError("pitch and voiced must have equal length")
        if np.any(self.voiced & ~(self.pitch > 0)):
            raise AnnotationError("voiced frames must have positive f0")

    @property
    def times(self) -> np.ndarray:
        return self.frames.centers(len(self.audio))[: len(self.pitch)] / self.audio.sample_rate


@dataclass(frozen=True)
class SynthSpec:
    f0_range: tuple[float, float] = (80.0, 800.0)
    harmonics: int = 3
    vibrato_cents: float = 20.0
    vibrato_hz: float = 5.0
    snr_db: float = 20.0
    unvoiced_fraction: float = 0.3
    duration: float = 4.0
    sample_rate: int = MODEL_SAMPLE_RATE
    hop: int = 80
    seed: int = 0
    # mean length of a voiced segment in seconds
    voiced_seconds: float = 0.9

    def __post_init__(self):
        lo, hi = self.f0_range
        if not 0 < lo <= hi:
            raise ValueError("f0_range must be positive and ordered")
        if not (DEFAULT_GRID.fmin <= lo and hi <= DEFAULT_GRID.fmax):
            raise ValueError(f"f0_range must lie within [{DEFAULT_GRID.fmin}, {DEFAULT_GRID.fmax:.1f}] Hz")
        if hi >= self.sample_rate / 2:
            raise ValueError("f0 range exceeds Nyquist")
        if not 0.0 <= self.unvoiced_fraction < 1.0:
            raise ValueError("unvoiced_fraction must be in [0, 1)")
        if self.harmonics < 1 or self.duration <= 0:
            raise ValueError("harmonics and duration must be positive")


def _voicing_mask(spec: SynthSpec, n: int, rng) -> np.ndarray:
    """Alternating voiced/unvoiced segments hitting the unvoiced fraction on average."""
    sr = spec.sample_rate
    u = spec.unvoiced_fraction
    mask = np.zeros(n, dtype=bool)
    if u == 0.0:
        mask[:] = True
        return mask
    mean_voiced = spec.voiced_seconds * sr
    mean_unvoiced = mean_voiced * u / (1.0 - u)
    pos = 0
    voiced = bool(rng.random() >= u)
    while pos < n:
        mean = mean_voiced if voiced else mean_unvoiced
        length = max(1, int(round(mean * rng.uniform(0.5, 1.5))))
        mask[pos:pos + length] = voiced
        pos += length
        voiced = not voiced
    return mask


def _contour(spec: SynthSpec, n: int, rng) -> np.ndarray:
    """Cubic-smoothed random walk in cents, clamped to the range, plus vibrato."""
    sr = spec.sample_rate
    lo, hi = (1200.0 * math.log2(f) for f in spec.f0_range)
    knots = max(2, int(math.ceil(n / sr / CONTOUR_KNOT_SECONDS)) + 1)
    walk = np.empty(knots)
    walk[0] = rng.uniform(lo, hi)
    for i in range(1, knots):
        step = rng.normal(0.0, CONTOUR_STEP_CENTS)
        # occasional jumps keep whole-range coverage
        if rng.random() < 0.1:
            step = rng.uniform(lo, hi) - walk[i - 1]
        walk[i] = np.clip(walk[i - 1] + step, lo, hi)
    knot_times = np.linspace(0.0, n / sr, knots)
    t = np.arange(n) / sr
    cents = CubicSpline(knot_times, walk)(t)
    margin = spec.vibrato_cents
    cents = np.clip(cents, lo + margin, hi - margin) if hi - lo > 2 * margin else np.full(n, (lo + hi) / 2)
    phase = rng.uniform(0, 2 * np.pi)
    cents = cents + spec.vibrato_cents * np.sin(2 * np.pi * spec.vibrato_hz * t + phase)
    return 2.0 ** (cents / 1200.0)


def synth_clip(spec: SynthSpec, name: str = "") -> AnnotatedClip:
    """Harmonic tone (harmonic k at amplitude 1/k) with white-noise gaps.

    Ground truth is read off the generating contour at frame centers, so it
    is exact by construction.
    """
    rng = np.random.default_rng(spec.seed)
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    f0 = _contour(spec, n, rng)
    voiced = _voicing_mask(spec, n, rng)

    phase = 2 * np.pi * np.cumsum(f0) / sr
    phase += rng.uniform(0, 2 * np.pi)
    tone = np.zeros(n)
    norm = 0.0
    for k in range(1, spec.harmonics + 1):
        alias_free = k * f0 < sr / 2
        tone += np.where(alias_free, np.sin(k * phase) / k, 0.0)
        norm += 1.0 / k
    amplitude = rng.uniform(0.1, 0.9)
    tone *= amplitude / norm

    # short fades at segment boundaries avoid broadband clicks
    fade = max(1, int(FADE_SECONDS * sr))
    envelope = np.convolve(voiced.astype(np.float64), np.ones(fade) / fade, mode="same")
    audio = tone * envelope

    if math.isfinite(spec.snr_db):
        tone_rms = amplitude / norm * math.sqrt(sum(0.5 / k**2 for k in range(1, spec.harmonics + 1)))
        noise_rms = tone_rms / 10.0 ** (spec.snr_db / 20.0)
        audio += rng.normal(0.0, noise_rms, n)
    gap_level = rng.uniform(0.01, 0.3)
    audio += (1.0 - envelope) * rng.normal(0.0, gap_level, n)

    frames = FrameSpec(hop=spec.hop, alignment=Alignment.CENTER_AT_ZERO)
    centers = frames.centers(n)
    # a center one past the end still sees half a window of signal
    inside = np.minimum(centers, n - 1)
    frame_voiced = voiced[inside]
    pitch = np.where(frame_voiced, f0[inside], 0.0)
    return AnnotatedClip(AudioBuffer(audio, sr), pitch, frame_voiced, frames, name)


def synth_corpus(num_clips: int, seed: int = 0, **overrides) -> list[AnnotatedClip]:
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=num_clips)
    return [
        synth_clip(SynthSpec(seed=int(s), **overrides), name=f"clip{i:04d}")
        for i, s in enumerate(seeds)
    ]


def realign_times(times, alignment: Alignment, sample_rate: int, window_size: int, inverse=False):
    """Shift annotation timestamps onto the center-at-zero convention.

    Annotations extracted without padding are centered half a window later
    than their nominal timestamps; ``inverse`` undoes the shift.
    """
    times = np.asarray(times, dtype=np.float64)
    if Alignment(alignment) is Alignment.CENTER_AT_ZERO:
        return times.copy()
    offset = (window_size // 2) / sample_rate
    return times - offset if inverse else times + offset


def load_annotations(path, alignment=Alignment.CENTER_AT_ZERO, sample_rate=MODEL_SAMPLE_RATE, window_size=1024):
    """Read ``time_sec,f0_hz,voiced`` rows; returns ``(times, pitch, voiced)``."""
    times, pitch, voiced = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["time_sec", "f0_hz", "voiced"]:
            raise AnnotationError(f"{path}: expected header time_sec,f0_hz,voiced, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise AnnotationError(f"{path}:{lineno}: expected 3 columns")
            try:
                t, f0, v = float(row[0]), float(row[1]), int(row[2])
            except ValueError:
                raise AnnotationError(f"{path}:{lineno}: malformed row {row}") from None
            if v not in (0, 1):
                raise AnnotationError(f"{path}:{lineno}: voiced must be 0 or 1")
            if v == 1 and not f0 > 0:
                raise AnnotationError(f"{path}:{lineno}: voiced frame with f0 {f0}")
            if times and t <= times[-1]:
                raise AnnotationError(f"{path}:{lineno}: timestamps not increasing")
            times.append(t)
            pitch.append(f0)
            voiced.append(bool(v))
    times = realign_times(times, alignment, sample_rate, window_size)
    return times, np.array(pitch), np.array(voiced, dtype=bool)


def annotations_on_frames(times, pitch, voiced, frame_times, tolerance):
    """Nearest-annotation lookup at ``frame_times``; frames with no annotation
    within ``tolerance`` seconds are unvoiced."""
    times = np.asarray(times, dtype=np.float64)
    frame_times = np.asarray(frame_times, dtype=np.float64)
    out_f0 = np.zeros(len(frame_times))
    out_v = np.zeros(len(frame_times), dtype=bool)
    if len(times) == 0:
        return out_f0, out_v
    right = np.clip(np.searchsorted(times, frame_times), 1, len(times) - 1) if len(times) > 1 else np.zeros(len(frame_times), dtype=int)
    left = np.maximum(right - 1, 0)
    nearest = np.where(np.abs(times[left] - frame_times) <= np.abs(times[right] - frame_times), left, right)
    close = np.abs(times[nearest] - frame_times) <= tolerance
    out_v = close & np.asarray(voiced, dtype=bool)[nearest]
    out_f0 = np.where(out_v, np.asarray(pitch, dtype=np.float64)[nearest], 0.0)
    return out_f0, out_v


def write_annotations(path, times, pitch, voiced) -> None:
    with open(path, "w", newline="") as f:
        f.write("time_sec,f0_hz,voiced\n")
        for t, p, v in zip(times, pitch, voiced):
            f.write(f"{t:.6f},{p:.6f},{int(bool(v))}\n")


def partition(clips, seed: int = 0) -> dict[str, list[int]]:
    """Random 70/15/15 split of clip indices into train/valid/test."""
    n = len(clips) if not isinstance(clips, int) else clips
    if n < 3:
        raise ValueError("need at least 3 clips to partition")
    order = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(0.70 * n)))
    n_valid = max(1, int(round(0.15 * n)))
    n_train = min(n_train, n - 2)
    n_valid = min(n_valid, n - n_train - 1)
    return {
        "train": sorted(order[:n_train].tolist()),
        "valid": sorted(order[n_train:n_train + n_valid].tolist()),
        "test": sorted(order[n_train + n_valid:].tolist()),
    }


@dataclass
class Corpus:
    clips: list[AnnotatedClip]
    splits: dict[str, list[int]]

    def split(self, name: str) -> list[AnnotatedClip]:
        return [self.clips[i] for i in self.splits[name]]


def write_corpus(root, clips: list[AnnotatedClip], seed: int = 0, extra: dict | None = None) -> None:
    """Materialize ``clips/*.wav``, ``annotations/*.csv`` and ``corpus.json``."""
    root = Path(root)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    names = []
    for clip in clips:
        write_wav(root / "clips" / f"{clip.name}.wav", clip.audio)
        write_annotations(root / "annotations" / f"{clip.name}.csv", clip.times, clip.pitch, clip.voiced)
        names.append(clip.name)
    first = clips[0]
    meta = {
        "sample_rate": first.audio.sample_rate,
        "alignment": first.frames.alignment.value,
        "frames": first.frames.to_dict(),
        "clips": names,
        "splits": partition(len(clips), seed),
        "seed": seed,
    }
    meta.update(extra or {})
    (root / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_corpus(root) -> Corpus:
    root = Path(root)
    meta = json.loads((root / "corpus.json").read_text())
    frames = FrameSpec.from_dict(meta["frames"])
    clips = []
    for name in meta["clips"]:
        audio = load_wav(root / "clips" / f"{name}.wav")
        times, pitch, voiced = load_annotations(
            root / "annotations" / f"{name}.csv", frames.alignment, audio.sample_rate, frames.window_size
        )
        # annotations are now center-at-zero; resample them onto our frame grid
        grid = FrameSpec(frames.window_size, frames.hop)
        frame_times = grid.times(len(audio), audio.sample_rate)
        if frames.alignment is not Alignment.CENTER_AT_ZERO:
            pitch, voiced = annotations_on_frames(times, pitch, voiced, frame_times, 0.5 * grid.hop / audio.sample_rate)
        elif len(pitch) > len(frame_times):
            pitch, voiced = pitch[: len(frame_times)], voiced[: len(frame_times)]
        clips.append(AnnotatedClip(audio, pitch, voiced, grid, name))
    splits = meta.get("splits") or partition(len(clips), meta.get("seed", 0))
    return Corpus(clips, splits)


def spec_dict(spec: SynthSpec) -> dict:
    d = asdict(spec)
    d["f0_range"] = list(spec.f0_range)
    return d
