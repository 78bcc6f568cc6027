"""From pitch posteriorgrams to pitch, periodicity and voicing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bins import BinGrid

COARSE_THRESHOLDS = tuple([i / 10 for i in range(10)] + [2.0**-i for i in range(1, 10)])
REFINE_START_STEP = 0.05
REFINE_STEPS = 8
DEFAULT_WINDOW_BINS = 19


@dataclass
class Posteriorgram:
    probs: np.ndarray  # (frames, bins)
    grid: BinGrid

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if self.probs.shape[1] != self.grid.num_bins:
            raise ValueError(f"{self.probs.shape[1]} columns for a grid of {self.grid.num_bins} bins")
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-5):
            raise ValueError("rows must be nonnegative and sum to 1")


@dataclass
class PitchTrack:
    times: np.ndarray
    f0: np.ndarray
    periodicity: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.periodicity = np.asarray(self.periodicity, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        n = len(self.times)
        if not (len(self.f0) == len(self.periodicity) == len(self.voiced) == n):
            raise ValueError("all PitchTrack columns must have the same length")

    def __len__(self):
        return len(self.times)


def decode_argmax(post: Posteriorgram) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest bin on ties
    return post.grid.centers()[np.argmax(post.probs, axis=1)]


def decode_local_expected_value(post: Posteriorgram, window_bins: int = DEFAULT_WINDOW_BINS) -> np.ndarray:
    """Expected pitch (taken in cents) of the mass within a window around the argmax.

    The window is truncated at the grid edges and the remaining mass
    renormalized, so the argmax bin always stays inside.
    """
    if window_bins < 1 or window_bins % 2 == 0:
        raise ValueError("window_bins must be a positive odd number")
    probs = post.probs
    n, p = probs.shape
    half = window_bins // 2
    peak = np.argmax(probs, axis=1)
    offsets = np.arange(-half, half + 1)
    idx = peak[:, None] + offsets[None, :]
    inside = (idx >= 0) & (idx < p)
    idx_c = np.clip(idx, 0, p - 1)
    mass = np.where(inside, probs[np.arange(n)[:, None], idx_c], 0.0)
    total = mass.sum(axis=1)
    # relative offsets keep the sum exact for symmetric mass
    shift = np.divide((mass * offsets[None, :]).sum(axis=1), total, out=np.zeros(n), where=total > 0)
    cents = post.grid.bins_to_cents(peak + shift)
    return post.grid.cents_to_hz(cents)


def periodicity_max(post: Posteriorgram) -> np.ndarray:
    return post.probs.max(axis=1)


def periodicity_entropy(post: Posteriorgram) -> np.ndarray:
    """One minus the entropy normalized by its maximum ``ln P``."""
    p = post.probs
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = 1.0 + plogp.sum(axis=1) / math.log(p.shape[1])
    return np.clip(h, 0.0, 1.0)


def voicing(periodicity, threshold: float) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    return np.asarray(periodicity) > threshold


def f1_at_thresholds(periodicity, reference, thresholds) -> np.ndarray:
    """Voicing F1 for many thresholds at once (voiced is the positive class)."""
    h = np.sort(np.asarray(periodicity, dtype=np.float64))
    ref = np.asarray(reference, dtype=bool)
    order = np.argsort(np.asarray(periodicity, dtype=np.float64), kind="stable")
    ref_sorted = ref[order]
    # positives among frames with h > alpha are the suffix after searchsorted(side=right)
    suffix_pos = np.concatenate([np.cumsum(ref_sorted[::-1])[::-1], [0]])
    thresholds = np.asarray(thresholds, dtype=np.float64)
    start = np.searchsorted(h, thresholds, side="right")
    predicted = len(h) - start
    tp = suffix_pos[start]
    actual = ref.sum()
    denom = predicted + actual
    return np.divide(2.0 * tp, denom, out=np.zeros(len(thresholds)), where=denom > 0)


def search_threshold(periodicity, reference) -> tuple[float, float]:
    """Coarse grid search for the voicing threshold, then step-halving refinement.

    Returns ``(threshold, f1)``. During refinement a step that would lower
    F1 in both directions is skipped, but the step size still halves.
    """
    reference = np.asarray(reference, dtype=bool)
    if reference.all() or not reference.any():
        raise ValueError("reference voicing must contain both voiced and unvoiced frames")

    def f1(alpha):
        return float(f1_at_thresholds(periodicity, reference, [alpha])[0])

    scores = f1_at_thresholds(periodicity, reference, COARSE_THRESHOLDS)
    best = int(np.argmax(scores))
    alpha, score = COARSE_THRESHOLDS[best], float(scores[best])
    step = REFINE_START_STEP
    for _ in range(REFINE_STEPS):
        up, down = min(alpha + step, 1.0), max(alpha - step, 0.0)
        f_up, f_down = f1(up), f1(down)
        if max(f_up, f_down) > score:
            alpha, score = (up, f_up) if f_up >= f_down else (down, f_down)
        step /= 2
    return alpha, score


TRACK_HEADER = "time_sec,f0_hz,periodicity,voiced"


def write_track(path, track: PitchTrack) -> None:
    with open(path, "w") as f:
        f.write(TRACK_HEADER + "\n")
        for t, f0, h, v in zip(track.times, track.f0, track.periodicity, track.voiced):
            f.write(f"{t:.6f},{f0:.6f},{h:.6f},{int(v)}\n")


def read_track(path) -> PitchTrack:
    with open(path) as f:
        header = f.readline().strip()
        if header != TRACK_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if not rows:
        return PitchTrack([], [], [], [])
    cols = list(zip(*rows))
    return PitchTrack(
        np.array(cols[0], dtype=np.float64), np.array(cols[1], dtype=np.float64),
        np.array(cols[2], dtype=np.float64), np.array(cols[3], dtype=np.int64).astype(bool),
    )
