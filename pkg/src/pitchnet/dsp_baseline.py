"""Cumulative mean-normalized difference (YIN-style) pitch baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .audio import AudioBuffer, FrameSpec, frame
from .decode import PitchTrack, voicing

DEFAULT_FMIN = 50.0
DEFAULT_FMAX = 1000.0
# First dip below this CMND value wins over deeper dips at longer lags.
ABSOLUTE_THRESHOLD = 0.1


@dataclass
class CmndFrame:
    values: np.ndarray  # d'(tau) for tau = 0 .. max_lag
    aperiodic: bool = False


def _difference(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """d(tau) = sum_{t < W} (x_t - x_{t+tau})^2 with W = len - max_lag, for each row."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[1]
    w = n - max_lag
    energy = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(frames**2, axis=1)], axis=1)
    head = energy[:, w:w + 1]  # sum of x_t^2 over t < W
    lags = np.arange(max_lag + 1)
    shifted = energy[:, lags + w] - energy[:, lags]  # sum of x_{t+tau}^2 over t < W
    size = sfft.next_fast_len(n + w)
    cross = sfft.irfft(
        sfft.rfft(frames, size, axis=1) * np.conj(sfft.rfft(frames[:, :w], size, axis=1)), size, axis=1
    )[:, : max_lag + 1]
    return np.maximum(head + shifted - 2.0 * cross, 0.0)


def _normalize(diff: np.ndarray):
    lags = np.arange(diff.shape[1])
    running = np.cumsum(diff[:, 1:], axis=1)
    silent = running[:, -1] <= 0
    out = np.ones_like(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd = diff[:, 1:] * lags[1:] / running
    out[:, 1:] = np.where(np.isfinite(cmnd), cmnd, 1.0)
    out[silent] = 1.0
    return out, silent


def cmnd(samples, max_lag: int) -> CmndFrame:
    """CMND of one frame for lags 0..max_lag; an all-zero frame is flagged aperiodic."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 2 * max_lag:
        raise ValueError(f"frame of {len(samples)} samples too short for max_lag {max_lag}")
    values, silent = _normalize(_difference(samples[None, :], max_lag))
    return CmndFrame(values[0], bool(silent[0]))


def _pick_lags(values: np.ndarray, lo: int, hi: int):
    """Per row: first local minimum under the absolute threshold, else the global minimum."""
    window = values[:, lo:hi + 1]
    below = window < ABSOLUTE_THRESHOLD
    first_below = np.where(below.any(axis=1), below.argmax(axis=1), -1)
    best = window.argmin(axis=1)
    picks = np.empty(len(values), dtype=np.int64)
    for r, start in enumerate(first_below):
        if start < 0:
            picks[r] = best[r]
            continue
        j = start
        # walk down to the bottom of this dip
        while j + 1 < window.shape[1] and window[r, j + 1] < window[r, j]:
            j += 1
        picks[r] = j
    return picks + lo


def _parabolic(values: np.ndarray, lags: np.ndarray) -> np.ndarray:
    rows = np.arange(len(values))
    inner = (lags > 0) & (lags < values.shape[1] - 1)
    left = values[rows, np.maximum(lags - 1, 0)]
    mid = values[rows, lags]
    right = values[rows, np.minimum(lags + 1, values.shape[1] - 1)]
    denom = left - 2 * mid + right
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(inner & (denom > 0), 0.5 * (left - right) / denom, 0.0)
    return lags + np.clip(delta, -0.5, 0.5)


def dsp_estimate(buf: AudioBuffer, spec: FrameSpec = FrameSpec(), fmin: float = DEFAULT_FMIN,
                 fmax: float = DEFAULT_FMAX, threshold: float = 0.5) -> PitchTrack:
    """Frame-wise CMND pitch with periodicity ``1 - min d'``.

    Silent frames get periodicity 0 and ``fmin`` as their pitch.
    """
    sr = buf.sample_rate
    lo = max(2, int(np.floor(sr / fmax)))
    hi = int(np.ceil(sr / fmin))
    frames = frame(buf, spec)
    if frames.shape[1] < 2 * hi:
        raise ValueError("window too short for the requested fmin")
    values, silent = _normalize(_difference(frames, hi))
    lags = _pick_lags(values, lo, hi)
    refined = _parabolic(values, lags)
    f0 = np.clip(sr / refined, fmin, fmax)
    periodicity = np.clip(1.0 - values[np.arange(len(values)), lags], 0.0, 1.0)
    periodicity[silent] = 0.0
    f0[silent] = fmin
    times = spec.times(len(buf), sr)
    return PitchTrack(times, f0, periodicity, voicing(periodicity, threshold))
