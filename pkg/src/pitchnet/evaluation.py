"""Pitch and voicing metrics, and the real-time-factor benchmark."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

DEFAULT_EPSILON = 50.0


@dataclass
class EvalReport:
    delta_cents: float
    rpa: float
    rca: float
    f1: float
    precision: float
    recall: float
    frames_scored: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class RtfReport:
    audio_seconds: float
    wall_seconds: float
    thread_count: int

    @property
    def rtf(self) -> float:
        return self.wall_seconds / self.audio_seconds


def _aligned(ref_f0, ref_voiced, est_f0):
    ref_f0 = np.asarray(ref_f0, dtype=np.float64)
    ref_voiced = np.asarray(ref_voiced, dtype=bool)
    est_f0 = np.asarray(est_f0, dtype=np.float64)
    if not len(ref_f0) == len(ref_voiced) == len(est_f0):
        raise ValueError("reference and estimate must have the same number of frames")
    if not ref_voiced.any():
        raise ValueError("no reference-voiced frames to score")
    y, y_hat = ref_f0[ref_voiced], est_f0[ref_voiced]
    if np.any(~(y > 0)) or np.any(~(y_hat > 0)):
        raise ValueError("scored frames need positive frequencies")
    return y, y_hat


def _signed_cents(y, y_hat):
    return 1200.0 * np.log2(y_hat / y)


def rpa(ref_f0, ref_voiced, est_f0, epsilon=DEFAULT_EPSILON) -> float:
    """Fraction of reference-voiced frames within ``epsilon`` cents."""
    y, y_hat = _aligned(ref_f0, ref_voiced, est_f0)
    return float(np.mean(np.abs(_signed_cents(y, y_hat)) <= epsilon))


def chroma_cents(d):
    """Fold a signed cents difference onto [0, 600]."""
    r = np.mod(d, 1200.0)
    return np.minimum(r, 1200.0 - r)


def rca(ref_f0, ref_voiced, est_f0, epsilon=DEFAULT_EPSILON) -> float:
    """Like :func:`rpa`, but octave errors are not penalized."""
    y, y_hat = _aligned(ref_f0, ref_voiced, est_f0)
    return float(np.mean(chroma_cents(_signed_cents(y, y_hat)) <= epsilon))


def delta_cents(ref_f0, ref_voiced, est_f0, est_voiced) -> float:
    """Mean absolute cents error over frames voiced in both tracks (NaN if none)."""
    both = np.asarray(ref_voiced, dtype=bool) & np.asarray(est_voiced, dtype=bool)
    if not both.any():
        return float("nan")
    y = np.asarray(ref_f0, dtype=np.float64)[both]
    y_hat = np.asarray(est_f0, dtype=np.float64)[both]
    return float(np.mean(np.abs(_signed_cents(y, y_hat))))


def voicing_f1(ref_voiced, est_voiced) -> tuple[float, float, float]:
    """``(f1, precision, recall)`` with voiced frames as the positive class."""
    ref = np.asarray(ref_voiced, dtype=bool)
    est = np.asarray(est_voiced, dtype=bool)
    if len(ref) != len(est):
        raise ValueError("voicing sequences differ in length")
    tp = int(np.sum(ref & est))
    precision = tp / est.sum() if est.any() else 0.0
    recall = tp / ref.sum() if ref.any() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return float(f1), float(precision), float(recall)


def evaluate(ref_f0, ref_voiced, est_f0, est_voiced, epsilon=DEFAULT_EPSILON) -> EvalReport:
    f1, precision, recall = voicing_f1(ref_voiced, est_voiced)
    return EvalReport(
        delta_cents=delta_cents(ref_f0, ref_voiced, est_f0, est_voiced),
        rpa=rpa(ref_f0, ref_voiced, est_f0, epsilon),
        rca=rca(ref_f0, ref_voiced, est_f0, epsilon),
        f1=f1,
        precision=precision,
        recall=recall,
        frames_scored=int(np.sum(ref_voiced)),
    )


def benchmark_rtf(run, paths, thread_count: int = 1) -> RtfReport:
    """Time ``run(path) -> audio_seconds`` over every file.

    ``run`` must load the file, estimate, and save its results; the clock
    covers the whole loop.
    """
    paths = [Path(p) for p in paths]
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(p)
    audio_seconds = 0.0
    start = time.perf_counter()
    for p in paths:
        audio_seconds += run(p)
    wall = time.perf_counter() - start
    return RtfReport(audio_seconds, wall, thread_count)


TABLE_COLUMNS = ("Model", "Δ¢", "RPA", "RCA", "F1 (Entropy)", "F1 (Max)", "RTF (CPU, 1 thread)", "RTF (CPU, all cores)")


def _cell(value, fmt):
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    return format(value, fmt)


def markdown_table(rows: list[dict]) -> str:
    """Render benchmark rows with keys ``model, delta_cents, rpa, rca, f1_entropy,
    f1_max, rtf_single, rtf_all``; missing values print as ``-``."""
    lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "|".join("---" for _ in TABLE_COLUMNS) + "|"]
    for r in rows:
        cells = [
            str(r["model"]),
            _cell(r.get("delta_cents"), ".2f"),
            _cell(r.get("rpa"), ".4f"),
            _cell(r.get("rca"), ".4f"),
            _cell(r.get("f1_entropy"), ".4f"),
            _cell(r.get("f1_max"), ".4f"),
            _cell(r.get("rtf_single"), ".4f"),
            _cell(r.get("rtf_all"), ".4f"),
        ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)
