"""Log-frequency pitch bins and cents/Hz conversions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CENTS_PER_OCTAVE = 1200.0


@dataclass(frozen=True)
class BinGrid:
    """A lattice of pitch bins spaced uniformly in cents above ``fmin``."""

    num_bins: int
    fmin: float
    cents_per_bin: float

    def __post_init__(self):
        if self.num_bins < 2:
            raise ValueError(f"num_bins must be >= 2, got {self.num_bins}")
        if not self.fmin > 0:
            raise ValueError(f"fmin must be positive, got {self.fmin}")
        if not self.cents_per_bin > 0:
            raise ValueError(f"cents_per_bin must be positive, got {self.cents_per_bin}")

    @property
    def fmax(self) -> float:
        return float(self.centers()[-1])

    def center(self, i: int) -> float:
        """Center frequency in Hz of bin ``i``."""
        if not 0 <= i < self.num_bins:
            raise IndexError(f"bin {i} out of range [0, {self.num_bins})")
        return float(self.fmin * 2.0 ** (i * self.cents_per_bin / CENTS_PER_OCTAVE))

    def centers(self) -> np.ndarray:
        idx = np.arange(self.num_bins, dtype=np.float64)
        return self.fmin * 2.0 ** (idx * self.cents_per_bin / CENTS_PER_OCTAVE)

    def bins_to_cents(self, bins):
        """Fractional bin positions to cents above ``fmin``."""
        return np.asarray(bins, dtype=np.float64) * self.cents_per_bin

    def cents_to_hz(self, cents):
        return self.fmin * 2.0 ** (np.asarray(cents, dtype=np.float64) / CENTS_PER_OCTAVE)

    def quantize(self, f0):
        """Nearest bin index for ``f0`` (Hz), clamped to the grid.

        Ties between two bins resolve to the lower one. Accepts a scalar or
        an array and returns the same shape.
        """
        f0_arr = np.asarray(f0, dtype=np.float64)
        if np.any(~(f0_arr > 0)):
            raise ValueError("frequencies must be positive")
        position = CENTS_PER_OCTAVE * np.log2(f0_arr / self.fmin) / self.cents_per_bin
        # round-half-down
        index = np.ceil(position - 0.5).astype(np.int64)
        index = np.clip(index, 0, self.num_bins - 1)
        if index.ndim == 0:
            return int(index)
        return index

    def to_dict(self) -> dict:
        return {"num_bins": self.num_bins, "fmin": self.fmin, "cents_per_bin": self.cents_per_bin}

    @classmethod
    def from_dict(cls, d: dict) -> "BinGrid":
        return cls(int(d["num_bins"]), float(d["fmin"]), float(d["cents_per_bin"]))


CREPE_GRID = BinGrid(num_bins=360, fmin=31.0, cents_per_bin=20.0)
FCNF0_GRID = BinGrid(num_bins=486, fmin=30.0, cents_per_bin=12.5)
DEFAULT_GRID = BinGrid(num_bins=1440, fmin=31.0, cents_per_bin=5.0)


def center(grid: BinGrid, i: int) -> float:
    return grid.center(i)


def quantize(grid: BinGrid, f0):
    return grid.quantize(f0)


def cents_between(y, y_hat):
    """Absolute distance in cents between two frequencies (Hz)."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if np.any(~(y > 0)) or np.any(~(y_hat > 0)):
        raise ValueError("frequencies must be positive")
    out = np.abs(CENTS_PER_OCTAVE * np.log2(y / y_hat))
    if out.ndim == 0:
        return float(out)
    return out
