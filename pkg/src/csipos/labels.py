"""Angular-domain probability vectors built from detected vehicle azimuths.

The direction-finding range [0, omega_total] is split into K equal bins.
A single azimuth becomes a unit-sum Gaussian vector over the bin centers
(std = bin width); several azimuths are fused bin-wise with the noisy-or
rule 1 - prod(1 - w_i), which is also how per-vehicle predicted
distributions are combined during pretraining.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AngularGrid:
    """K equal azimuth bins over [0, df_range_deg]."""

    df_range_deg: float
    bins: int

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError(f"need at least one bin, got {self.bins}")
        if self.df_range_deg <= 0:
            raise ValueError(f"direction-finding range must be positive, got {self.df_range_deg}")

    @property
    def bin_width(self) -> float:
        return self.df_range_deg / self.bins

    @property
    def centers(self) -> np.ndarray:
        """Bin centers (k - 1/2) * width for k = 1..K."""
        return (np.arange(1, self.bins + 1) - 0.5) * self.bin_width

    def peak_bin(self, azimuth_deg: float) -> int:
        """1-indexed bin of an azimuth: ceil(azimuth / width), 0 maps to bin 1."""
        if not (0.0 <= azimuth_deg <= self.df_range_deg):
            raise ValueError(f"azimuth {azimuth_deg} outside [0, {self.df_range_deg}]")
        return max(1, math.ceil(azimuth_deg / self.bin_width))


def gaussian_vector(grid: AngularGrid, azimuth_deg: float) -> np.ndarray:
    """Unit-sum Gaussian occupancy over the grid, centered on the azimuth.

    Entry k is exp(-(c_k - azimuth)^2 / (2 w^2)) normalized over the K
    in-range bins only (no circular wraparound).
    """
    if not (0.0 <= azimuth_deg <= grid.df_range_deg):
        raise ValueError(f"azimuth {azimuth_deg} outside [0, {grid.df_range_deg}]")
    w = grid.bin_width
    raw = np.exp(-((grid.centers - azimuth_deg) ** 2) / (2.0 * w * w))
    return raw / raw.sum()


def nor_fuse(dists: Sequence[np.ndarray]) -> np.ndarray:
    """Bin-wise noisy-or fusion: 1 - prod(1 - w_i).

    Commutative, associative, monotone; an entry of 1.0 in any input is
    absorbing. The empty fusion is undefined and rejected.
    """
    if len(dists) == 0:
        raise ValueError("noisy-or fusion of an empty list is undefined")
    k = len(dists[0])
    checked = []
    for d in dists:
        d = np.asarray(d, dtype=float)
        if d.shape != (k,):
            raise ValueError(f"distribution length {d.shape} does not match {k} bins")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("distribution entries must lie in [0, 1]")
        checked.append(d)
    if len(checked) == 1:  # 1 - (1 - w) returns w exactly, not to roundoff
        return checked[0].copy()
    out = np.ones(k)
    for d in checked:
        out *= 1.0 - d
    return 1.0 - out


def label_snapshot(grid: AngularGrid, azimuths_deg: Sequence[float]) -> np.ndarray:
    """Fused angular label for one snapshot's detected azimuths.

    An empty detection list yields the all-zeros vector ("no vehicle
    anywhere"); dropping such snapshots instead is the caller's choice.
    """
    if len(azimuths_deg) == 0:
        return np.zeros(grid.bins)
    return nor_fuse([gaussian_vector(grid, a) for a in azimuths_deg])
