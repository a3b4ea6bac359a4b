"""Scalar rasters with validity masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


def _full_mask(values: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return np.ones(values.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape:
        raise DimensionError(f"mask {mask.shape} does not match raster {values.shape}")
    return mask


@dataclass
class DepthMap:
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"depth map must be 2-D, got shape {self.values.shape}")
        self.mask = _full_mask(self.values, self.mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass
class DisparityMap:
    """Disparity normalized to [0, 1] on valid pixels."""

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"disparity map must be 2-D, got shape {self.values.shape}")
        self.mask = _full_mask(self.values, self.mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())
