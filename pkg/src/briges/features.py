"""Token-grid feature maps, resampling, and image preprocessing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, matmul
from .errors import DimensionError, ParameterError


@dataclass
class FeatureMap:
    """An ``H x W`` token grid with ``C`` channels stored as an ``(H*W, C)`` tensor.

    Tokens are row-major over the grid.
    """

    height: int
    width: int
    data: Tensor

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            self.data = Tensor(self.data)
        if self.height < 1 or self.width < 1:
            raise ParameterError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        if self.data.ndim != 2 or self.data.shape[0] != self.height * self.width or self.data.shape[1] < 1:
            raise DimensionError(
                f"feature data {self.data.shape} does not match a {self.height}x{self.width} grid"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def grid(self) -> tuple[int, int]:
        return self.height, self.width

    def as_grid(self) -> np.ndarray:
        """The values as an ``(H, W, C)`` array."""
        return self.data.data.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_grid(cls, arr: np.ndarray) -> "FeatureMap":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(h, w, Tensor(arr.reshape(h * w, c)))


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """1-D align-corners linear interpolation matrix of shape (n_out, n_in)."""
    a = np.zeros((n_out, n_in))
    if n_in == 1:
        a[:, 0] = 1.0
        return a
    for i in range(n_out):
        src = i * (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
        i0 = min(int(math.floor(src)), n_in - 2)
        frac = src - i0
        a[i, i0] += 1.0 - frac
        a[i, i0 + 1] += frac
    return a


@lru_cache(maxsize=64)
def _resize_matrix_cached(h: int, w: int, ht: int, wt: int) -> np.ndarray:
    m = np.kron(_axis_weights(h, ht), _axis_weights(w, wt))
    m.setflags(write=False)
    return m


def resize_matrix(h: int, w: int, ht: int, wt: int) -> np.ndarray:
    """Dense ``(ht*wt, h*w)`` operator performing align-corners bilinear resampling."""
    if min(h, w, ht, wt) < 1:
        raise ParameterError(f"resize needs positive sizes, got {h}x{w} -> {ht}x{wt}")
    return _resize_matrix_cached(int(h), int(w), int(ht), int(wt))


def bilinear_resize(f: FeatureMap, height: int, width: int) -> FeatureMap:
    if height < 1 or width < 1:
        raise ParameterError(f"target grid must be positive, got {height}x{width}")
    if (height, width) == f.grid:
        return FeatureMap(height, width, f.data)
    m = Tensor(resize_matrix(f.height, f.width, height, width))
    return FeatureMap(height, width, matmul(m, f.data))


def max_pool_2x2(f: FeatureMap) -> FeatureMap:
    """Channel-wise max over non-overlapping 2x2 windows. Not differentiable."""
    if f.height % 2 or f.width % 2:
        raise ParameterError(f"2x2 pooling needs an even grid, got {f.height}x{f.width}")
    g = f.as_grid()
    h2, w2 = f.height // 2, f.width // 2
    pooled = g.reshape(h2, 2, w2, 2, f.channels).max(axis=(1, 3))
    return FeatureMap(h2, w2, Tensor(pooled.reshape(h2 * w2, f.channels)))


def align_semantic(f_s: FeatureMap, target: tuple[int, int]) -> FeatureMap:
    """Bring the semantic map onto a depth-feature grid: resize to twice the grid, then 2x2 max-pool."""
    h, w = target
    if h < 1 or w < 1:
        raise ParameterError(f"target grid must be positive, got {h}x{w}")
    up = bilinear_resize(FeatureMap(f_s.height, f_s.width, Tensor(f_s.data.data)), 2 * h, 2 * w)
    return max_pool_2x2(up)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resize_image(img: np.ndarray, height: int, width: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h0, w0, c = img.shape
    out = resize_matrix(h0, w0, height, width) @ img.reshape(h0 * w0, c)
    out = out.reshape(height, width, c)
    return out[:, :, 0] if squeeze else out


def preprocess_image(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Resize so the shorter side equals ``size`` (aspect kept), then random-crop ``size x size``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ParameterError(f"image must be HxW or HxWxC, got shape {img.shape}")
    h0, w0 = img.shape[:2]
    if min(h0, w0) < 1 or size < 1:
        raise ParameterError(f"invalid image {h0}x{w0} or crop size {size}")
    if h0 <= w0:
        h1, w1 = size, max(size, _round_half_up(w0 * size / h0))
    else:
        h1, w1 = max(size, _round_half_up(h0 * size / w0)), size
    resized = resize_image(img, h1, w1)
    top = int(rng.integers(0, h1 - size + 1))
    left = int(rng.integers(0, w1 - size + 1))
    return resized[top:top + size, left:left + size].copy()
