"""Disparity targets and the scale/shift-invariant training losses.

Predictions are ``(H, W)`` tensors; targets are :class:`DisparityMap`. Only
pixels valid in the target mask enter any computation.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, DegenerateInputError, DimensionError, ParameterError
from .maps import DepthMap, DisparityMap

# Residuals this small are round-off of an exact fit; their |.| gets a zero subgradient.
RESIDUAL_DEADZONE = 1e-12

GM_WEIGHT = 2.0


def depth_to_normalized_disparity(depth: DepthMap) -> DisparityMap:
    valid = depth.values[depth.mask]
    if valid.size and np.any(valid <= 0):
        raise DataError("valid depths must be strictly positive")
    disp = np.zeros(depth.shape)
    disp[depth.mask] = 1.0 / valid
    return minmax_normalize(disp, depth.mask)


def minmax_normalize(values: np.ndarray, mask: np.ndarray | None = None) -> DisparityMap:
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(values.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.sum() < 2:
        raise DegenerateInputError("normalization needs at least two valid pixels")
    lo, hi = values[mask].min(), values[mask].max()
    if not hi > lo:
        raise DegenerateInputError("all valid values are equal; min-max normalization undefined")
    out = np.where(mask, (values - lo) / (hi - lo), 0.0)
    return DisparityMap(out, mask)


def _lower_median_index(values: np.ndarray) -> int:
    order = np.argsort(values, kind="stable")
    return int(order[(values.size - 1) // 2])


def ssi_normalize(d, mask: np.ndarray | None = None) -> Tensor:
    """Shift by the median and divide by the mean absolute deviation, over valid pixels.

    Accepts a :class:`DisparityMap` or a raster tensor plus mask. Returns a raster
    tensor of the same shape with invalid pixels set to 0. For an even count the
    lower of the two middle values is used as the median.
    """
    if isinstance(d, DisparityMap):
        d, mask = Tensor(d.values), d.mask if mask is None else mask
    d = ad.as_tensor(d)
    if d.ndim != 2:
        raise DimensionError(f"expected a 2-D raster, got shape {d.shape}")
    mask = np.ones(d.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != d.shape:
        raise DimensionError(f"mask {mask.shape} does not match raster {d.shape}")
    idx = np.flatnonzero(mask)
    if idx.size < 2:
        raise DegenerateInputError("scale/shift normalization needs at least two valid pixels")

    x = ad.take(d, idx)
    med = ad.take(x, [_lower_median_index(x.data)])
    centered = ad.sub(x, med)
    spread = ad.mean(ad.abs_(centered))
    if not spread.item() > 0.0:
        raise DegenerateInputError("valid values have zero deviation from their median")
    return ad.scatter(ad.div(centered, spread), idx, d.shape)


def _residual(pred, gt: DisparityMap) -> tuple[Tensor, np.ndarray]:
    pred = ad.as_tensor(pred)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and target {gt.shape} differ")
    r = ad.sub(ssi_normalize(pred, gt.mask), ssi_normalize(gt))
    return r, np.flatnonzero(gt.mask)


def _ssi_from_residual(r: Tensor, idx: np.ndarray) -> Tensor:
    return ad.mean(ad.abs_(ad.take(r, idx), RESIDUAL_DEADZONE))


def affine_invariant_loss(pred, gt: DisparityMap) -> Tensor:
    """Mean absolute difference of the scale/shift-normalized prediction and target."""
    return _ssi_from_residual(*_residual(pred, gt))


@lru_cache(maxsize=64)
def _pool_operator(h: int, w: int, mask_bytes: bytes):
    mask = np.frombuffer(mask_bytes, dtype=bool).reshape(h, w)
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    op = np.zeros((h2 * w2, h * w))
    next_mask = np.zeros((h2, w2), dtype=bool)
    for i in range(h2):
        for j in range(w2):
            members = [
                y * w + x
                for y in range(2 * i, min(2 * i + 2, h))
                for x in range(2 * j, min(2 * j + 2, w))
                if mask[y, x]
            ]
            if members:
                op[i * w2 + j, members] = 1.0 / len(members)
                next_mask[i, j] = True
    op.setflags(write=False)
    return op, next_mask


def pool_residual(r: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """2x2 average pool counting only valid pixels; windows with none become invalid."""
    h, w = mask.shape
    op, next_mask = _pool_operator(h, w, np.ascontiguousarray(mask, dtype=bool).tobytes())
    flat = ad.reshape(r, (h * w, 1))
    pooled = ad.matmul(Tensor(op), flat)
    return ad.reshape(pooled, next_mask.shape), next_mask


def _neighbor_pairs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = mask.shape
    ids = np.arange(h * w).reshape(h, w)
    horiz = mask[:, :-1] & mask[:, 1:]
    vert = mask[:-1, :] & mask[1:, :]
    a = np.concatenate([ids[:, :-1][horiz], ids[:-1, :][vert]])
    b = np.concatenate([ids[:, 1:][horiz], ids[1:, :][vert]])
    return a, b


def _gm_from_residual(r: Tensor, mask: np.ndarray, n_scales: int) -> Tensor:
    n_valid = int(mask.sum())
    total = None
    for s in range(n_scales):
        if s > 0:
            if mask.shape == (1, 1):
                break
            r, mask = pool_residual(r, mask)
        a, b = _neighbor_pairs(mask)
        if a.size == 0:
            continue
        diff = ad.sub(ad.take(r, b), ad.take(r, a))
        term = ad.sum_(ad.abs_(diff, RESIDUAL_DEADZONE))
        total = term if total is None else ad.add(total, term)
    if total is None:
        return Tensor(0.0)
    return ad.div(total, float(n_valid))


def gradient_matching_loss(pred, gt: DisparityMap, n_scales: int = 4) -> Tensor:
    """Multi-scale L1 penalty on forward differences of the normalized residual."""
    if n_scales < 1:
        raise ParameterError(f"n_scales must be >= 1, got {n_scales}")
    r, _ = _residual(pred, gt)
    return _gm_from_residual(r, gt.mask, n_scales)


def combined_loss(pred, gt: DisparityMap, mode: str = "v2", n_scales: int = 4) -> Tensor:
    """``v1``: affine-invariant loss alone. ``v2``: affine-invariant + 2 x gradient matching."""
    mode = mode.lower()
    if mode not in ("v1", "v2"):
        raise ParameterError(f"mode must be 'v1' or 'v2', got {mode!r}")
    if n_scales < 1:
        raise ParameterError(f"n_scales must be >= 1, got {n_scales}")
    r, idx = _residual(pred, gt)
    loss = _ssi_from_residual(r, idx)
    if mode == "v2":
        loss = ad.add(loss, ad.mul(_gm_from_residual(r, gt.mask, n_scales), GM_WEIGHT))
    return loss
