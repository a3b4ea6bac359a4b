"""Zero-shot evaluation: scale/shift alignment, AbsRel, delta1, pairwise ordering, average rank."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DegenerateInputError, DimensionError, ParameterError
from .maps import DepthMap

DELTA1_THRESHOLD = 1.25


@dataclass
class MetricsReport:
    absrel: float
    delta1: float
    scale: float
    shift: float
    n_valid: int

    def as_dict(self) -> dict:
        return asdict(self)


def _common(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred.mask & gt.mask


def align_least_squares(pred: DepthMap, gt: DepthMap) -> tuple[float, float]:
    """Scale and shift minimizing ``sum (s * pred + t - gt)^2`` over commonly valid pixels."""
    m = _common(pred, gt)
    x, y = pred.values[m], gt.values[m]
    n = x.size
    if n < 2:
        raise DegenerateInputError("alignment needs at least two valid pixels")
    sxx, sx, sxy, sy = np.dot(x, x), x.sum(), np.dot(x, y), y.sum()
    det = n * sxx - sx * sx
    if not det > 0 or np.ptp(x) == 0:
        raise DegenerateInputError("prediction is constant on the valid pixels")
    scale = (n * sxy - sx * sy) / det
    shift = (sxx * sy - sx * sxy) / det
    return float(scale), float(shift)


def apply_alignment(pred: DepthMap, scale: float, shift: float) -> DepthMap:
    return DepthMap(scale * pred.values + shift, pred.mask.copy())


def _check_gt(gt: np.ndarray) -> None:
    if np.any(gt <= 0):
        raise DataError("ground-truth depth must be strictly positive on valid pixels")


def absrel(aligned: DepthMap, gt: DepthMap) -> float:
    m = _common(aligned, gt)
    d = gt.values[m]
    _check_gt(d)
    return float(np.mean(np.abs(aligned.values[m] - d) / d))


def delta1(aligned: DepthMap, gt: DepthMap) -> float:
    """Fraction of pixels with ``max(a/d, d/a) < 1.25``; non-positive predictions fail."""
    m = _common(aligned, gt)
    d, a = gt.values[m], aligned.values[m]
    _check_gt(d)
    ok = a > 0
    ratio = np.full(a.shape, np.inf)
    ratio[ok] = np.maximum(a[ok] / d[ok], d[ok] / a[ok])
    return float(np.mean(ratio < DELTA1_THRESHOLD))


def evaluate_depth(pred: DepthMap, gt: DepthMap) -> MetricsReport:
    scale, shift = align_least_squares(pred, gt)
    aligned = apply_alignment(pred, scale, shift)
    return MetricsReport(
        absrel=absrel(aligned, gt),
        delta1=delta1(aligned, gt),
        scale=scale,
        shift=shift,
        n_valid=int(_common(pred, gt).sum()),
    )


def pairwise_accuracy(pred: DepthMap, pairs: Iterable[tuple[tuple[int, int], tuple[int, int], str]]) -> float:
    """Share of pairs whose closer pixel (smaller depth) matches the label ``'a'`` or ``'b'``.

    Predicted ties count as wrong.
    """
    h, w = pred.shape
    pairs = list(pairs)
    if not pairs:
        raise ParameterError("pairwise accuracy needs at least one pair")
    correct = 0
    for pa, pb, closer in pairs:
        for r, c in (pa, pb):
            if not (0 <= r < h and 0 <= c < w):
                raise DataError(f"pixel ({r}, {c}) is outside the {h}x{w} map")
        if closer not in ("a", "b"):
            raise DataError(f"pair label must be 'a' or 'b', got {closer!r}")
        da, db = pred.values[pa], pred.values[pb]
        if da == db:
            continue
        correct += (da < db) == (closer == "a")
    return correct / len(pairs)


def average_rank(table, lower_is_better: Sequence[bool]) -> np.ndarray:
    """Mean per-column rank of each row (setting); rank 1 is best, ties share the mean rank."""
    table = np.asarray(table, dtype=np.float64)
    if table.size == 0 or table.ndim != 2:
        raise ParameterError("average_rank needs a non-empty settings x measurements table")
    if table.shape[0] < 2:
        raise ParameterError("average_rank needs at least two settings")
    if len(lower_is_better) != table.shape[1]:
        raise DimensionError(f"{len(lower_is_better)} directions for {table.shape[1]} columns")
    if np.isnan(table).any():
        raise ParameterError("average_rank does not accept missing cells")
    ranks = np.empty_like(table)
    for j, lower in enumerate(lower_is_better):
        col = table[:, j] if lower else -table[:, j]
        ranks[:, j] = rankdata(col, method="average")
    return ranks.mean(axis=1)
