"""
Segmentation Metrics
Relative binarisation, IoU, precision at IoU thresholds and mAP over 0.50:0.05:0.95
"""
from typing import Dict, Sequence, Tuple

import numpy as np

from ..exceptions import DimensionError, DomainError, EmptyInputError
from ..schemas import P_AT_THRESHOLDS

MAP_THRESHOLDS: Tuple[float, ...] = tuple(float(k) for k in np.round(0.50 + 0.05 * np.arange(10), 2))


def binarize(prob: np.ndarray, beta: float) -> np.ndarray:
    """Foreground iff prob > beta * max(prob); an all-zero map gives an empty mask"""
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    prob = np.asarray(prob)
    return prob > beta * prob.max() if prob.size else np.zeros(prob.shape, dtype=bool)


def intersection_union(pred: np.ndarray, gt: np.ndarray) -> Tuple[int, int]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"iou: prediction {pred.shape} vs ground truth {gt.shape}")
    return int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt))


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|pred & gt| / |pred | gt|, 1.0 when both masks are empty"""
    intersection, union = intersection_union(pred, gt)
    return 1.0 if union == 0 else intersection / union


def _check_ious(ious: Sequence[float]) -> np.ndarray:
    values = np.asarray(list(ious), dtype=np.float64)
    if values.size == 0:
        raise EmptyInputError("metric requested over an empty IoU list")
    return values


def precision_at(ious: Sequence[float], k: float) -> float:
    """Fraction of samples with IoU strictly above ``k``"""
    values = _check_ious(ious)
    return int(np.count_nonzero(values > k)) / values.size


def map_range(ious: Sequence[float]) -> float:
    """Mean of precision_at over 0.50, 0.55, ..., 0.95"""
    values = _check_ious(ious)
    hits = sum(int(np.count_nonzero(values > k)) for k in MAP_THRESHOLDS)
    return hits / (values.size * len(MAP_THRESHOLDS))


def p_at_table(ious: Sequence[float]) -> Dict[str, float]:
    """P@K for the reported thresholds, keyed by the formatted threshold"""
    return {f"{k:.1f}": precision_at(ious, k) for k in P_AT_THRESHOLDS}
