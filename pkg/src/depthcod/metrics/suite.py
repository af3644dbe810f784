"""Camouflaged-object-detection evaluation measures.

Seven per-image measures: structure measure (Fan et al. 2017), weighted
F-measure (Margolin et al. 2014), adaptive and max F-measure (Achanta et
al. 2009, beta^2 = 0.3), mean and max enhanced-alignment measure (Fan et
al. 2018), and mean absolute error.  All take a prediction in [0, 1] and a
binary ground truth of the same shape, return floats in [0, 1], and equal
1.0 (0.0 for MAE) exactly when ``pred == gt`` on a non-degenerate mask.

Protocol constants pinned for this package (reference implementations of
these measures differ in small conventions, so ours are fixed here):

* Binarization sweeps use the 256 mid-point thresholds ``(k + 0.5) / 256``
  and the ``pred >= t`` rule, which keeps binary fixed points exact at both
  endpoints.
* The adaptive F threshold ``min(2 * mean(pred), 1)`` is snapped down to the
  sweep grid, so the max F-measure dominates the adaptive one by
  construction.
* Divisions carry explicit zero guards instead of epsilon padding; empty-GT
  conventions: recall-based terms are 0, the structure and alignment
  measures use their degenerate branches.
* Enhanced-alignment scores are averaged over all pixels (denominator N).
* Weighted F uses beta^2 = 1, a 7x7 sigma-5 Gaussian with zero padding, and
  nearest-foreground ties averaged over all minimizers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ..errors import BadBatch, BadMask, BadShape
from . import _dispatch

N_THRESHOLDS = 256
THRESHOLDS = (np.arange(N_THRESHOLDS, dtype=np.float64) + 0.5) / N_THRESHOLDS

BETA2_F = 0.3  # adaptive / max F-measure
_LOG_HALF = math.log(0.5)


def _gaussian7(sigma: float = 5.0) -> np.ndarray:
    ax = np.arange(7, dtype=np.float64) - 3.0
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


_GAUSS7 = _gaussian7()


def _prepare(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim == 3 and pred.shape[0] == 1:
        pred = pred[0]
    if gt.ndim == 3 and gt.shape[0] == 1:
        gt = gt[0]
    if pred.ndim != 2 or pred.shape != gt.shape:
        raise BadShape(f"pred {pred.shape} and gt {gt.shape} must be equal 2-D maps")
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise BadMask("gt must be {0,1}-valued")
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise BadMask("pred must lie in [0, 1]; normalize it first")
    return pred, gt


def normalize_prediction(pred: np.ndarray, mode: str = "minmax") -> np.ndarray:
    """Map a raw prediction into [0, 1] before evaluation.

    ``minmax`` rescales per image (constant maps go to zero), ``none``
    assumes the input is already a probability map.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if mode == "none":
        return pred
    if mode == "minmax":
        lo, hi = pred.min(), pred.max()
        if hi > lo:
            return (pred - lo) / (hi - lo)
        return np.zeros_like(pred)
    raise ValueError(f"unknown normalization mode {mode!r}")


def mae(pred, gt) -> float:
    """Mean absolute difference between prediction and ground truth."""
    pred, gt = _prepare(pred, gt)
    return float(np.abs(pred - gt).mean())


def s_measure(pred, gt) -> float:
    """Structure measure: 0.5 * object similarity + 0.5 * region similarity."""
    pred, gt = _prepare(pred, gt)
    y = float(gt.mean())
    if y == 0.0:
        return float(1.0 - pred.mean())
    if y == 1.0:
        return float(pred.mean())
    score = 0.5 * _s_object(pred, gt) + 0.5 * _s_region(pred, gt)
    return float(max(score, 0.0))


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    m = float(values.mean())
    if values.size > 1:
        sd = math.sqrt(float(((values - m) ** 2).sum()) / (values.size - 1))
    else:
        sd = 0.0
    return 2.0 * m / (m * m + 1.0 + sd)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = gt != 0
    y = float(gt.mean())
    return y * _object_score(pred[fg]) + (1.0 - y) * _object_score(1.0 - pred[~fg])


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    rows, cols = np.nonzero(gt)
    # Centroid rounded half away from zero, then converted to a quadrant cut.
    cy = int(math.floor(float(rows.mean()) + 0.5)) + 1
    cx = int(math.floor(float(cols.mean()) + 0.5)) + 1
    total = float(h * w)
    w1 = (cy * cx) / total
    w2 = (cy * (w - cx)) / total
    w3 = ((h - cy) * cx) / total
    w4 = 1.0 - (w1 + w2 + w3)
    s1 = _ssim(pred[:cy, :cx], gt[:cy, :cx])
    s2 = _ssim(pred[:cy, cx:], gt[:cy, cx:])
    s3 = _ssim(pred[cy:, :cx], gt[cy:, :cx])
    s4 = _ssim(pred[cy:, cx:], gt[cy:, cx:])
    return ((w1 * s1 + w2 * s2) + w3 * s3) + w4 * s4


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x = float(p.mean())
    y = float(g.mean())
    if n > 1:
        sx = float(((p - x) ** 2).sum()) / (n - 1)
        sy = float(((g - y) ** 2).sum()) / (n - 1)
        sxy = float(((p - x) * (g - y)).sum()) / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0.0:
        return alpha / beta
    if beta == 0.0:
        return 1.0
    return 0.0


def f_measure_suite(pred, gt) -> tuple[float, float, float]:
    """(weighted F, adaptive F, max F) with beta^2 = 0.3 for the latter two."""
    pred, gt = _prepare(pred, gt)
    gt_u8 = (gt != 0).astype(np.uint8)
    n_fg = int(gt_u8.sum())

    tp, pos = _dispatch.impl().threshold_counts(pred, gt_u8, THRESHOLDS)
    curve = _f_from_counts(tp.astype(np.float64), pos.astype(np.float64), n_fg)
    f_mx = float(curve.max())

    t_adaptive = min(2.0 * float(pred.mean()), 1.0)
    idx = max(int(np.searchsorted(THRESHOLDS, t_adaptive, side="right")) - 1, 0)
    f_m = float(curve[idx])

    f_w = _weighted_f(pred, gt_u8, n_fg)
    return f_w, f_m, f_mx


def _f_from_counts(tp: np.ndarray, pos: np.ndarray, n_fg: int) -> np.ndarray:
    precision = np.zeros_like(tp)
    np.divide(tp, pos, out=precision, where=pos > 0)
    recall = tp / n_fg if n_fg > 0 else np.zeros_like(tp)
    denom = BETA2_F * precision + recall
    f = np.zeros_like(tp)
    np.divide((1.0 + BETA2_F) * precision * recall, denom, out=f, where=denom > 0)
    return f


def _weighted_f(pred: np.ndarray, gt_u8: np.ndarray, n_fg: int) -> float:
    if n_fg == 0:
        return 0.0
    gt = gt_u8.astype(np.float64)
    fg = gt_u8 != 0
    err = np.abs(pred - gt)
    filled, dist = _dispatch.impl().nearest_foreground_fill(err, gt_u8)
    smoothed = ndimage.correlate(filled, _GAUSS7, mode="constant", cval=0.0)
    min_err = err.copy()
    take = fg & (smoothed < err)
    min_err[take] = smoothed[take]
    importance = np.where(fg, 1.0, 2.0 - np.exp(_LOG_HALF / 5.0 * dist))
    weighted = min_err * importance

    sum_fg = float(weighted[fg].sum())
    tp_w = n_fg - sum_fg
    fp_w = float(weighted[~fg].sum())
    recall = 1.0 - sum_fg / n_fg
    precision = tp_w / (tp_w + fp_w) if (tp_w + fp_w) > 0 else 0.0
    if recall + precision <= 0.0:
        return 0.0
    return float(2.0 * recall * precision / (recall + precision))


def e_measure_suite(pred, gt) -> tuple[float, float]:
    """(mean, max) enhanced-alignment measure over the threshold sweep."""
    pred, gt = _prepare(pred, gt)
    gt_u8 = (gt != 0).astype(np.uint8)
    n = gt.size
    n_fg = int(gt_u8.sum())

    tp, pos = _dispatch.impl().threshold_counts(pred, gt_u8, THRESHOLDS)
    pos_f = pos.astype(np.float64)
    if n_fg == 0:
        curve = 1.0 - pos_f / n
    elif n_fg == n:
        curve = pos_f / n
    else:
        curve = _e_curve_from_counts(tp.astype(np.float64), pos_f, n_fg, n)
    return float(curve.mean()), float(curve.max())


def _e_curve_from_counts(tp: np.ndarray, pos: np.ndarray, n_fg: int, n: int) -> np.ndarray:
    # The alignment matrix of binarized maps takes one value per (pred, gt)
    # pixel combination, so the per-pixel sum collapses to four weighted terms.
    mu_pred = pos / n
    mu_gt = n_fg / n
    combos = (
        (1.0, 1.0, tp),
        (1.0, 0.0, pos - tp),
        (0.0, 1.0, n_fg - tp),
        (0.0, 0.0, n - pos - (n_fg - tp)),
    )
    total = np.zeros_like(tp)
    for pred_val, gt_val, count in combos:
        a = pred_val - mu_pred
        g = gt_val - mu_gt
        num = 2.0 * a * g
        den = a * a + g * g  # g != 0 in the mixed branch, so den > 0
        enhanced = (num / den + 1.0) ** 2 / 4.0
        total = total + count * enhanced
    return total / n


@dataclass
class MetricReport:
    """Arithmetic mean of the per-image measures over an evaluation set."""

    s_alpha: float
    f_beta_w: float
    f_beta_m: float
    f_beta_mx: float
    e_phi_m: float
    e_phi_x: float
    mae: float
    n_samples: int

    # Column order follows the usual COD reporting layout (S, F_w, F_m,
    # E_m, E_x, MAE), with max-F and the sample count appended.
    CSV_COLUMNS = ("s_alpha", "f_beta_w", "f_beta_m", "e_phi_m", "e_phi_x", "mae", "f_beta_mx", "n_samples")

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> str:
        vals = []
        for name in self.CSV_COLUMNS:
            v = getattr(self, name)
            vals.append(str(v) if isinstance(v, int) else f"{v:.9f}")
        return ",".join(vals)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_COLUMNS)


def compute_all(pred, gt) -> dict[str, float]:
    """All seven measures for one prediction/ground-truth pair."""
    f_w, f_m, f_mx = f_measure_suite(pred, gt)
    e_m, e_x = e_measure_suite(pred, gt)
    return {
        "s_alpha": s_measure(pred, gt),
        "f_beta_w": f_w,
        "f_beta_m": f_m,
        "f_beta_mx": f_mx,
        "e_phi_m": e_m,
        "e_phi_x": e_x,
        "mae": mae(pred, gt),
    }


def evaluate_batch(preds, gts) -> MetricReport:
    """Per-image measures averaged over aligned prediction/GT lists."""
    if len(preds) != len(gts):
        raise BadBatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if len(preds) == 0:
        raise BadBatch("empty batch")
    acc: dict[str, float] = {}
    for pred, gt in zip(preds, gts):
        one = compute_all(pred, gt)
        for key, val in one.items():
            acc[key] = acc.get(key, 0.0) + val
    n = len(preds)
    return MetricReport(n_samples=n, **{k: v / n for k, v in acc.items()})
