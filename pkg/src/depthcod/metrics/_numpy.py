"""Pure-numpy twins of the compiled metric kernels.

Both backends must be numerically interchangeable: integer-exact threshold
counts, and identical tie handling in the nearest-foreground search (mean of
the error over all minimizers, visited in row-major order).
"""

from __future__ import annotations

import numpy as np


def threshold_counts(pred: np.ndarray, gt: np.ndarray, thresholds: np.ndarray):
    """Counts of ``pred >= t`` pixels (and those also foreground) per threshold.

    ``thresholds`` must be ascending.  Returns ``(tp, pos)`` int64 arrays.
    """
    flat = np.sort(pred.ravel())
    fg_vals = np.sort(pred.ravel()[gt.ravel() != 0])
    n = flat.size
    n_fg = fg_vals.size
    pos = n - np.searchsorted(flat, thresholds, side="left")
    tp = n_fg - np.searchsorted(fg_vals, thresholds, side="left")
    return tp.astype(np.int64), pos.astype(np.int64)


def nearest_foreground_fill(err: np.ndarray, gt: np.ndarray):
    """Propagate foreground error values to background pixels.

    For every background pixel, find the foreground pixels minimizing the
    squared Euclidean distance (integer arithmetic, so ties are exact) and
    replace the pixel's value with the mean error over all minimizers.
    Returns ``(filled, dist)`` where ``dist`` holds the Euclidean distance to
    the nearest foreground pixel (0 on foreground).
    """
    fg_coords = np.argwhere(gt != 0)
    if fg_coords.shape[0] == 0:
        raise ValueError("nearest_foreground_fill requires at least one foreground pixel")
    filled = err.astype(np.float64).copy()
    dist = np.zeros(err.shape, dtype=np.float64)
    bg_coords = np.argwhere(gt == 0)
    if bg_coords.shape[0] == 0:
        return filled, dist

    fy = fg_coords[:, 0].astype(np.int64)
    fx = fg_coords[:, 1].astype(np.int64)
    err_fg = err[fy, fx].astype(np.float64)

    # Chunk background pixels to bound the [chunk, n_fg] distance matrix.
    step = max(1, int(4_000_000 // max(1, fy.size)))
    for start in range(0, bg_coords.shape[0], step):
        chunk = bg_coords[start : start + step]
        dy = chunk[:, 0].astype(np.int64)[:, None] - fy[None, :]
        dx = chunk[:, 1].astype(np.int64)[:, None] - fx[None, :]
        d2 = dy * dy + dx * dx
        d2_min = d2.min(axis=1)
        ties = d2 == d2_min[:, None]
        vals = (ties * err_fg[None, :]).sum(axis=1) / ties.sum(axis=1)
        filled[chunk[:, 0], chunk[:, 1]] = vals
        dist[chunk[:, 0], chunk[:, 1]] = np.sqrt(d2_min.astype(np.float64))
    return filled, dist
