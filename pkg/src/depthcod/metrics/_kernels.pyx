# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled metric kernels: threshold sweeps and nearest-foreground search.

Semantics must stay interchangeable with ``_numpy``: integer-exact counts,
and nearest-foreground ties resolved by averaging the error over all
minimizers in row-major order.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def threshold_counts(object pred_in, object gt_in, object thresholds_in):
    """Counts of ``pred >= t`` pixels (and those also foreground) per threshold.

    ``thresholds`` must be ascending.  Returns ``(tp, pos)`` int64 arrays.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pred = np.ascontiguousarray(pred_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] gt = np.ascontiguousarray(gt_in, dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] thr = np.ascontiguousarray(thresholds_in, dtype=np.float64)

    cdef Py_ssize_t h = pred.shape[0]
    cdef Py_ssize_t w = pred.shape[1]
    cdef Py_ssize_t n_thr = thr.shape[0]

    # hist[k] = #pixels for which exactly k thresholds are <= value
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hist_pos = np.zeros(n_thr + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hist_tp = np.zeros(n_thr + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tp = np.zeros(n_thr, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pos = np.zeros(n_thr, dtype=np.int64)

    cdef Py_ssize_t i, j, lo, hi, mid, k
    cdef double v
    for i in range(h):
        for j in range(w):
            v = pred[i, j]
            # upper bound: first index with thr[idx] > v
            lo = 0
            hi = n_thr
            while lo < hi:
                mid = (lo + hi) >> 1
                if thr[mid] <= v:
                    lo = mid + 1
                else:
                    hi = mid
            hist_pos[lo] += 1
            if gt[i, j]:
                hist_tp[lo] += 1

    # pred >= thr[t]  <=>  at least t+1 thresholds are <= pred
    cdef cnp.int64_t acc_pos = 0
    cdef cnp.int64_t acc_tp = 0
    for k in range(n_thr, 0, -1):
        acc_pos += hist_pos[k]
        acc_tp += hist_tp[k]
        tp[k - 1] = acc_tp
        pos[k - 1] = acc_pos
    return tp, pos


def nearest_foreground_fill(object err_in, object gt_in):
    """Propagate foreground error values to background pixels.

    For every background pixel, take the mean error over all foreground
    pixels at minimal squared Euclidean distance.  Returns ``(filled, dist)``.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] err = np.ascontiguousarray(err_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] gt = np.ascontiguousarray(gt_in, dtype=np.uint8)

    cdef Py_ssize_t h = err.shape[0]
    cdef Py_ssize_t w = err.shape[1]
    cdef Py_ssize_t i, j, m

    cdef Py_ssize_t n_fg = 0
    for i in range(h):
        for j in range(w):
            if gt[i, j]:
                n_fg += 1
    if n_fg == 0:
        raise ValueError("nearest_foreground_fill requires at least one foreground pixel")

    cdef cnp.ndarray[cnp.int64_t, ndim=1] fy = np.empty(n_fg, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fx = np.empty(n_fg, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] err_fg = np.empty(n_fg, dtype=np.float64)
    m = 0
    for i in range(h):
        for j in range(w):
            if gt[i, j]:
                fy[m] = i
                fx[m] = j
                err_fg[m] = err[i, j]
                m += 1

    cdef cnp.ndarray[cnp.float64_t, ndim=2] filled = err.copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dist = np.zeros((h, w), dtype=np.float64)

    cdef cnp.int64_t best, d2, dy, dx
    cdef double acc
    cdef Py_ssize_t cnt
    for i in range(h):
        for j in range(w):
            if gt[i, j]:
                continue
            best = -1
            acc = 0.0
            cnt = 0
            for m in range(n_fg):
                dy = i - fy[m]
                dx = j - fx[m]
                d2 = dy * dy + dx * dx
                if best < 0 or d2 < best:
                    best = d2
                    acc = err_fg[m]
                    cnt = 1
                elif d2 == best:
                    acc += err_fg[m]
                    cnt += 1
            filled[i, j] = acc / cnt
            dist[i, j] = sqrt(<double> best)
    return filled, dist
