"""Evaluation metric suite with a compiled fast path and a numpy fallback."""

from ._dispatch import available_backends, backend_name, use_backend
from .suite import (
    N_THRESHOLDS,
    THRESHOLDS,
    MetricReport,
    compute_all,
    e_measure_suite,
    evaluate_batch,
    f_measure_suite,
    mae,
    normalize_prediction,
    s_measure,
)

__all__ = [
    "MetricReport",
    "N_THRESHOLDS",
    "THRESHOLDS",
    "available_backends",
    "backend_name",
    "compute_all",
    "e_measure_suite",
    "evaluate_batch",
    "f_measure_suite",
    "mae",
    "normalize_prediction",
    "s_measure",
    "use_backend",
]
