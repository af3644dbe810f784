"""Depth-aware promptable segmentation for camouflaged object detection."""

__version__ = "0.1.0"

from .data import Box, DatasetSpec, Sample, derive_box_prompt, load_sample, preprocess, synth_dataset
from .harness import RunConfig, ablate, evaluate, paper_profile, train
from .model import DepthCodModel

__all__ = [
    "Box",
    "DatasetSpec",
    "DepthCodModel",
    "RunConfig",
    "Sample",
    "ablate",
    "derive_box_prompt",
    "evaluate",
    "load_sample",
    "paper_profile",
    "preprocess",
    "synth_dataset",
    "train",
]
