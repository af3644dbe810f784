import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)


def random_pair(rng: np.random.Generator, size: int, style: str = "uniform"):
    """A (pred, gt) pair with a guaranteed mixed ground truth."""
    pred = rng.uniform(size=(size, size))
    if style == "blob":
        ys, xs = np.mgrid[0:size, 0:size]
        cy, cx = rng.uniform(2, size - 2, size=2)
        r = rng.uniform(size / 5, size / 2.5)
        gt = (((ys - cy) ** 2 + (xs - cx) ** 2) <= r * r).astype(np.float64)
    else:
        gt = (rng.uniform(size=(size, size)) > rng.uniform(0.3, 0.7)).astype(np.float64)
    if gt.sum() == 0:
        gt[size // 2, size // 2] = 1.0
    if gt.sum() == gt.size:
        gt[0, 0] = 0.0
    return pred, gt


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
