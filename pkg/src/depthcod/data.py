"""Dataset ingestion, preprocessing and synthetic scene generation.

A dataset is a directory with three parallel subfolders::

    root/
      Image/<id>.png   (RGB)
      Depth/<id>.png   (grayscale, source-free depth)
      GT/<id>.png      (binary mask)

Basenames must match across the three folders.  The synthetic generator
writes the same layout, so round trips are testable end to end.

Box convention used everywhere in this package: half-open pixel intervals
``(x_min, y_min, x_max, y_max)`` with ``0 <= x_min < x_max <= W`` and
``0 <= y_min < y_max <= H``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import BadSize, EmptyMask, MissingPair

# Largest stride produced by the image pyramid; preprocessed sizes must be
# divisible by it (this also keeps the wavelet grid even).
ENCODER_STRIDE = 8

# Channel statistics used for standardization, shared by all profiles.
IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)

_IMG_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in half-open pixel coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def validate(self, width: int, height: int) -> None:
        from .errors import BadBox

        if not (0 <= self.x_min < self.x_max <= width):
            raise BadBox(f"x interval [{self.x_min}, {self.x_max}) invalid for width {width}")
        if not (0 <= self.y_min < self.y_max <= height):
            raise BadBox(f"y interval [{self.y_min}, {self.y_max}) invalid for height {height}")

    def as_tensor(self) -> torch.Tensor:
        return torch.tensor([self.x_min, self.y_min, self.x_max, self.y_max], dtype=torch.long)


@dataclass
class Sample:
    """One scene: RGB image, depth map, binary ground truth and box prompt.

    ``image`` is [3, H, W], ``depth`` [1, H, W], ``gt_mask`` [1, H, W].
    Freshly loaded samples have image/depth values in [0, 1]; after
    :func:`preprocess` the image channels are standardized and may leave
    that range.
    """

    image: torch.Tensor
    depth: torch.Tensor
    gt_mask: torch.Tensor
    box: Box
    id: str

    @property
    def height(self) -> int:
        return self.image.shape[-2]

    @property
    def width(self) -> int:
        return self.image.shape[-1]

    def validate(self) -> None:
        from .errors import BadMask, BadShape

        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise BadShape(f"image must be [3, H, W], got {tuple(self.image.shape)}")
        if self.depth.shape != (1, self.height, self.width):
            raise BadShape(f"depth shape {tuple(self.depth.shape)} does not match image")
        if self.gt_mask.shape != (1, self.height, self.width):
            raise BadShape(f"gt shape {tuple(self.gt_mask.shape)} does not match image")
        uniq = torch.unique(self.gt_mask)
        if not bool(((uniq == 0) | (uniq == 1)).all()):
            raise BadMask("gt_mask must be {0,1}-valued")
        self.box.validate(self.width, self.height)


@dataclass(frozen=True)
class DatasetSpec:
    """Pointer to a dataset directory in the Image/Depth/GT layout."""

    root: Path
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def folder(self, kind: str) -> Path:
        return self.root / kind

    def ids(self) -> list[str]:
        """Sorted sample ids; every image must have depth and GT partners."""
        images = _stems(self.folder("Image"))
        depths = _stems(self.folder("Depth"))
        gts = _stems(self.folder("GT"))
        unmatched = (set(images) ^ set(depths)) | (set(images) ^ set(gts))
        if unmatched:
            raise MissingPair(f"unpaired basenames in {self.root}: {sorted(unmatched)[:5]}")
        return sorted(images)


def _stems(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        raise MissingPair(f"missing dataset folder {folder}")
    return {p.stem: p for p in folder.iterdir() if p.suffix.lower() in _IMG_EXTENSIONS}


def _find_file(folder: Path, sample_id: str) -> Path:
    for ext in _IMG_EXTENSIONS:
        p = folder / (sample_id + ext)
        if p.exists():
            return p
    raise MissingPair(f"no file for id '{sample_id}' under {folder}")


def load_sample(spec: DatasetSpec, sample_id: str) -> Sample:
    """Load one RGB/depth/GT triplet, scale to [0,1] and derive the box prompt.

    GT is binarized at 0.5.  Raises :class:`MissingPair` if any of the three
    files is absent and :class:`EmptyMask` if the GT has no foreground.
    """
    img_path = _find_file(spec.folder("Image"), sample_id)
    depth_path = _find_file(spec.folder("Depth"), sample_id)
    gt_path = _find_file(spec.folder("GT"), sample_id)

    image = _read_image(img_path, "RGB")
    depth = _read_image(depth_path, "L")
    gt = _read_image(gt_path, "L")
    gt_mask = (gt > 0.5).to(torch.float32)

    box = derive_box_prompt(gt_mask)
    sample = Sample(image=image, depth=depth, gt_mask=gt_mask, box=box, id=sample_id)
    sample.validate()
    return sample


def _read_image(path: Path, mode: str) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert(mode), dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr.copy())


def save_sample(sample: Sample, root: Path) -> None:
    """Write a sample as 8-bit PNGs in the Image/Depth/GT layout."""
    root = Path(root)
    for kind in ("Image", "Depth", "GT"):
        (root / kind).mkdir(parents=True, exist_ok=True)
    _write_png(sample.image, root / "Image" / f"{sample.id}.png")
    _write_png(sample.depth, root / "Depth" / f"{sample.id}.png")
    _write_png(sample.gt_mask, root / "GT" / f"{sample.id}.png")


def _write_png(tensor: torch.Tensor, path: Path) -> None:
    arr = np.clip(np.rint(tensor.numpy() * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def derive_box_prompt(
    gt_mask: torch.Tensor,
    jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Box:
    """Tight bounding box of the foreground, optionally jittered.

    With ``jitter > 0`` each side is shifted by a uniform draw in
    ``[-jitter*side, +jitter*side]`` (rounded to pixels, clamped to image
    bounds); use this for train-time robustness only.
    """
    mask = gt_mask[0] if gt_mask.ndim == 3 else gt_mask
    ys, xs = torch.nonzero(mask > 0.5, as_tuple=True)
    if ys.numel() == 0:
        raise EmptyMask("cannot derive a box prompt from an empty mask")
    h, w = mask.shape
    x_min, x_max = int(xs.min()), int(xs.max()) + 1
    y_min, y_max = int(ys.min()), int(ys.max()) + 1

    if jitter > 0:
        if rng is None:
            rng = np.random.default_rng()
        bw, bh = x_max - x_min, y_max - y_min
        x_min += int(round(rng.uniform(-jitter * bw, jitter * bw)))
        x_max += int(round(rng.uniform(-jitter * bw, jitter * bw)))
        y_min += int(round(rng.uniform(-jitter * bh, jitter * bh)))
        y_max += int(round(rng.uniform(-jitter * bh, jitter * bh)))
        x_min = max(0, min(x_min, w - 1))
        y_min = max(0, min(y_min, h - 1))
        x_max = max(x_min + 1, min(x_max, w))
        y_max = max(y_min + 1, min(y_max, h))

    return Box(x_min, y_min, x_max, y_max)


def preprocess(
    sample: Sample,
    size: int,
    mean: tuple[float, ...] = IMAGE_MEAN,
    std: tuple[float, ...] = IMAGE_STD,
    clip_percentiles: tuple[float, float] = (1.0, 99.0),
) -> Sample:
    """Resize, truncate and standardize a sample for the network.

    Image and depth are resized bilinearly to ``size`` x ``size``; the GT is
    resized nearest-neighbor and re-binarized.  Each image channel is clipped
    to its ``[p_lo, p_hi]`` percentile range and standardized with the given
    channel statistics.  The box is rescaled proportionally.
    """
    if size < 16 or size % ENCODER_STRIDE != 0:
        raise BadSize(f"size must be >= 16 and divisible by {ENCODER_STRIDE}, got {size}")

    h, w = sample.height, sample.width
    image = _resize(sample.image, size, "bilinear")
    depth = _resize(sample.depth, size, "bilinear").clamp(0.0, 1.0)
    gt = _resize(sample.gt_mask, size, "nearest")
    gt = (gt > 0.5).to(sample.gt_mask.dtype)

    p_lo, p_hi = clip_percentiles
    channels = []
    for c in range(image.shape[0]):
        ch = image[c]
        lo = torch.quantile(ch, p_lo / 100.0)
        hi = torch.quantile(ch, p_hi / 100.0)
        ch = ch.clamp(min=float(lo), max=float(hi))
        channels.append((ch - mean[c]) / std[c])
    image = torch.stack(channels)

    sx, sy = size / w, size / h
    x_min = max(0, min(int(round(sample.box.x_min * sx)), size - 1))
    y_min = max(0, min(int(round(sample.box.y_min * sy)), size - 1))
    x_max = max(x_min + 1, min(int(round(sample.box.x_max * sx)), size))
    y_max = max(y_min + 1, min(int(round(sample.box.y_max * sy)), size))

    return Sample(
        image=image,
        depth=depth,
        gt_mask=gt,
        box=Box(x_min, y_min, x_max, y_max),
        id=sample.id,
    )


def _resize(x: torch.Tensor, size: int, mode: str) -> torch.Tensor:
    if x.shape[-2:] == (size, size):
        return x.clone()
    kwargs = {"align_corners": False} if mode == "bilinear" else {}
    return torch.nn.functional.interpolate(x[None], size=(size, size), mode=mode, **kwargs)[0]


def synth_dataset(n: int, seed: int, size: int) -> list[Sample]:
    """Generate ``n`` deterministic synthetic camouflage scenes.

    Each scene is a textured background with one low-contrast foreground
    blob; the depth map separates the blob from the background by at least
    0.2 under additive sensor-style noise (sigma 0.05).  Output is a pure
    function of ``(n, seed, size)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return [_synth_one(seed, i, size) for i in range(n)]


def write_synth_dataset(n: int, seed: int, size: int, out_root: Path) -> list[str]:
    """Generate and write a synthetic dataset; returns the sample ids."""
    samples = synth_dataset(n, seed, size)
    for s in samples:
        save_sample(s, out_root)
    return [s.id for s in samples]


def _smooth_noise(rng: np.random.Generator, size: int, cells: int, amplitude: float) -> np.ndarray:
    """Band-limited noise: a coarse random grid upsampled bilinearly."""
    coarse = rng.uniform(-amplitude, amplitude, size=(cells, cells)).astype(np.float64)
    t = torch.from_numpy(coarse)[None, None]
    up = torch.nn.functional.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return up[0, 0].numpy()


def _blob_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth star-convex blob with a wavy boundary."""
    cy = rng.uniform(0.35, 0.65) * size
    cx = rng.uniform(0.35, 0.65) * size
    r0 = rng.uniform(0.14, 0.26) * size
    n_waves = 4
    amps = rng.uniform(0.0, 0.15, size=n_waves)
    phases = rng.uniform(0.0, 2 * math.pi, size=n_waves)

    ys, xs = np.mgrid[0:size, 0:size]
    dy, dx = ys - cy, xs - cx
    theta = np.arctan2(dy, dx)
    radius = r0 * (1.0 + sum(a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amps, phases))))
    mask = (dy * dy + dx * dx) <= radius * radius
    if not mask.any():  # tiny sizes: guarantee at least the center pixel
        mask[int(cy), int(cx)] = True
    return mask.astype(np.float64)


def _synth_one(seed: int, index: int, size: int) -> Sample:
    rng = np.random.default_rng([seed, index])

    mask = _blob_mask(rng, size)
    fg = mask > 0.5

    # Background texture kept inside [0.2, 0.8] so 8-bit clipping never bites.
    base = rng.uniform(0.35, 0.65, size=3)
    image = np.empty((3, size, size), dtype=np.float64)
    for c in range(3):
        tex = _smooth_noise(rng, size, cells=5, amplitude=0.10)
        fine = rng.normal(0.0, 0.02, size=(size, size))
        image[c] = base[c] + tex + fine

    # Camouflage: foreground is the same texture with a small color shift.
    shift = rng.uniform(-0.10, 0.10, size=3)
    for c in range(3):
        image[c] = image[c] + shift[c] * mask
    image = np.clip(image, 0.0, 1.0)

    # Depth: gently sloped background plane, foreground nearer by >= 0.25,
    # plus additive noise to mimic estimated (source-free) depth maps.
    gy, gx = np.mgrid[0:size, 0:size]
    slope = rng.uniform(-0.05, 0.05, size=2)
    plane = 0.65 + slope[0] * (gy / size - 0.5) + slope[1] * (gx / size - 0.5)
    disparity = rng.uniform(0.25, 0.35)
    depth = plane - disparity * mask + rng.normal(0.0, 0.05, size=(size, size))
    depth = np.clip(depth, 0.0, 1.0)

    gt = torch.from_numpy(fg.astype(np.float32))[None]
    sample = Sample(
        image=torch.from_numpy(image.astype(np.float32)),
        depth=torch.from_numpy(depth.astype(np.float32))[None],
        gt_mask=gt,
        box=derive_box_prompt(gt),
        id=f"synth_{index:04d}",
    )
    sample.validate()
    return sample


def load_dataset(spec: DatasetSpec) -> list[Sample]:
    """Load every sample of a dataset directory (sorted by id)."""
    return [load_sample(spec, sid) for sid in spec.ids()]


def replace_box(sample: Sample, box: Box) -> Sample:
    return dataclasses.replace(sample, box=box)
