"""Experiment orchestration: training with the frozen/trainable split,
evaluation, ablation grids and checkpointing.

Checkpoints are a flat name->array ``.npz`` plus a JSON manifest (shapes,
frozen flags, full config and its hash) under the same stem.  All runs pin
single-threaded numerics, so a (config, dataset, seed) triple reproduces
logs, checkpoints and reports exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import special

from . import metrics
from .data import (
    DatasetSpec,
    Sample,
    derive_box_prompt,
    load_dataset,
    preprocess,
    synth_dataset,
)
from .depth_prompt import cwd_loss
from .errors import BadConfig, FailedRun
from .losses import dice_ce_loss, total_loss
from .model import REFINER_INPUT_MODES, DepthCodModel

VALID_K = (2, 4, 8, 16)


@dataclass
class RunConfig:
    """Everything that, together with the dataset, determines a run.

    The defaults are the desk profile (minutes on a CPU); call
    :func:`paper_profile` for the full-scale settings.
    """

    image_size: int = 64
    embed_dim: int = 32
    student_channels: tuple[int, int] = (32, 64)
    k: int = 8  # refiner channel segments
    alpha: float = 0.9  # coarse share in prediction fusion
    beta: float = 0.9  # segmentation share in the objective
    temperature: float = 4.0  # distillation temperature
    gf_radius: int = 2
    gf_eps: float = 1e-2
    n_agents: int = 16
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    box_jitter: float = 0.0
    use_depth_prompt: bool = True
    use_refiner: bool = True
    refiner_inputs: str = "DD"
    loss_target: str = "fused"  # segmentation loss on "fused" or "coarse" logits
    normalize: str = "minmax"  # prediction normalization before metrics
    data_root: str | None = None  # None -> synthetic dataset
    synth_samples: int = 8
    ablation_id: str = ""

    def __post_init__(self):
        self.student_channels = tuple(self.student_channels)

    def validate(self) -> None:
        if self.k not in VALID_K:
            raise BadConfig(f"k must be one of {VALID_K}")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise BadConfig("alpha and beta must lie in [0, 1]")
        if self.lr <= 0:
            raise BadConfig("lr must be positive")
        if self.image_size < 16 or self.image_size % 8 != 0:
            raise BadConfig("image_size must be >= 16 and divisible by 8")
        if self.refiner_inputs not in REFINER_INPUT_MODES:
            raise BadConfig(f"refiner_inputs must be one of {REFINER_INPUT_MODES}")
        if self.refiner_inputs != "DD" and not self.use_depth_prompt:
            raise BadConfig("image-embedding refiner inputs need the depth-prompt path")
        if self.loss_target not in ("fused", "coarse"):
            raise BadConfig("loss_target must be 'fused' or 'coarse'")
        if self.embed_dim != self.student_channels[0]:
            raise BadConfig("embed_dim must equal the first student channel count")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["student_channels"] = list(self.student_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise BadConfig(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def paper_profile(**overrides) -> RunConfig:
    """Full-scale training settings (1024 px inputs, Adam 1e-5, 100 epochs)."""
    base = dict(image_size=1024, lr=1e-5, epochs=100, batch_size=8)
    base.update(overrides)
    return RunConfig(**base)


def build_model(config: RunConfig) -> DepthCodModel:
    config.validate()
    return DepthCodModel(
        image_size=config.image_size,
        embed_dim=config.embed_dim,
        student_channels=config.student_channels,
        use_depth_prompt=config.use_depth_prompt,
        use_refiner=config.use_refiner,
        refiner_inputs=config.refiner_inputs,
        k=config.k,
        gf_radius=config.gf_radius,
        gf_eps=config.gf_eps,
        n_agents=config.n_agents,
        alpha=config.alpha,
        seed=config.seed,
    )


def resolve_dataset(config: RunConfig) -> list[Sample]:
    if config.data_root is None:
        return synth_dataset(config.synth_samples, config.seed, config.image_size)
    return load_dataset(DatasetSpec(root=config.data_root))


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(model: DepthCodModel, config: RunConfig, path) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)

    trainable = {name for name, p in model.named_parameters() if p.requires_grad}
    state = model.state_dict()
    arrays = {name: t.detach().cpu().numpy() for name, t in state.items()}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)

    manifest = {
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "tensors": {
            name: {"shape": list(t.shape), "frozen": name not in trainable}
            for name, t in state.items()
        },
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def manifest_path(ckpt_path) -> Path:
    return Path(ckpt_path).with_suffix(".json")


def load_checkpoint(path) -> tuple[DepthCodModel, RunConfig]:
    path = Path(path)
    manifest = json.loads(manifest_path(path).read_text())
    config = RunConfig.from_dict(manifest["config"])
    if config.hash() != manifest["config_hash"]:
        raise BadConfig("manifest config hash does not match its config")
    model = build_model(config)
    state = {}
    with np.load(path) as archive:
        for name in archive.files:
            state[name] = torch.from_numpy(archive[name])
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise BadConfig(f"checkpoint incompatible with config: {exc}") from exc
    return model, config


def component_hashes(model: DepthCodModel) -> dict[str, str]:
    """SHA-256 of every component's tensors (params and buffers)."""
    prefixes = ["teacher", "prompt_encoder", "student", "decoder"]
    if model.use_depth_prompt:
        prefixes.append("depth_prompt")
    if model.use_refiner:
        prefixes.append("refiner")
    state = model.state_dict()
    out = {}
    for prefix in prefixes:
        h = hashlib.sha256()
        for name in sorted(state):
            if name.startswith(prefix + "."):
                h.update(name.encode())
                h.update(state[name].detach().cpu().numpy().tobytes())
        out[prefix] = h.hexdigest()
    return out


# --- training --------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    log: list[dict] = field(default_factory=list)


def _stack_batch(samples: list[Sample], boxes) -> tuple[torch.Tensor, ...]:
    images = torch.stack([s.image for s in samples])
    depths = torch.stack([s.depth for s in samples])
    gts = torch.stack([s.gt_mask for s in samples])
    box_t = torch.stack([b.as_tensor() for b in boxes])
    return images, depths, gts, box_t


def train(config: RunConfig, out_dir) -> TrainResult:
    """Optimize the trainable components; frozen modules stay bit-identical.

    Writes ``checkpoint.npz`` (+ manifest) and ``log.json`` under ``out_dir``.
    Aborts with :class:`FailedRun` on a non-finite loss, keeping the last
    good checkpoint.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        return _train_inner(config, out_dir)
    finally:
        torch.set_num_threads(n_threads)


def _train_inner(config: RunConfig, out_dir: Path) -> TrainResult:
    raw = resolve_dataset(config)
    samples = [preprocess(s, config.image_size) for s in raw]
    model = build_model(config)
    optimizer = torch.optim.Adam(model.trainable_parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    ckpt_path = out_dir / "checkpoint.npz"
    log_path = out_dir / "log.json"

    last_good = {k: v.clone() for k, v in model.state_dict().items()}
    log: list[dict] = []
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        sums = {"loss": 0.0, "loss_seg": 0.0, "loss_distill": 0.0}
        n_batches = 0
        for start in range(0, len(samples), config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            if config.box_jitter > 0:
                boxes = [derive_box_prompt(s.gt_mask, config.box_jitter, rng) for s in batch]
            else:
                boxes = [s.box for s in batch]
            images, depths, gts, box_t = _stack_batch(batch, boxes)

            out = model(images, depths, box_t)
            seg_logits = out.fused if config.loss_target == "fused" else out.coarse
            loss_seg = dice_ce_loss(seg_logits, gts)
            if model.use_depth_prompt:
                loss_distill = cwd_loss(out.teacher_feat, out.corrected_feat, config.temperature)
            else:
                loss_distill = torch.zeros((), dtype=loss_seg.dtype)
            loss = total_loss(loss_seg, loss_distill, config.beta)

            if not torch.isfinite(loss):
                model.load_state_dict(last_good)
                save_checkpoint(model, config, ckpt_path)
                log_path.write_text(json.dumps(log, indent=2))
                raise FailedRun(
                    f"non-finite loss at epoch {epoch}", checkpoint=ckpt_path
                )

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            sums["loss"] += loss.item()
            sums["loss_seg"] += loss_seg.item()
            sums["loss_distill"] += loss_distill.item()
            n_batches += 1

        log.append({"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}})
        last_good = {k: v.clone() for k, v in model.state_dict().items()}

    save_checkpoint(model, config, ckpt_path)
    log_path.write_text(json.dumps(log, indent=2))
    return TrainResult(checkpoint=ckpt_path, log_path=log_path, log=log)


# --- evaluation ------------------------------------------------------------

def predict_dataset(
    model: DepthCodModel,
    samples: list[Sample],
    image_size: int,
    alpha: float | None = None,
    skip_refine: bool = False,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Fused logits (and preprocessed GTs) per sample, in id order."""
    model.eval()
    logits_list, gts = [], []
    with torch.no_grad():
        for s in sorted(samples, key=lambda x: x.id):
            pre = preprocess(s, image_size)
            images, depths, gts_t, box_t = _stack_batch([pre], [pre.box])
            out = model(images, depths, box_t, alpha=alpha, skip_refine=skip_refine)
            logits_list.append(out.fused[0, 0].numpy().astype(np.float64))
            gts.append(gts_t[0, 0].numpy().astype(np.float64))
    return logits_list, gts


def evaluate(
    ckpt_path,
    data_root: str | None = None,
    out_dir=None,
    expect_hash: str | None = None,
    write_pngs: bool = False,
    alpha: float | None = None,
    skip_refine: bool = False,
) -> metrics.MetricReport:
    """Run the full forward path over a dataset and aggregate the metrics.

    ``expect_hash`` guards against config/checkpoint mismatches; predictions
    are sigmoid-ed then normalized per the checkpoint's config before
    scoring.  Optionally writes per-sample prediction PNGs and report files.
    """
    model, config = load_checkpoint(ckpt_path)
    if expect_hash is not None and expect_hash != config.hash():
        raise BadConfig("checkpoint config hash does not match the expected one")
    if data_root is not None:
        samples = load_dataset(DatasetSpec(root=data_root))
    else:
        samples = resolve_dataset(config)

    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        logits_list, gts = predict_dataset(
            model, samples, config.image_size, alpha=alpha, skip_refine=skip_refine
        )
    finally:
        torch.set_num_threads(n_threads)

    preds = []
    for logits in logits_list:
        prob = special.expit(logits)
        preds.append(metrics.normalize_prediction(prob, config.normalize))
    report = metrics.evaluate_batch(preds, gts)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report(report, out_dir / "report")
        if write_pngs:
            from PIL import Image

            pred_dir = out_dir / "preds"
            pred_dir.mkdir(exist_ok=True)
            ids = sorted(s.id for s in samples)
            for sid, pred in zip(ids, preds):
                # PNGs always carry the min-max view, whatever the metric setting.
                png = metrics.normalize_prediction(pred, "minmax")
                arr = np.clip(np.rint(png * 255.0), 0, 255).astype(np.uint8)
                Image.fromarray(arr, mode="L").save(pred_dir / f"{sid}.png")
    return report


def write_report(report: metrics.MetricReport, stem) -> None:
    stem = Path(stem)
    stem.with_suffix(".json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    stem.with_suffix(".csv").write_text(
        report.csv_header() + "\n" + report.csv_row() + "\n"
    )


# --- ablation grids --------------------------------------------------------

RATIO_LABELS = ("3:7", "2:8", "1:9", "0.5:9.5")


def _ratio_value(label: str) -> float:
    first, second = (float(x) for x in label.split(":"))
    return second / (first + second)


def ablation_grid(name: str) -> list[tuple[str, dict]]:
    """Rows of a named grid as (label, config-field overrides)."""
    if name == "modules":
        return [
            ("M1", {"use_depth_prompt": False, "use_refiner": False}),
            ("M2", {"use_depth_prompt": True, "use_refiner": False}),
            ("M3", {"use_depth_prompt": False, "use_refiner": True}),
            ("M4", {"use_depth_prompt": True, "use_refiner": True}),
        ]
    if name == "layers":
        return [(f"{k}-layers", {"k": k}) for k in VALID_K]
    if name == "inputs":
        return [(mode, {"refiner_inputs": mode}) for mode in ("II", "ID", "DD")]
    if name == "fusion_ratio":
        return [(label, {"alpha": _ratio_value(label)}) for label in RATIO_LABELS]
    if name == "loss_ratio":
        return [(label, {"beta": _ratio_value(label)}) for label in RATIO_LABELS]
    raise BadConfig(f"unknown ablation grid {name!r}")


def ablate(grid_name: str, base: RunConfig, out_dir, variants: list[str] | None = None) -> list[dict]:
    """Train+evaluate every grid variant with a shared seed; emit the table.

    Returns one row per variant: label, config dict, metric report.  Writes
    ``table.csv`` (variant column followed by the metric columns) and
    ``table.json``.  ``variants`` restricts the grid to a subset of labels.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = ablation_grid(grid_name)
    if variants is not None:
        known = {label for label, _ in grid}
        unknown = set(variants) - known
        if unknown:
            raise BadConfig(f"unknown variants {sorted(unknown)} for grid {grid_name!r}")
        grid = [(label, ov) for label, ov in grid if label in variants]
    rows = []
    for label, overrides in grid:
        config = dataclasses.replace(base, ablation_id=grid_name, **overrides)
        run_dir = out_dir / label.replace(":", "_")
        result = train(config, run_dir)
        report = evaluate(result.checkpoint, out_dir=run_dir)
        rows.append({"variant": label, "config": config.to_dict(), "report": report.to_dict()})

    with open(out_dir / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", *metrics.MetricReport.CSV_COLUMNS])
        for row in rows:
            writer.writerow([row["variant"], *_report_csv_values(row["report"])])
    (out_dir / "table.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    return rows


def _report_csv_values(report: dict) -> list[str]:
    vals = []
    for name in metrics.MetricReport.CSV_COLUMNS:
        v = report[name]
        vals.append(str(v) if isinstance(v, int) else f"{v:.9f}")
    return vals
