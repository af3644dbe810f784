"""Command-line entry points: train / eval / ablate / synth.

The output root defaults to ``./runs`` and can be overridden with the
``DEPTHCOD_OUT_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
from pathlib import Path

from .data import write_synth_dataset
from .harness import RunConfig, ablate, evaluate, train


def _out_root() -> Path:
    return Path(os.environ.get("DEPTHCOD_OUT_ROOT", "runs"))


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.from_json(path) if path else RunConfig()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="depthcod")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", help="JSON config (RunConfig fields); defaults used if omitted")
    p_train.add_argument("--out", help="run directory (default <out_root>/train)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", help="dataset root (Image/Depth/GT); checkpoint's dataset if omitted")
    p_eval.add_argument("--out", help="report directory (default <out_root>/eval)")
    p_eval.add_argument("--save-preds", action="store_true", help="write prediction PNGs")

    p_ablate = sub.add_parser("ablate", help="run an ablation grid")
    p_ablate.add_argument("--grid", required=True,
                          choices=["modules", "layers", "inputs", "fusion_ratio", "loss_ratio"])
    p_ablate.add_argument("--config")
    p_ablate.add_argument("--out")
    p_ablate.add_argument("--variants", help="comma-separated subset of grid rows")

    p_synth = sub.add_parser("synth", help="write a synthetic dataset")
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--size", type=int, default=64)
    p_synth.add_argument("--out", required=True)

    args = parser.parse_args(argv)

    if args.command == "train":
        out = Path(args.out) if args.out else _out_root() / "train"
        result = train(_load_config(args.config), out)
        print(f"checkpoint: {result.checkpoint}")
        print(f"log: {result.log_path}")
        if result.log:
            last = result.log[-1]
            print(f"final loss: {last['loss']:.6f}")
        return 0

    if args.command == "eval":
        out = Path(args.out) if args.out else _out_root() / "eval"
        report = evaluate(args.ckpt, data_root=args.data, out_dir=out, write_pngs=args.save_preds)
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return 0

    if args.command == "ablate":
        out = Path(args.out) if args.out else _out_root() / f"ablate_{args.grid}"
        variants = args.variants.split(",") if args.variants else None
        rows = ablate(args.grid, _load_config(args.config), out, variants=variants)
        print(f"wrote {out / 'table.csv'} ({len(rows)} variants)")
        return 0

    if args.command == "synth":
        ids = write_synth_dataset(args.n, args.seed, args.size, Path(args.out))
        print(f"wrote {len(ids)} samples under {args.out}")
        return 0

    return 1


if __name__ == "__main__":
    raise SystemExit(main())
