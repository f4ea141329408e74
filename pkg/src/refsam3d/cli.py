"""Command line: ``refsam3d {train,infer,eval,gradcheck,synth}``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import InputError, RefSAM3DError

USAGE_ERROR, RUNTIME_ERROR = 1, 2
MANIFEST = "manifest.jsonl"
CONFIG_SIDECAR = "config.cfg"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --------------------------------------------------------------------------- datasets on disk
def write_dataset(samples, out_dir: Path) -> None:
    from .io import write_volume

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        cid = f"case_{i:04d}"
        write_volume(out_dir / f"{cid}_volume.v3d", s.volume[0])
        write_volume(out_dir / f"{cid}_mask.v3d", s.mask)
        for name, m in sorted(s.meta.get("labels", {}).items()):
            write_volume(out_dir / f"{cid}_label_{name}.v3d", m)
        lines.append(json.dumps({"case_id": cid, "prompt": s.prompt, "target": s.target,
                                 "labels": sorted(s.meta.get("labels", {}))}))
    (out_dir / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(data_dir: Path) -> list[dict]:
    path = data_dir / MANIFEST
    if not path.exists():
        raise InputError(f"{data_dir}: no {MANIFEST}; expected a directory written by `synth`")
    return [json.loads(line) for line in path.read_text("utf-8").splitlines() if line.strip()]


def read_dataset(data_dir: Path):
    from .io import read_volume
    from .pipeline.data import VolumeSample

    samples = []
    for row in read_manifest(data_dir):
        cid = row["case_id"]
        vol, _ = read_volume(data_dir / f"{cid}_volume.v3d")
        mask, _ = read_volume(data_dir / f"{cid}_mask.v3d")
        labels = {name: read_volume(data_dir / f"{cid}_label_{name}.v3d")[0] for name in row.get("labels", [])}
        meta = {"target": row["target"], "case_id": cid}
        if labels:
            meta["labels"] = labels
        samples.append(VolumeSample(vol[None], mask, row["prompt"], meta))
    return samples


# --------------------------------------------------------------------------- subcommands
def _load_config(path):
    from .pipeline.config import ModelConfig, parse_config

    return parse_config(path) if path else ModelConfig()


def cmd_train(args) -> int:
    from .pipeline.config import write_config
    from .pipeline.data import TaskSpec, synth_dataset
    from .pipeline.model import build_model
    from .pipeline.train import train

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / CONFIG_SIDECAR)
    if args.data:
        dataset = read_dataset(Path(args.data))
    else:
        spec = TaskSpec(classes=cfg.data.classes, volume_shape=tuple(cfg.encoder.volume_shape),
                        noise=cfg.data.noise)
        dataset = synth_dataset(cfg.data.seed, cfg.data.n_train, spec)
    model = build_model(cfg, np.dtype(cfg.train.dtype))
    report = train(model, dataset, cfg, out_dir=out, max_steps=args.max_steps)
    last = report.records[-1]
    print(f"trained {report.steps} steps over {len(report.records)} epochs: "
          f"loss {last.loss:.4f}, dice {last.dice:.4f}; checkpoint {report.checkpoints[-1]}")
    return 0


def cmd_infer(args) -> int:
    from .io import load_checkpoint, read_volume, write_volume
    from .pipeline.data import VolumeSample
    from .pipeline.model import build_model
    from .pipeline.train import predict

    ckpt = Path(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.parent / CONFIG_SIDECAR
    if not cfg_path.exists():
        raise InputError(f"no config given and no {CONFIG_SIDECAR} next to {ckpt}")
    cfg = _load_config(cfg_path)
    model = build_model(cfg, np.dtype(cfg.train.dtype))
    load_checkpoint(model, ckpt)
    vol, spacing = read_volume(args.volume)
    if vol.dtype == np.uint8:
        raise InputError(f"{args.volume} holds a mask, expected an intensity volume")
    sample = VolumeSample(vol[None], np.zeros(vol.shape, np.uint8), args.prompt)
    mask = predict(model, sample)
    write_volume(args.out, mask, spacing)
    print(f"wrote {args.out}: {mask.shape}, {int(mask.sum())} foreground voxels")
    return 0


def cmd_eval(args) -> int:
    from .io import read_volume
    from .metrics import BinaryMask, evaluate_case, format_table

    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    classes = {}
    if (gt_dir / MANIFEST).exists():
        classes = {r["case_id"]: r["target"] for r in read_manifest(gt_dir)}
    rows = []
    for gt_path in sorted(gt_dir.glob("*.v3d")):
        gt, spacing = read_volume(gt_path)
        if gt.dtype != np.uint8 or "_label_" in gt_path.stem:
            continue
        pred_path = pred_dir / gt_path.name
        if not pred_path.exists():
            raise InputError(f"missing prediction {pred_path} for ground truth {gt_path}")
        pred, _ = read_volume(pred_path)
        case_id = gt_path.stem.removesuffix("_mask")
        rows.append(evaluate_case(case_id, classes.get(case_id, "-"), BinaryMask(pred, spacing),
                                  BinaryMask(gt, spacing), args.tau, args.percentile))
    if not rows:
        raise InputError(f"{gt_dir}: no mask files found")
    print(format_table(rows))
    report = Path(args.report) if args.report else pred_dir / "metrics.jsonl"
    report.write_text("".join(json.dumps(r.as_dict()) + "\n" for r in rows), encoding="utf-8")
    print(f"report: {report}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(args.tolerance, include_model=not args.quick)
    failed = 0
    for r in results:
        ok = r.report.passed
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {r.name:<28} max rel err {r.report.max_error:.2e} ({r.seconds:.2f}s)")
    print(f"{len(results) - failed}/{len(results)} passed at tolerance {args.tolerance:g}")
    return 0 if failed == 0 else RUNTIME_ERROR


def cmd_synth(args) -> int:
    from .pipeline.data import TaskSpec, synth_dataset

    classes = tuple(c.strip() for c in args.classes.split(",") if c.strip())
    spec = TaskSpec(classes=classes, volume_shape=(args.size,) * 3, noise=args.noise)
    write_dataset(synth_dataset(args.seed, args.n, spec), Path(args.out))
    print(f"wrote {args.n} cases to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="refsam3d", description="Text-prompted 3D segmentation with a frozen, adapted backbone.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train on synthetic or on-disk data")
    t.add_argument("--config", help="config file; defaults are used when omitted")
    t.add_argument("--out", required=True, help="output directory for log, checkpoints and config")
    t.add_argument("--seed", type=int, help="override train.seed")
    t.add_argument("--data", help="dataset directory written by `synth`; generated from the config if omitted")
    t.add_argument("--epochs", type=int, help="override train.epochs")
    t.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="predict a mask for one volume and prompt")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--config", help=f"defaults to {CONFIG_SIDECAR} next to the checkpoint")
    i.add_argument("--volume", required=True)
    i.add_argument("--prompt", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="Dice / NSD / Hausdorff of predicted against ground-truth masks")
    e.add_argument("pred_dir")
    e.add_argument("gt_dir")
    e.add_argument("--tau", type=float, default=1.0, help="NSD tolerance in spacing units")
    e.add_argument("--percentile", type=float, default=100.0, help="Hausdorff percentile (95 for HD95)")
    e.add_argument("--report", help="JSONL report path (default: <pred_dir>/metrics.jsonl)")
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable operation")
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--quick", action="store_true", help="skip the full-model case")
    g.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic referring-segmentation dataset")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=32, help="cubic volume edge length")
    s.add_argument("--classes", default="sphere,cube")
    s.add_argument("--noise", type=float, default=0.1)
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (RefSAM3DError, OSError, ValueError) as exc:
        print(f"refsam3d {args.command}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
