"""Command-line interface.

Subcommands cover the whole pipeline: render-dataset, train, eval, ablate,
nvs, multi-step, shuffle-demo, edit. Settings come from an optional JSON
config file (sections "model", "train", "sample", "ablation"), overridden by
command-line flags; every command takes --seed and is byte-reproducible from
(config, seed). Outputs are PPM images, plain-text reports, and loss logs.
"""

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import harness, ppm
from .flow import OptimizerSettings, prepare_condition, train_loop
from .geometry import CameraPose
from .harness import VARIANT_NAMES, evaluate_model, format_metric, run_ablation, split_pairs
from .metrics import psnr, ssim
from .model import DiTConfig, load_checkpoint
from .scenes import dataset_read, dataset_write, render_dataset


def load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def model_config(cfg: dict, z_scale: float, variant: str | None = None) -> DiTConfig:
    fields = dict(cfg.get("model", {}))
    fields.setdefault("z_scale", z_scale)
    config = DiTConfig(**fields)
    if variant is not None:
        config = harness.variant_config(config, variant)
    return config


def optimizer_settings(cfg: dict, args) -> OptimizerSettings:
    fields = dict(cfg.get("train", {}))
    if "betas" in fields:
        fields["betas"] = tuple(fields["betas"])
    opt = OptimizerSettings(**fields)
    overrides = {"lr": "lr", "batch_size": "batch_size", "train_steps": "steps"}
    for arg_name, field_name in overrides.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            opt = dataclasses.replace(opt, **{field_name: value})
    return opt


def sample_steps(cfg: dict, args) -> int:
    if getattr(args, "steps", None) is not None:
        return args.steps
    return int(cfg.get("sample", {}).get("steps", 20))


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def keep_mask_image(keep: np.ndarray, grid: int, p: int) -> np.ndarray:
    cells = keep.reshape(grid, grid).astype(np.float64)
    img = np.repeat(np.repeat(cells, p, axis=0), p, axis=1)
    return np.repeat(img[..., None], 3, axis=-1)


def _load_pair(args):
    dataset = dataset_read(args.data)
    record = dataset.records[args.scene]
    pair = record.pairs[args.pair]
    return dataset, record, record.frames[pair.source], record.frames[pair.target], pair


def cmd_render_dataset(args) -> int:
    dataset = render_dataset(
        n_scenes=args.scenes,
        pairs_per_scene=args.pairs_per_scene,
        max_rotation_deg=args.max_rotation,
        seed=args.seed,
        image_size=args.size,
        orbit_radius=args.orbit_radius,
    )
    dataset_write(dataset, args.out)
    print(
        f"wrote {args.scenes} scenes x {args.pairs_per_scene} pairs to {args.out} "
        f"(z_scale={dataset.z_scale:.6f})"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    dataset = dataset_read(args.data)
    config = model_config(cfg, dataset.z_scale, args.variant)
    opt = optimizer_settings(cfg, args)
    refs = [
        harness.PairRef(scene=s, pair=p)
        for s, record in enumerate(dataset.records)
        for p in range(len(record.pairs))
    ]
    prepared = harness.prepare_refs(dataset, refs, config)
    result = train_loop(config, prepared, opt, args.seed, out_dir=args.out, progress=True)
    print(f"final loss {result.losses[-1][1]:.6f}; checkpoint at {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    dataset = dataset_read(args.data)
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.heldout_scenes:
        split = split_pairs(dataset, args.seed, args.heldout_scenes)
        refs = split.heldout
    else:
        refs = [
            harness.PairRef(scene=s, pair=p)
            for s, record in enumerate(dataset.records)
            for p in range(len(record.pairs))
        ]
    report = evaluate_model(
        model, dataset, refs, sample_steps(cfg, args), args.seed,
        variant="checkpoint", dataset_id=str(args.data),
        image_sink=lambda stem, img: ppm.write_ppm(img, out / f"{stem}.ppm"),
    )
    (out / "report.json").write_text(report.to_json())
    mean = "exact" if math.isinf(report.mean_psnr) else f"{report.mean_psnr:.3f}"
    print(f"evaluated {len(refs)} pairs: mean PSNR {mean} dB, mean SSIM {report.mean_ssim:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    dataset = dataset_read(args.data)
    config = model_config(cfg, dataset.z_scale)
    opt = optimizer_settings(cfg, args)
    holdout = int(cfg.get("ablation", {}).get("holdout_scenes", 8))
    reports, split = run_ablation(
        dataset, config, opt, args.seed, out_dir=args.out,
        sample_steps=sample_steps(cfg, args), holdout_scenes=holdout, progress=True,
    )
    print(f"split hash {split.split_hash}")
    print(harness.comparison_table(reports), end="")
    return 0


def cmd_nvs(args) -> int:
    cfg = load_config(args.config)
    dataset, record, src, tgt, pair = _load_pair(args)
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = harness.nvs(
        model, src, pair.rel, steps=sample_steps(cfg, args), seed=args.seed,
        sparse_noise=args.sparse_noise,
    )
    image = ppm.quantize(result.image)
    ppm.write_ppm(image, out / "output.ppm")
    ppm.write_ppm(
        keep_mask_image(result.keep, model.config.grid, model.config.patch),
        out / "keepmask.ppm",
    )
    report = {
        "scene": args.scene, "pair": args.pair, "angle_deg": pair.angle_deg,
        "kept_tokens": int(result.keep.sum()),
        "psnr_vs_target": format_metric(psnr(image, tgt.image)),
        "ssim_vs_target": round(ssim(image, tgt.image), 6),
        "psnr_source_vs_target": format_metric(psnr(src.image, tgt.image)),
    }
    write_json(out / "report.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_multi_step(args) -> int:
    cfg = load_config(args.config)
    dataset, record, src, tgt, pair = _load_pair(args)
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image = harness.multi_step_nvs(
        model, src, pair.rel, k=args.k, steps=sample_steps(cfg, args), seed=args.seed,
        fusion_depth=args.fusion_depth,
        oracle_scene=record.scene if args.fusion_depth == "oracle" else None,
    )
    image = ppm.quantize(image)
    ppm.write_ppm(image, out / "output.ppm")
    report = {
        "scene": args.scene, "pair": args.pair, "k": args.k,
        "fusion_depth": args.fusion_depth,
        "psnr_vs_target": format_metric(psnr(image, tgt.image)),
        "ssim_vs_target": round(ssim(image, tgt.image), 6),
    }
    write_json(out / "report.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_shuffle_demo(args) -> int:
    cfg = load_config(args.config)
    dataset = dataset_read(args.data)
    frame = dataset.records[args.scene].frames[0]
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = harness.shuffle_demo(
        model, frame, args.perm_seed, steps=sample_steps(cfg, args), seed=args.seed,
        identity=args.identity,
    )
    ppm.write_ppm(ppm.quantize(result.image), out / "output.ppm")
    ppm.write_ppm(frame.image, out / "source.ppm")
    report = {
        "scene": args.scene, "perm_seed": args.perm_seed, "identity": args.identity,
        "n_moved": result.n_moved,
        "majority_fraction": None if math.isnan(result.majority_fraction)
        else round(result.majority_fraction, 6),
        "identity_psnr": None if math.isnan(result.identity_psnr)
        else format_metric(result.identity_psnr),
    }
    write_json(out / "report.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_edit(args) -> int:
    cfg = load_config(args.config)
    dataset = dataset_read(args.data)
    frame = dataset.records[args.scene].frames[0]
    model = load_checkpoint(args.checkpoint)
    mask = ppm.read_ppm(args.mask).mean(axis=-1) > 0.5
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = harness.edit_demo(
        model, frame, mask, args.mode, degrees=args.degrees,
        steps=sample_steps(cfg, args), seed=args.seed,
    )
    ppm.write_ppm(ppm.quantize(result.image), out / "output.ppm")
    ppm.write_ppm(frame.image, out / "source.ppm")
    report = {
        "scene": args.scene, "mode": args.mode, "degrees": args.degrees,
        "kept_tokens": int(result.keep.sum()),
    }
    write_json(out / "report.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pefield", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True, pair=False):
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--steps", type=int, default=None, help="sampler steps")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        if pair:
            p.add_argument("--scene", type=int, required=True)
            p.add_argument("--pair", type=int, default=0)

    p = sub.add_parser("render-dataset", help="generate and render synthetic scenes")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--pairs-per-scene", type=int, required=True)
    p.add_argument("--max-rotation", type=float, required=True, help="degrees")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--orbit-radius", type=float, default=2.5)
    p.set_defaults(func=cmd_render_dataset)

    p = sub.add_parser("train", help="train one variant on a dataset")
    common(p, checkpoint=False)
    p.add_argument("--variant", choices=VARIANT_NAMES, default="full")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--train-steps", dest="train_steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on dataset pairs")
    common(p)
    p.add_argument("--heldout-scenes", type=int, default=0,
                   help="evaluate only the held-out split of this many scenes")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare all four variants")
    common(p, checkpoint=False)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("nvs", help="novel view synthesis for one dataset pair")
    common(p, pair=True)
    p.add_argument("--sparse-noise", action="store_true",
                   help="noise tokens only at cells without source coverage")
    p.set_defaults(func=cmd_nvs)

    p = sub.add_parser("multi-step", help="progressive multi-step view synthesis")
    common(p, pair=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--fusion-depth", choices=("extend", "oracle"), default="extend")
    p.set_defaults(func=cmd_multi_step)

    p = sub.add_parser("shuffle-demo", help="permute condition positions at identity pose")
    common(p)
    p.add_argument("--scene", type=int, required=True)
    p.add_argument("--perm-seed", type=int, default=0)
    p.add_argument("--identity", action="store_true", help="use the identity permutation")
    p.set_defaults(func=cmd_shuffle_demo)

    p = sub.add_parser("edit", help="object-level editing via positional coordinates")
    common(p)
    p.add_argument("--scene", type=int, required=True)
    p.add_argument("--mask", required=True, help="PPM mask, nonzero = object")
    p.add_argument("--mode", choices=("rotate-object", "remove-object"), required=True)
    p.add_argument("--degrees", type=float, default=0.0)
    p.set_defaults(func=cmd_edit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
