"""Evaluation harness: ablation variants, view-synthesis runs, and demos.

The four ablation variants differ only in the two positional-encoding flags;
they share data, seeds, and training budget, so metric differences isolate
the encoding design. Reports are JSON with deterministic key order; every
metric in a report can be recomputed from the emitted images with the
standalone psnr/ssim functions.
"""

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .flow import (
    Condition,
    OptimizerSettings,
    PreparedPair,
    euler_sample,
    euler_sample_patches,
    prepare_condition,
    prepare_pair,
    train_loop,
)
from .geometry import CameraPose, DepthMap, PEField, build_pe_field, interpolate_pose
from .metrics import psnr, ssim
from .model import DiT, DiTConfig, patchify, unpatchify
from .scenes import Dataset, Scene, SceneFrame, render

VARIANT_FLAGS = {
    "original-pe": {"depth_aware": False, "multilevel": False},
    "no-depth": {"depth_aware": False, "multilevel": True},
    "no-multilevel": {"depth_aware": True, "multilevel": False},
    "full": {"depth_aware": True, "multilevel": True},
}
VARIANT_NAMES = tuple(VARIANT_FLAGS)


def variant_config(base: DiTConfig, name: str) -> DiTConfig:
    if name not in VARIANT_FLAGS:
        raise ValueError(f"unknown variant {name!r}, expected one of {VARIANT_NAMES}")
    return dataclasses.replace(base, **VARIANT_FLAGS[name])


def format_metric(value: float) -> object:
    """Serialize a metric; exact matches (infinite PSNR) become "exact"."""
    if math.isinf(value):
        return "exact"
    return round(value, 6)


@dataclass
class EvalReport:
    variant: str
    dataset_id: str
    seed: int
    sample_steps: int
    entries: list[dict] = field(default_factory=list)
    mean_psnr: float = math.nan
    mean_ssim: float = math.nan
    failed: bool = False

    def to_json(self) -> str:
        payload = {
            "variant": self.variant,
            "dataset_id": self.dataset_id,
            "seed": self.seed,
            "sample_steps": self.sample_steps,
            "failed": self.failed,
            "mean_psnr": None if math.isnan(self.mean_psnr) else format_metric(self.mean_psnr),
            "mean_ssim": None if math.isnan(self.mean_ssim) else round(self.mean_ssim, 6),
            "entries": self.entries,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass
class PairRef:
    scene: int
    pair: int


@dataclass
class DataSplit:
    train: list[PairRef]
    heldout: list[PairRef]
    split_hash: str


def split_pairs(dataset: Dataset, seed: int, holdout_scenes: int) -> DataSplit:
    """Scene-level split fixed by seed; all pairs of a held-out scene are held out."""
    n = len(dataset.records)
    if not 0 < holdout_scenes < n:
        raise ValueError(f"holdout_scenes must be in (0, {n}), got {holdout_scenes}")
    order = np.random.default_rng(seed).permutation(n)
    held = set(int(s) for s in order[:holdout_scenes])
    train, heldout = [], []
    for s_idx, record in enumerate(dataset.records):
        refs = [PairRef(scene=s_idx, pair=p_idx) for p_idx in range(len(record.pairs))]
        (heldout if s_idx in held else train).extend(refs)
    payload = json.dumps(
        {
            "train": [[r.scene, r.pair] for r in train],
            "heldout": [[r.scene, r.pair] for r in heldout],
        },
        sort_keys=True,
    )
    return DataSplit(
        train=train, heldout=heldout, split_hash=hashlib.sha256(payload.encode()).hexdigest()
    )


def prepare_refs(dataset: Dataset, refs: list[PairRef], config: DiTConfig) -> list[PreparedPair]:
    prepared = []
    for ref in refs:
        record = dataset.records[ref.scene]
        pair = record.pairs[ref.pair]
        prepared.append(
            prepare_pair(
                record.frames[pair.source],
                record.frames[pair.target],
                pair.rel,
                config,
                scene=ref.scene,
                pair=ref.pair,
                angle_deg=pair.angle_deg,
            )
        )
    return prepared


def evaluate_model(
    model: DiT,
    dataset: Dataset,
    refs: list[PairRef],
    sample_steps: int,
    seed: int,
    variant: str = "",
    dataset_id: str = "",
    image_sink=None,
) -> EvalReport:
    """Sample every reference pair and score it against the ground-truth target.

    image_sink(name, image), when given, receives each generated image so the
    caller can persist it; metrics are computed on the same quantized pixels
    that get written.
    """
    from . import ppm

    report = EvalReport(
        variant=variant, dataset_id=dataset_id, seed=seed, sample_steps=sample_steps
    )
    psnrs, ssims = [], []
    for ref in refs:
        record = dataset.records[ref.scene]
        pair = record.pairs[ref.pair]
        cond = prepare_condition(record.frames[pair.source], pair.rel, model.config)
        image = euler_sample(model, cond, sample_steps, seed=[seed, ref.scene, ref.pair])
        image = ppm.quantize(image)
        target = record.frames[pair.target].image
        p, s = psnr(image, target), ssim(image, target)
        psnrs.append(p)
        ssims.append(s)
        name = f"eval_s{ref.scene:04d}_p{ref.pair}"
        if image_sink is not None:
            image_sink(name, image)
        report.entries.append(
            {
                "scene": ref.scene,
                "pair": ref.pair,
                "angle_deg": round(pair.angle_deg, 6),
                "image": name + ".ppm",
                "psnr": format_metric(p),
                "ssim": round(s, 6),
            }
        )
    if psnrs:
        report.mean_psnr = float(np.mean(psnrs))
        report.mean_ssim = float(np.mean(ssims))
    return report


def comparison_table(reports: dict[str, EvalReport]) -> str:
    lines = [f"{'variant':<16} {'mean_psnr':>10} {'mean_ssim':>10} {'status':>8}"]
    for name in VARIANT_NAMES:
        if name not in reports:
            continue
        r = reports[name]
        status = "failed" if r.failed else "ok"
        p = "exact" if math.isinf(r.mean_psnr) else f"{r.mean_psnr:.3f}"
        lines.append(f"{name:<16} {p:>10} {r.mean_ssim:>10.4f} {status:>8}")
    return "\n".join(lines) + "\n"


def run_ablation(
    dataset: Dataset,
    base_config: DiTConfig,
    opt: OptimizerSettings,
    seed: int,
    out_dir=None,
    variants: tuple[str, ...] = VARIANT_NAMES,
    sample_steps: int = 20,
    holdout_scenes: int = 8,
    progress: bool = False,
) -> tuple[dict[str, EvalReport], DataSplit]:
    """Train and evaluate every variant under one shared split, budget, and seed."""
    from pathlib import Path

    from . import ppm

    split = split_pairs(dataset, seed, holdout_scenes)
    dataset_id = (
        f"scenes{dataset.meta['n_scenes']}x{dataset.meta['pairs_per_scene']}"
        f"_seed{dataset.meta['seed']}_split{split.split_hash[:12]}"
    )
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "split.json").write_text(
            json.dumps(
                {
                    "split_hash": split.split_hash,
                    "train": [[r.scene, r.pair] for r in split.train],
                    "heldout": [[r.scene, r.pair] for r in split.heldout],
                },
                indent=2,
                sort_keys=True,
            )
        )
    reports: dict[str, EvalReport] = {}
    for name in variants:
        config = variant_config(base_config, name)
        vdir = out / name if out is not None else None
        if progress:
            print(f"[ablate] training variant {name}", flush=True)
        prepared = prepare_refs(dataset, split.train, config)
        try:
            result = train_loop(config, prepared, opt, seed, out_dir=vdir, progress=progress)
        except FloatingPointError:
            reports[name] = EvalReport(
                variant=name, dataset_id=dataset_id, seed=seed,
                sample_steps=sample_steps, failed=True,
            )
            continue
        sink = None
        if vdir is not None:
            def sink(stem, image, _dir=vdir):
                ppm.write_ppm(image, _dir / f"{stem}.ppm")
        reports[name] = evaluate_model(
            result.model, dataset, split.heldout, sample_steps, seed,
            variant=name, dataset_id=dataset_id, image_sink=sink,
        )
        if vdir is not None:
            (vdir / "report.json").write_text(reports[name].to_json())
    if out is not None:
        (out / "comparison.txt").write_text(comparison_table(reports))
    return reports, split


# ---------------------------------------------------------------------------
# view synthesis and demos
# ---------------------------------------------------------------------------


@dataclass
class NvsResult:
    image: np.ndarray
    keep: np.ndarray  # (grid*grid,) keep mask of the condition field


def token_coverage(pe: PEField) -> tuple[np.ndarray, np.ndarray]:
    """Map target cells to covering source tokens (nearest warped depth wins).

    Returns (owner, covered): owner[cell] is the kept token whose level-0
    projection lands in that cell with the smallest warped depth, -1 if none.
    """
    n = pe.n_tokens
    owner = np.full(n, -1, dtype=int)
    best_z = np.full(n, np.inf)
    x0 = pe.coords[:, 0, 0]
    y0 = pe.coords[:, 0, 1]
    z0 = pe.coords[:, 0, 2]
    ci = np.floor(x0).astype(int)
    cj = np.floor(y0).astype(int)
    for tok in range(n):
        if not pe.keep[tok]:
            continue
        if not (0 <= ci[tok] < pe.grid_w and 0 <= cj[tok] < pe.grid_h):
            continue
        cell = cj[tok] * pe.grid_w + ci[tok]
        if z0[tok] < best_z[cell]:
            best_z[cell] = z0[tok]
            owner[cell] = tok
    return owner, owner >= 0


def nvs(
    model: DiT,
    src: SceneFrame,
    rel: CameraPose,
    steps: int = 20,
    seed=0,
    sparse_noise: bool = False,
) -> NvsResult:
    """Warp the source tokens into the target view and sample the target image.

    sparse_noise switches to the sparse grid reading: noise tokens exist only
    at cells without a covering source token; covered cells of the output are
    filled with the covering token's source content.
    """
    config = model.config
    pe = build_pe_field(
        src.depth, src.intrinsics, rel, config.patch, config.head_map(), config.z_scale
    )
    cond = prepare_condition(src, rel, config)
    if not sparse_noise:
        return NvsResult(image=euler_sample(model, cond, steps, seed), keep=pe.keep)
    owner, covered = token_coverage(pe)
    noise_cells = np.nonzero(~covered)[0]
    src_patches = patchify(src.image, config.patch)
    patches = np.empty((config.grid * config.grid, config.patch_dim))
    patches[covered] = src_patches[owner[covered]]
    if noise_cells.size:
        patches[noise_cells] = euler_sample_patches(
            model, cond, steps, seed, noise_cells=noise_cells
        )
    image = np.clip(unpatchify(patches, config.grid, config.grid, config.patch), 0.0, 1.0)
    return NvsResult(image=image, keep=pe.keep)


def _warped_pixel_depth(depth: DepthMap, K, rel: CameraPose) -> np.ndarray:
    """Per-pixel depth after the rigid transform (aligned with source pixels)."""
    h, w = depth.values.shape
    px = (np.arange(w) + 0.5 - K.cx) / K.fx
    py = (np.arange(h) + 0.5 - K.cy) / K.fy
    gx, gy = np.meshgrid(px, py)
    z = np.where(depth.valid, depth.values, 1.0)
    pts = np.stack([gx * z, gy * z, z], axis=-1)
    return pts @ rel.r[2] + rel.t[2]


def multi_step_nvs(
    model: DiT,
    src: SceneFrame,
    rel: CameraPose,
    k: int,
    steps: int = 20,
    seed=0,
    fusion_depth: str = "extend",
    oracle_scene: Scene | None = None,
) -> np.ndarray:
    """Decompose a large viewpoint change into k progressive generations.

    Intermediate poses interpolate the relative pose (slerp rotation, linear
    translation). After each intermediate step the state is fused: covered
    cells keep warped source content (with transformed per-pixel depth),
    uncovered cells adopt generated content with depth from the configured
    rule ("extend" = nearest covered pixel, "oracle" = re-rendered GT depth).
    The final step's generation at the target pose is returned unfused.
    """
    if k < 1:
        raise ValueError(f"step count must be >= 1, got {k}")
    if fusion_depth not in ("extend", "oracle"):
        raise ValueError(f"unknown fusion_depth rule {fusion_depth!r}")
    if fusion_depth == "oracle" and oracle_scene is None:
        raise ValueError("oracle fusion depth needs the scene")
    config = model.config
    p = config.patch
    K = src.intrinsics
    poses = [interpolate_pose(rel, i / k) for i in range(k + 1)]
    state = src
    for i in range(1, k + 1):
        step_rel = poses[i].compose(poses[i - 1].inverse())
        generated = nvs(model, state, step_rel, steps=steps, seed=[seed, i]).image
        if i == k:
            return generated
        pe = build_pe_field(state.depth, K, step_rel, p, config.head_map(), config.z_scale)
        owner, covered = token_coverage(pe)
        src_patches = patchify(state.image, p)
        gen_patches = patchify(generated, p)
        fused_patches = np.where(covered[:, None], src_patches[owner], gen_patches)
        image = unpatchify(fused_patches, pe.grid_w, pe.grid_h, p)

        warped_z = _warped_pixel_depth(state.depth, K, step_rel)
        depth_patches = patchify(np.repeat(warped_z[..., None], 3, axis=-1), p)[..., ::3]
        new_depth = np.full((K.height, K.width), np.nan)
        covered_px = np.zeros((K.height, K.width), dtype=bool)
        for cell in np.nonzero(covered)[0]:
            cj, ci = divmod(cell, pe.grid_w)
            block = depth_patches[owner[cell]].reshape(p, p)
            new_depth[cj * p : (cj + 1) * p, ci * p : (ci + 1) * p] = block
            covered_px[cj * p : (cj + 1) * p, ci * p : (ci + 1) * p] = True
        if fusion_depth == "oracle":
            abs_pose = poses[i].compose(src.pose)
            new_depth = render(oracle_scene, K, abs_pose).depth.values
            valid = np.ones_like(new_depth, dtype=bool)
        elif covered_px.any():
            _, (iy, ix) = ndimage.distance_transform_edt(~covered_px, return_indices=True)
            new_depth = new_depth[iy, ix]
            valid = new_depth > 0
        else:
            new_depth = np.full_like(new_depth, float(np.median(state.depth.values)))
            valid = np.ones_like(new_depth, dtype=bool)
        valid &= np.isfinite(new_depth)
        state = SceneFrame(
            image=image,
            depth=DepthMap(values=np.where(valid, new_depth, np.nan), valid=valid),
            intrinsics=K,
            pose=poses[i].compose(state.pose) if state.pose is not None else None,
        )
    raise AssertionError("unreachable")


@dataclass
class ShuffleReport:
    image: np.ndarray
    permutation: np.ndarray
    n_moved: int
    majority_fraction: float  # moved patches closer to their permuted source patch
    identity_psnr: float  # only set for the identity permutation


def shuffle_demo(
    model: DiT, frame: SceneFrame, perm_seed: int, steps: int = 20, seed=0,
    identity: bool = False,
) -> ShuffleReport:
    """Permute condition-token positions (content untouched) at identity pose.

    Token i receives the full per-head coordinate row of token pi(i), so its
    base position moves and every level's coordinates are consistently those
    of the new location. The report quantifies whether output patches follow
    their tokens: for moved patches, MSE(output at pi(i), source i) should
    beat MSE(output at pi(i), source pi(i)).
    """
    config = model.config
    pe = build_pe_field(
        frame.depth, frame.intrinsics, CameraPose.identity(), config.patch,
        config.head_map(), config.z_scale,
    )
    n = pe.n_tokens
    if identity:
        perm = np.arange(n)
    else:
        perm = np.random.default_rng(perm_seed).permutation(n)
    shuffled = PEField(
        grid_w=pe.grid_w, grid_h=pe.grid_h, coords=pe.coords[perm], keep=pe.keep[perm]
    )
    from .flow import condition_from_field

    cond = condition_from_field(frame, shuffled, config)
    image = euler_sample(model, cond, steps, seed)
    out_patches = patchify(image, config.patch)
    src_patches = patchify(frame.image, config.patch)
    moved = np.nonzero(perm != np.arange(n))[0]
    wins = 0
    for i in moved:
        cell = perm[i]
        mse_follow = float(np.mean((out_patches[cell] - src_patches[i]) ** 2))
        mse_stay = float(np.mean((out_patches[cell] - src_patches[cell]) ** 2))
        if mse_follow < mse_stay:
            wins += 1
    majority = wins / len(moved) if len(moved) else math.nan
    identity_psnr = psnr(image, frame.image) if len(moved) == 0 else math.nan
    return ShuffleReport(
        image=image,
        permutation=perm,
        n_moved=int(len(moved)),
        majority_fraction=majority,
        identity_psnr=identity_psnr,
    )


def _mask_to_tokens(mask: np.ndarray, grid: int, p: int, threshold: float = 0.5) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (grid * p, grid * p):
        raise ValueError(f"mask shape {mask.shape} does not match image {grid * p}")
    frac = mask.reshape(grid, p, grid, p).mean(axis=(1, 3)).reshape(-1)
    return frac >= threshold


def edit_demo(
    model: DiT,
    frame: SceneFrame,
    mask: np.ndarray,
    mode: str,
    degrees: float = 0.0,
    steps: int = 20,
    seed=0,
) -> NvsResult:
    """Object-level editing at identity pose without task-specific training.

    rotate-object rigidly rotates only the masked tokens' positional
    coordinates about the object centroid's vertical axis; remove-object
    drops the masked tokens and lets noise refill the region.
    """
    if mode not in ("rotate-object", "remove-object"):
        raise ValueError(f"unknown edit mode {mode!r}")
    config = model.config
    K = frame.intrinsics
    head_map = config.head_map()
    identity = CameraPose.identity()
    pe = build_pe_field(frame.depth, K, identity, config.patch, head_map, config.z_scale)
    token_mask = _mask_to_tokens(mask, config.grid, config.patch)
    if mode == "remove-object":
        keep = pe.keep & ~token_mask
        merged = PEField(grid_w=pe.grid_w, grid_h=pe.grid_h, coords=pe.coords, keep=keep)
    else:
        mask_px = np.asarray(mask, dtype=bool) & frame.depth.valid
        if np.any(mask_px) and degrees != 0.0:
            ys, xs = np.nonzero(mask_px)
            z = frame.depth.values[ys, xs]
            pts = np.stack(
                [z * (xs + 0.5 - K.cx) / K.fx, z * (ys + 0.5 - K.cy) / K.fy, z], axis=-1
            )
            centroid = pts.mean(axis=0)
            theta = math.radians(degrees)
            c, s = math.cos(theta), math.sin(theta)
            r = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
            obj_pose = CameraPose(r, centroid - r @ centroid)
            rotated = build_pe_field(
                frame.depth, K, obj_pose, config.patch, head_map, config.z_scale
            )
            coords = np.where(token_mask[:, None, None], rotated.coords, pe.coords)
            keep = np.where(token_mask, rotated.keep, pe.keep)
            merged = PEField(grid_w=pe.grid_w, grid_h=pe.grid_h, coords=coords, keep=keep)
        else:
            merged = pe
    from .flow import condition_from_field

    cond = condition_from_field(frame, merged, config)
    return NvsResult(image=euler_sample(model, cond, steps, seed), keep=merged.keep)
