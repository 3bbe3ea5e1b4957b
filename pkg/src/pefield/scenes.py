"""Procedural box-and-sphere scenes, a ray-cast renderer, and dataset files.

World coordinates follow the source camera convention: x right, y down,
z forward, with the reference camera at the origin looking along +z. Scenes
live inside a 4 m region in front of that camera. Rendering casts one ray per
pixel center with direction ((px-cx)/fx, (py-cy)/fy, 1), so the ray parameter
of a hit is directly the optical-axis depth; colors are Lambertian under a
fixed directional light, computed in double precision and quantized
round-half-up to 8-bit levels. Background pixels carry far-plane depth
(10 m, valid) so background tokens participate in warping.

Dataset layout: one subdirectory per scene holding frame_XX.ppm images,
frame_XX.depth rasters, and a manifest.json with the scene description,
camera, poses, and pose pairs; dataset.json at the root records generation
parameters and the depth normalization z_scale.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ppm
from .geometry import CameraIntrinsics, CameraPose, DepthMap

FAR_DEPTH = 10.0
AMBIENT = 0.25
LIGHT_DIR = np.array([-0.3, -0.8, -0.5]) / np.linalg.norm([-0.3, -0.8, -0.5])
MEDIAN_DEPTH_CELLS = 8.0  # median scene depth maps to this many depth cells


@dataclass(frozen=True)
class Primitive:
    kind: str  # "box" | "sphere"
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # box half-extents; spheres use size[0] as radius
    albedo: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": list(self.center),
            "size": list(self.size),
            "albedo": list(self.albedo),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(d["kind"], tuple(d["center"]), tuple(d["size"]), tuple(d["albedo"]))


@dataclass(frozen=True)
class Scene:
    primitives: tuple[Primitive, ...]
    background: tuple[float, float, float]
    seed: int

    def to_dict(self) -> dict:
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "background": list(self.background),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            tuple(Primitive.from_dict(p) for p in d["primitives"]),
            tuple(d["background"]),
            d["seed"],
        )


@dataclass
class SceneFrame:
    image: np.ndarray  # (H, W, 3) floats in [0, 1], 8-bit quantized
    depth: DepthMap
    intrinsics: CameraIntrinsics
    pose: CameraPose  # world-to-camera


@dataclass
class ScenePair:
    source: int  # frame indices within the scene record
    target: int
    rel: CameraPose  # target relative to source
    angle_deg: float


@dataclass
class SceneRecord:
    scene: Scene
    frames: list[SceneFrame]
    pairs: list[ScenePair]


@dataclass
class Dataset:
    records: list[SceneRecord]
    z_scale: float
    meta: dict


def generate_scene(seed: int) -> Scene:
    """Deterministic scene: 3-10 primitives inside the 4 m working region."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    prims = []
    for _ in range(n):
        kind = "sphere" if rng.random() < 0.5 else "box"
        center = (
            float(rng.uniform(-0.9, 0.9)),
            float(rng.uniform(-0.9, 0.9)),
            float(rng.uniform(1.6, 3.4)),
        )
        if kind == "sphere":
            r = float(rng.uniform(0.12, 0.35))
            size = (r, r, r)
        else:
            size = tuple(float(rng.uniform(0.10, 0.30)) for _ in range(3))
        albedo = tuple(float(rng.uniform(0.15, 0.95)) for _ in range(3))
        prims.append(Primitive(kind, center, size, albedo))
    background = tuple(float(rng.uniform(0.08, 0.35)) for _ in range(3))
    return Scene(primitives=tuple(prims), background=background, seed=seed)


def _intersect_sphere(origin, dirs, center, radius):
    oc = origin - center
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - 4 * a * c
    hit = disc >= 0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    s_near = (-b - sqrt_disc) / (2 * a)
    s_far = (-b + sqrt_disc) / (2 * a)
    s = np.where(s_near > 1e-9, s_near, s_far)
    s = np.where(hit & (s > 1e-9), s, np.inf)
    return s


def _intersect_box(origin, dirs, center, half):
    lo = center - half
    hi = center + half
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / dirs
        t2 = (hi - origin) / dirs
    # rays parallel to a slab: inside -> +/-inf bounds survive min/max, outside -> miss
    parallel = dirs == 0
    if np.any(parallel):
        inside = (origin >= lo) & (origin <= hi)
        t1 = np.where(parallel, np.where(inside, -np.inf, np.nan), t1)
        t2 = np.where(parallel, np.where(inside, np.inf, np.nan), t2)
    t_near = np.nanmax(np.minimum(t1, t2), axis=-1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (t_near <= t_far) & (t_far > 1e-9)
    s = np.where(t_near > 1e-9, t_near, t_far)
    return np.where(hit, s, np.inf)


def _box_normal(points, center, half):
    local = (points - center) / half
    axis = np.argmax(np.abs(local), axis=-1)
    normal = np.zeros_like(points)
    rows = np.arange(points.shape[0])
    normal[rows, axis] = np.sign(local[rows, axis])
    return normal


def render(scene: Scene, K: CameraIntrinsics, pose: CameraPose) -> SceneFrame:
    """Nearest-intersection ray cast with Lambertian shading and a z-buffer."""
    h, w = K.height, K.width
    xs = (np.arange(w) + 0.5 - K.cx) / K.fx
    ys = (np.arange(h) + 0.5 - K.cy) / K.fy
    gx, gy = np.meshgrid(xs, ys)
    dirs_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1).reshape(-1, 3)
    cam_to_world = pose.inverse()
    origin = cam_to_world.t
    dirs = dirs_cam @ cam_to_world.r.T

    depth = np.full(h * w, np.inf)
    winner = np.full(h * w, -1, dtype=int)
    for idx, prim in enumerate(scene.primitives):
        center = np.asarray(prim.center)
        if prim.kind == "sphere":
            s = _intersect_sphere(origin, dirs, center, prim.size[0])
        else:
            s = _intersect_box(origin, dirs, center, np.asarray(prim.size))
        closer = s < depth
        depth[closer] = s[closer]
        winner[closer] = idx

    color = np.empty((h * w, 3))
    color[:] = np.asarray(scene.background)
    for idx, prim in enumerate(scene.primitives):
        mask = winner == idx
        if not np.any(mask):
            continue
        points = origin + dirs[mask] * depth[mask, None]
        center = np.asarray(prim.center)
        if prim.kind == "sphere":
            normals = (points - center) / prim.size[0]
        else:
            normals = _box_normal(points, center, np.asarray(prim.size))
        lambert = np.maximum(0.0, normals @ LIGHT_DIR)
        shade = AMBIENT + (1.0 - AMBIENT) * lambert
        color[mask] = np.asarray(prim.albedo) * shade[:, None]

    depth = np.where(np.isfinite(depth), depth, FAR_DEPTH)
    # float32 storage precision so dataset round-trips are bit-exact
    depth = depth.astype(np.float32).astype(np.float64).reshape(h, w)
    image = ppm.quantize(color.reshape(h, w, 3))
    return SceneFrame(
        image=image,
        depth=DepthMap(values=depth, valid=np.ones((h, w), dtype=bool)),
        intrinsics=K,
        pose=pose,
    )


def _rot_y(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def orbit_pose(base: CameraPose, rotation_deg: float, orbit_radius: float) -> CameraPose:
    """Camera pose after orbiting about the vertical axis through the pivot
    at `orbit_radius` meters along the base camera's optical axis."""
    theta = math.radians(rotation_deg)
    cam_to_world = base.inverse()
    center = cam_to_world.t
    view_dir = cam_to_world.r[:, 2]
    pivot = center + orbit_radius * view_dir
    r_orbit = _rot_y(theta)
    new_center = pivot + r_orbit @ (center - pivot)
    new_axes = r_orbit @ cam_to_world.r
    r_wc = new_axes.T
    return CameraPose(r_wc, -r_wc @ new_center)


def make_pair(
    scene: Scene,
    K: CameraIntrinsics,
    base: CameraPose,
    rotation_deg: float,
    orbit_radius: float,
) -> tuple[SceneFrame, SceneFrame, CameraPose]:
    """Render a source/target frame pair under an orbit viewpoint change."""
    target_pose = orbit_pose(base, rotation_deg, orbit_radius)
    src = render(scene, K, base)
    tgt = render(scene, K, target_pose)
    rel = target_pose.compose(base.inverse())
    return src, tgt, rel


def default_intrinsics(image_size: int) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=float(image_size),
        fy=float(image_size),
        cx=image_size / 2.0,
        cy=image_size / 2.0,
        width=image_size,
        height=image_size,
    )


def render_dataset(
    n_scenes: int,
    pairs_per_scene: int,
    max_rotation_deg: float,
    seed: int,
    image_size: int = 64,
    orbit_radius: float = 2.5,
) -> Dataset:
    """Multi-view dataset: per scene, one source frame plus one target frame
    per pair, target angles drawn uniformly in [-max_rotation, max_rotation]."""
    K = default_intrinsics(image_size)
    base = CameraPose.identity()
    angle_rng = np.random.default_rng(seed)
    records = []
    depth_samples = []
    for s_idx in range(n_scenes):
        scene = generate_scene(seed * 100_000 + s_idx)
        src = render(scene, K, base)
        frames = [src]
        pairs = []
        for p_idx in range(pairs_per_scene):
            angle = float(angle_rng.uniform(-max_rotation_deg, max_rotation_deg))
            target_pose = orbit_pose(base, angle, orbit_radius)
            tgt = render(scene, K, target_pose)
            frames.append(tgt)
            rel = target_pose.compose(base.inverse())
            pairs.append(ScenePair(source=0, target=p_idx + 1, rel=rel, angle_deg=angle))
        depth_samples.append(np.stack([f.depth.values for f in frames]).ravel())
        records.append(SceneRecord(scene=scene, frames=frames, pairs=pairs))
    median_depth = float(np.median(np.concatenate(depth_samples)))
    meta = {
        "seed": seed,
        "n_scenes": n_scenes,
        "pairs_per_scene": pairs_per_scene,
        "max_rotation_deg": max_rotation_deg,
        "image_size": image_size,
        "orbit_radius": orbit_radius,
        "median_depth": median_depth,
    }
    return Dataset(records=records, z_scale=median_depth / MEDIAN_DEPTH_CELLS, meta=meta)


def dataset_write(dataset: Dataset, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    scene_dirs = []
    for s_idx, record in enumerate(dataset.records):
        name = f"scene_{s_idx:04d}"
        scene_dirs.append(name)
        sdir = root / name
        sdir.mkdir(exist_ok=True)
        frames = []
        for f_idx, frame in enumerate(record.frames):
            img_name = f"frame_{f_idx:02d}.ppm"
            depth_name = f"frame_{f_idx:02d}.depth"
            ppm.write_ppm(frame.image, sdir / img_name)
            ppm.write_depth(frame.depth, sdir / depth_name)
            frames.append(
                {"image": img_name, "depth": depth_name, "pose": frame.pose.to_dict()}
            )
        manifest = {
            "scene": record.scene.to_dict(),
            "camera": record.frames[0].intrinsics.to_dict(),
            "frames": frames,
            "pairs": [
                {
                    "source": p.source,
                    "target": p.target,
                    "rel": p.rel.to_dict(),
                    "angle_deg": p.angle_deg,
                }
                for p in record.pairs
            ],
        }
        (sdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    top = {"meta": dataset.meta, "z_scale": dataset.z_scale, "scenes": scene_dirs}
    (root / "dataset.json").write_text(json.dumps(top, indent=2, sort_keys=True))


def dataset_read(path) -> Dataset:
    root = Path(path)
    top = json.loads((root / "dataset.json").read_text())
    records = []
    for name in top["scenes"]:
        sdir = root / name
        manifest = json.loads((sdir / "manifest.json").read_text())
        K = CameraIntrinsics.from_dict(manifest["camera"])
        frames = []
        for f in manifest["frames"]:
            depth_path = sdir / f["depth"]
            if not depth_path.exists():
                raise FileNotFoundError(
                    f"manifest {sdir / 'manifest.json'} references missing depth file {depth_path}"
                )
            frames.append(
                SceneFrame(
                    image=ppm.read_ppm(sdir / f["image"]),
                    depth=ppm.read_depth(depth_path),
                    intrinsics=K,
                    pose=CameraPose.from_dict(f["pose"]),
                )
            )
        pairs = [
            ScenePair(
                source=p["source"],
                target=p["target"],
                rel=CameraPose.from_dict(p["rel"]),
                angle_deg=p["angle_deg"],
            )
            for p in manifest["pairs"]
        ]
        records.append(
            SceneRecord(scene=Scene.from_dict(manifest["scene"]), frames=frames, pairs=pairs)
        )
    return Dataset(records=records, z_scale=top["z_scale"], meta=top["meta"])
