"""Pinhole camera model and construction of warped positional-encoding fields.

A positional-encoding field assigns every token, per attention head, a
level-scaled (x, y, z) coordinate. Condition tokens get the projected
positions of their source sub-cells in the target camera (planar units of
level-l cells, depth in units of z_scale meters); noise tokens sit on the
regular grid with depth zero. Tokens whose patch-center projection leaves the
target image bounds are flagged for discarding via the keep mask.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .headmap import HeadLevelMap

Z_NEAR = 1e-4  # meters; guards the projective division

PE_FIELD_MAGIC = "PEF1"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    def with_size(self, width: int, height: int) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, width, height)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


@dataclass(frozen=True)
class CameraPose:
    """Rigid world-to-camera transform x_cam = r @ x_world + t."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"pose shapes must be (3,3)/(3,), got {r.shape}/{t.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal within 1e-9")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-9):
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "CameraPose":
        return CameraPose(self.r.T, -self.r.T @ self.t)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """self after other: x -> self.r @ (other.r @ x + other.t) + self.t."""
        return CameraPose(self.r @ other.r, self.r @ other.t + self.t)

    def to_dict(self) -> dict:
        return {"r": self.r.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.array(d["r"]), np.array(d["t"]))


def interpolate_pose(rel: CameraPose, s: float) -> CameraPose:
    """Fractional rigid transform: rotation slerped from identity, translation linear."""
    rotvec = Rotation.from_matrix(rel.r).as_rotvec()
    return CameraPose(Rotation.from_rotvec(s * rotvec).as_matrix(), s * rel.t)


@dataclass
class DepthMap:
    """Per-pixel optical-axis depth in meters with a validity mask."""

    values: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"depth must be 2D, got shape {self.values.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise ValueError("validity mask shape does not match depth shape")
        masked = self.values[self.valid]
        if masked.size and not (np.all(np.isfinite(masked)) and np.all(masked > 0)):
            raise ValueError("valid depths must be strictly positive and finite")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def unproject(pixel, depth, K: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates + optical-axis depth -> 3D point in camera coordinates."""
    px, py = pixel
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    return np.array(
        [depth * (px - K.cx) / K.fx, depth * (py - K.cy) / K.fy, depth], dtype=np.float64
    )


def transform_point(point, rel: CameraPose) -> np.ndarray:
    """Map a point from frame A into frame B given the pose of B relative to A."""
    return rel.r @ np.asarray(point, dtype=np.float64) + rel.t


def project(point, K: CameraIntrinsics, z_near: float = Z_NEAR):
    """3D camera point -> ((px, py), depth, in_front).

    Points at or behind z_near report in_front=False with a finite sentinel
    pixel (projection evaluated at z clamped to z_near); never raises.
    """
    x, y, z = np.asarray(point, dtype=np.float64)
    in_front = bool(z > z_near)
    z_safe = z if in_front else z_near
    px = K.fx * x / z_safe + K.cx
    py = K.fy * y / z_safe + K.cy
    return (px, py), float(z), in_front


@dataclass
class PEField:
    """Per-token, per-head positional coordinates plus the token keep mask.

    coords has shape (grid_w * grid_h, n_heads, 3); tokens are ordered
    row-major (token index = j * grid_w + i for cell (i, j)). Planar units are
    level-l cells, depth units are z_scale meters. Noise-token fields carry
    z = 0 everywhere.
    """

    grid_w: int
    grid_h: int
    coords: np.ndarray
    keep: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.keep = np.asarray(self.keep, dtype=bool)
        n = self.grid_w * self.grid_h
        if self.coords.ndim != 3 or self.coords.shape[0] != n or self.coords.shape[2] != 3:
            raise ValueError(f"coords shape {self.coords.shape} inconsistent with grid")
        if self.keep.shape != (n,):
            raise ValueError(f"keep shape {self.keep.shape} inconsistent with grid")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("positional coordinates must be finite")

    @property
    def n_tokens(self) -> int:
        return self.grid_w * self.grid_h

    @property
    def n_heads(self) -> int:
        return self.coords.shape[1]


def _subcell_pixel_centers(grid_w, grid_h, p, level, u, v):
    """Continuous pixel coordinates of sub-cell (u, v) centers for every patch."""
    cell = p / 2**level
    px = np.arange(grid_w, dtype=np.float64) * p + (u + 0.5) * cell
    py = np.arange(grid_h, dtype=np.float64) * p + (v + 0.5) * cell
    return np.meshgrid(px, py)  # each (grid_h, grid_w)


def _sample_depth(depth: DepthMap, px, py, p):
    """Depth at the pixel nearest each sample point, with an in-patch fallback.

    Invalid sample pixels fall back to the nearest valid pixel of the same
    patch; patches without any valid pixel get depth 1.0 and ok=False.
    """
    ix = np.clip(np.floor(px).astype(int), 0, depth.width - 1)
    iy = np.clip(np.floor(py).astype(int), 0, depth.height - 1)
    z = depth.values[iy, ix].copy()
    ok = depth.valid[iy, ix].copy()
    if not np.all(ok):
        for j, i in zip(*np.nonzero(~ok)):
            pi, pj = ix[j, i] // p, iy[j, i] // p
            block_v = depth.valid[pj * p : (pj + 1) * p, pi * p : (pi + 1) * p]
            vy, vx = np.nonzero(block_v)
            if vy.size == 0:
                z[j, i] = 1.0
                continue
            dist = (vx + pi * p - px[j, i] + 0.5) ** 2 + (vy + pj * p - py[j, i] + 0.5) ** 2
            k = int(np.argmin(dist))
            z[j, i] = depth.values[pj * p + vy[k], pi * p + vx[k]]
            ok[j, i] = True
    return z, ok


def build_pe_field(
    depth: DepthMap,
    K: CameraIntrinsics,
    rel: CameraPose,
    p: int,
    head_map: HeadLevelMap,
    z_scale: float,
    z_near: float = Z_NEAR,
) -> PEField:
    """Warped positional-encoding field for condition tokens.

    Every head's sub-cell center is unprojected with its sampled source depth,
    rigidly transformed by rel, and projected into the target camera; its
    coordinate is (px * 2^l / p, py * 2^l / p, z / z_scale). A token is kept
    iff its patch-center (head 1, level 0) projection lands in front of the
    camera and inside [0, width) x [0, height); a patch with no valid depth is
    dropped. Target image bounds are taken from K.
    """
    if z_scale <= 0:
        raise ValueError(f"z_scale must be positive, got {z_scale}")
    if K.width % p or K.height % p:
        raise ValueError(f"image size {K.width}x{K.height} not divisible by patch size {p}")
    if depth.width != K.width or depth.height != K.height:
        raise ValueError(
            f"depth map {depth.width}x{depth.height} does not match camera {K.width}x{K.height}"
        )
    grid_w, grid_h = K.width // p, K.height // p
    n_tokens = grid_w * grid_h
    coords = np.zeros((n_tokens, head_map.n_heads, 3), dtype=np.float64)
    keep = np.zeros(n_tokens, dtype=bool)

    cache: dict[tuple[int, int, int], np.ndarray] = {}
    for h_idx in range(head_map.n_heads):
        level = head_map.levels[h_idx]
        u, v = head_map.subcells[h_idx]
        key = (level, u, v)
        if key not in cache:
            px, py = _subcell_pixel_centers(grid_w, grid_h, p, level, u, v)
            z_src, ok = _sample_depth(depth, px, py, p)
            pts = np.stack(
                [
                    z_src * (px - K.cx) / K.fx,
                    z_src * (py - K.cy) / K.fy,
                    z_src,
                ],
                axis=-1,
            )
            pts = pts @ rel.r.T + rel.t
            z_tgt = pts[..., 2]
            in_front = z_tgt > z_near
            z_safe = np.where(in_front, z_tgt, z_near)
            tx = (K.fx * pts[..., 0] / z_safe + K.cx) * (2**level) / p
            ty = (K.fy * pts[..., 1] / z_safe + K.cy) * (2**level) / p
            cache[key] = np.stack([tx, ty, z_tgt / z_scale], axis=-1).reshape(n_tokens, 3)
            if key == (0, 0, 0):
                px0 = K.fx * pts[..., 0] / z_safe + K.cx
                py0 = K.fy * pts[..., 1] / z_safe + K.cy
                inside = (px0 >= 0) & (px0 < K.width) & (py0 >= 0) & (py0 < K.height)
                keep[:] = (in_front & inside & ok).reshape(n_tokens)
        coords[:, h_idx, :] = cache[key]
    return PEField(grid_w=grid_w, grid_h=grid_h, coords=coords, keep=keep)


def noise_grid_pe(grid_w: int, grid_h: int, p: int, head_map: HeadLevelMap) -> PEField:
    """Regular-grid positional-encoding field for noise tokens (depth zero).

    Cell (i, j) at a level-l head with sub-cell (u, v) gets coordinates
    (i * 2^l + u + 0.5, j * 2^l + v + 0.5, 0). p is accepted for interface
    symmetry with build_pe_field; level coordinates do not depend on it.
    """
    del p
    n_tokens = grid_w * grid_h
    coords = np.zeros((n_tokens, head_map.n_heads, 3), dtype=np.float64)
    i = np.tile(np.arange(grid_w, dtype=np.float64), grid_h)
    j = np.repeat(np.arange(grid_h, dtype=np.float64), grid_w)
    for h_idx in range(head_map.n_heads):
        level = head_map.levels[h_idx]
        u, v = head_map.subcells[h_idx]
        coords[:, h_idx, 0] = i * 2**level + u + 0.5
        coords[:, h_idx, 1] = j * 2**level + v + 0.5
    return PEField(grid_w=grid_w, grid_h=grid_h, coords=coords, keep=np.ones(n_tokens, dtype=bool))


def write_pe_field(field: PEField, path) -> None:
    """Debug export: UTF-8 header line then token-major float32 LE coordinate records."""
    header = f"{PE_FIELD_MAGIC} {field.grid_w} {field.grid_h} {field.n_heads}\n"
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(field.coords.astype("<f4").tobytes())


def read_pe_field(path) -> PEField:
    """Read a debug export. The format carries no keep mask; keep is all-true."""
    with open(path, "rb") as f:
        header = f.readline().decode("utf-8").split()
        if len(header) != 4 or header[0] != PE_FIELD_MAGIC:
            raise ValueError(f"not a {PE_FIELD_MAGIC} file: {path}")
        grid_w, grid_h, n_heads = (int(x) for x in header[1:])
        n = grid_w * grid_h
        raw = f.read(n * n_heads * 3 * 4)
        if len(raw) != n * n_heads * 3 * 4:
            raise ValueError(f"truncated {PE_FIELD_MAGIC} payload in {path}")
        coords = np.frombuffer(raw, dtype="<f4").reshape(n, n_heads, 3).astype(np.float64)
    return PEField(grid_w=grid_w, grid_h=grid_h, coords=coords, keep=np.ones(n, dtype=bool))
