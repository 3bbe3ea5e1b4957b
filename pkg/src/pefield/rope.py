"""Rotary positional encoding over one, two, or three coordinate axes.

A position rotates consecutive pairs (s_0, s_1), (s_2, s_3), ... of a vector
segment by angles theta_i = position * freq_base**(-2*i/len(segment)). For the
3D form, disjoint segments of each head vector are rotated by the x, y, and z
coordinates respectively and concatenated in x||y||z order. Inner products of
rotated query/key pairs then depend only on coordinate differences.

Reference implementations here are numpy float64; the transformer applies the
same rotation in torch from cos/sin tables produced by `pair_angles`.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_FREQ_BASE = 10000.0


@dataclass(frozen=True)
class RopeAxisSplit:
    """Widths of the per-axis segments of a head vector (dx + dy + dz = d_h)."""

    d_head: int
    dx: int
    dy: int
    dz: int

    def __post_init__(self):
        if self.dx + self.dy + self.dz != self.d_head:
            raise ValueError(
                f"segments ({self.dx},{self.dy},{self.dz}) do not sum to d_head={self.d_head}"
            )
        for name, w in (("dx", self.dx), ("dy", self.dy), ("dz", self.dz)):
            if w < 0 or w % 2 != 0:
                raise ValueError(f"{name}={w} must be even and non-negative")

    @property
    def depth_aware(self) -> bool:
        return self.dz > 0

    def to_dict(self) -> dict:
        return {"d_head": self.d_head, "dx": self.dx, "dy": self.dy, "dz": self.dz}

    @classmethod
    def from_dict(cls, d: dict) -> "RopeAxisSplit":
        return cls(d["d_head"], d["dx"], d["dy"], d["dz"])


def axis_split(d_head: int, depth_aware: bool) -> RopeAxisSplit:
    """Partition a head dimension into (dx, dy, dz) segment widths.

    Depth-aware: equal thirds rounded down to even, remainder to z.
    Planar: even halves, remainder (when d_head/2 is odd) to y.
    """
    if d_head % 2 != 0 or d_head <= 0:
        raise ValueError(f"d_head must be positive and even, got {d_head}")
    if depth_aware:
        if d_head < 6:
            raise ValueError(f"depth-aware split needs d_head >= 6, got {d_head}")
        dx = 2 * (d_head // 6)
        return RopeAxisSplit(d_head, dx, dx, d_head - 2 * dx)
    dx = 2 * (d_head // 4)
    return RopeAxisSplit(d_head, dx, d_head - dx, 0)


def rope_frequencies(seg_len: int, freq_base: float = DEFAULT_FREQ_BASE) -> np.ndarray:
    """Per-pair frequencies freq_base**(-2*i/seg_len), i = 0..seg_len/2-1."""
    if seg_len % 2 != 0 or seg_len < 0:
        raise ValueError(f"segment length must be even and >= 0, got {seg_len}")
    i = np.arange(seg_len // 2, dtype=np.float64)
    return np.asarray(freq_base, dtype=np.float64) ** (-2.0 * i / max(seg_len, 1))


def rope_rotate(segment, position: float, freq_base: float = DEFAULT_FREQ_BASE) -> np.ndarray:
    """Rotate pairs of an even-length vector by position-proportional angles."""
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim != 1 or seg.shape[0] % 2 != 0:
        raise ValueError(f"segment must be a 1D even-length vector, got shape {seg.shape}")
    if not freq_base > 1.0:
        raise ValueError(f"freq_base must be > 1, got {freq_base}")
    theta = position * rope_frequencies(seg.shape[0], freq_base)
    cos, sin = np.cos(theta), np.sin(theta)
    pairs = seg.reshape(-1, 2)
    out = np.empty_like(pairs)
    out[:, 0] = pairs[:, 0] * cos - pairs[:, 1] * sin
    out[:, 1] = pairs[:, 0] * sin + pairs[:, 1] * cos
    return out.reshape(-1)


def apply_rope3d(
    q_head,
    k_head,
    pe_q,
    pe_k,
    split: RopeAxisSplit,
    freq_base: float = DEFAULT_FREQ_BASE,
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate the x/y/z segments of one query and one key head vector.

    pe_q and pe_k are (x, y, z) coordinate triples. Segments of width
    (dx, dy, dz) are rotated by the matching coordinate and re-concatenated.
    """
    q = np.asarray(q_head, dtype=np.float64)
    k = np.asarray(k_head, dtype=np.float64)
    if q.shape != (split.d_head,) or k.shape != (split.d_head,):
        raise ValueError(
            f"q/k shapes {q.shape}/{k.shape} do not match d_head={split.d_head}"
        )

    def rotate(vec, coords):
        parts = []
        offset = 0
        for width, pos in zip((split.dx, split.dy, split.dz), coords):
            if width:
                parts.append(rope_rotate(vec[offset : offset + width], float(pos), freq_base))
            offset += width
        return np.concatenate(parts) if parts else vec.copy()

    return rotate(q, tuple(pe_q)), rotate(k, tuple(pe_k))


def pair_angles(
    coords: np.ndarray,
    split: RopeAxisSplit,
    freq_base: float = DEFAULT_FREQ_BASE,
) -> np.ndarray:
    """Rotation angles for every pair of every head vector, axis-blocked.

    coords: (..., 3) array of (x, y, z) positions. Returns (..., d_head/2)
    angles laid out as [dx/2 x-pairs | dy/2 y-pairs | dz/2 z-pairs], matching
    the pair structure that `rope_rotate` applies within each segment.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != 3:
        raise ValueError(f"coords must have a trailing axis of 3, got {coords.shape}")
    blocks = []
    for axis, width in enumerate((split.dx, split.dy, split.dz)):
        if width:
            freqs = rope_frequencies(width, freq_base)
            blocks.append(coords[..., axis, None] * freqs)
    if not blocks:
        return np.zeros(coords.shape[:-1] + (0,), dtype=np.float64)
    return np.concatenate(blocks, axis=-1)
