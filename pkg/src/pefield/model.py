"""Toy pixel-space diffusion transformer with per-head 3D rotary attention.

The model denoises a joint sequence of noise tokens and condition tokens
(patch-embedded source view with warped positional coordinates). Every
attention head rotates its query/key segments by that head's own (x, y, z)
coordinates, so hierarchical sub-cell heads see positions at their level's
resolution and depth-aware segments see the normalized depth axis. Timestep
conditioning is adaLN-style (shift/scale/gate per sub-block, zero-initialized
so blocks start as identities); output projections start at zero.

Checkpoint format "PEFDIT1": one UTF-8 header line carrying the config, head
map, and parameter manifest as JSON, followed by raw little-endian float32
parameter blocks in declaration order.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .geometry import PEField
from .headmap import HeadLevelMap
from .rope import RopeAxisSplit, axis_split, pair_angles

CHECKPOINT_MAGIC = "PEFDIT1"
TIME_EMBED_DIM = 256
TIME_FREQ_SCALE = 1000.0  # t in [0,1] is scaled so high-frequency dims participate


@dataclass(frozen=True)
class DiTConfig:
    image_size: int = 64
    patch: int = 8
    d_model: int = 288
    n_heads: int = 24
    n_blocks: int = 4
    mlp_ratio: int = 4
    depth_aware: bool = True
    multilevel: bool = True
    freq_base: float = 10000.0
    z_scale: float = 1.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.image_size % self.patch:
            raise ValueError(f"image size {self.image_size} not divisible by patch {self.patch}")
        if self.z_scale <= 0:
            raise ValueError(f"z_scale must be positive, got {self.z_scale}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch * self.patch

    def head_map(self) -> HeadLevelMap:
        if self.multilevel:
            return HeadLevelMap.build(self.n_heads)
        return HeadLevelMap.flat(self.n_heads)

    def split(self) -> RopeAxisSplit:
        return axis_split(self.d_head, self.depth_aware)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiTConfig":
        return cls(**d)


def patchify(image: np.ndarray, p: int) -> np.ndarray:
    """(H, W, 3) image -> (grid_h*grid_w, 3*p*p) row-major flattened patches."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    blocks = img.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gh * gw, 3 * p * p)


def unpatchify(patches: np.ndarray, grid_w: int, grid_h: int, p: int) -> np.ndarray:
    """Exact inverse of patchify."""
    patches = np.asarray(patches)
    if patches.shape != (grid_w * grid_h, 3 * p * p):
        raise ValueError(f"patch array shape {patches.shape} inconsistent with grid")
    blocks = patches.reshape(grid_h, grid_w, p, p, 3).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(grid_h * p, grid_w * p, 3)


def rope_tables(field: PEField, config: DiTConfig) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin rotation tables (n_heads, n_tokens, d_head/2) for a PE field."""
    angles = pair_angles(field.coords, config.split(), config.freq_base)  # (T, H, half)
    angles = np.transpose(angles, (1, 0, 2))
    return np.cos(angles), np.sin(angles)


@dataclass
class TokenSequence:
    """Batched joint sequence: noise tokens first, then (padded) condition tokens.

    cos/sin are per-head pair-rotation tables across the whole sequence;
    key_mask marks real tokens (padding is masked out of attention keys).
    The condition count per sample equals its PE field's keep count.
    """

    noise: torch.Tensor  # (B, Tn, 3p^2)
    cond: torch.Tensor  # (B, Tc_max, 3p^2)
    cos: torch.Tensor  # (B, H, Tn+Tc_max, d_head/2)
    sin: torch.Tensor
    key_mask: torch.Tensor  # (B, Tn+Tc_max) bool, True = real

    @property
    def n_noise(self) -> int:
        return self.noise.shape[1]


def _rotate_pairs(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    xp = x.unflatten(-1, (-1, 2))
    x0, x1 = xp[..., 0], xp[..., 1]
    return torch.stack([x0 * cos - x1 * sin, x0 * sin + x1 * cos], dim=-1).flatten(-2)


def timestep_embedding(t: torch.Tensor, dim: int = TIME_EMBED_DIM) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = TIME_FREQ_SCALE * t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class DiTBlock(nn.Module):
    def __init__(self, d: int, n_heads: int, mlp_ratio: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False)
        self.modulation = nn.Linear(d, 6 * d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.mlp = nn.Sequential(
            nn.Linear(d, mlp_ratio * d), nn.GELU(), nn.Linear(mlp_ratio * d, d)
        )

    def forward(self, x, t_emb, cos, sin, attn_bias):
        b, t, d = x.shape
        sh_a, sc_a, g_a, sh_m, sc_m, g_m = self.modulation(nn.functional.silu(t_emb)).chunk(
            6, dim=-1
        )
        h = _modulate(self.norm1(x), sh_a, sc_a)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = q.view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        k = k.view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        v = v.view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        q = _rotate_pairs(q, cos, sin)
        k = _rotate_pairs(k, cos, sin)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if attn_bias is not None:
            logits = logits + attn_bias
        att = torch.softmax(logits, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, t, d)
        x = x + g_a.unsqueeze(1) * self.proj(out)
        h = _modulate(self.norm2(x), sh_m, sc_m)
        x = x + g_m.unsqueeze(1) * self.mlp(h)
        return x


class DiT(nn.Module):
    """Velocity predictor over the joint noise + condition token sequence."""

    def __init__(self, config: DiTConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.head_map = config.head_map()
        self.axis_split = config.split()
        d = config.d_model
        self.patch_embed = nn.Linear(config.patch_dim, d)
        self.time_mlp = nn.Sequential(
            nn.Linear(TIME_EMBED_DIM, d), nn.SiLU(), nn.Linear(d, d)
        )
        self.blocks = nn.ModuleList(
            DiTBlock(d, config.n_heads, config.mlp_ratio) for _ in range(config.n_blocks)
        )
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False)
        self.final_modulation = nn.Linear(d, 2 * d)
        self.final_proj = nn.Linear(d, config.patch_dim)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.patch_embed.weight.dtype

    def init_parameters(self, seed: int) -> None:
        """Deterministic init from a numpy generator: N(0, 0.02^2) weights,
        zero biases, zero output projections and modulation layers."""
        rng = np.random.default_rng(seed)
        for name, param in self.named_parameters():
            zero = (
                name.endswith("bias")
                or name.endswith("modulation.weight")  # adaLN gates start closed
                or name.endswith("proj.weight")  # attention + final output projections
            )
            if zero:
                with torch.no_grad():
                    param.zero_()
            else:
                values = rng.normal(0.0, 0.02, size=tuple(param.shape))
                with torch.no_grad():
                    param.copy_(torch.from_numpy(values).to(param.dtype))

    def randomize_parameters(self, seed: int, std: float = 0.02) -> None:
        """All-normal init (no zeros); used by gradient and equivariance tests."""
        rng = np.random.default_rng(seed)
        for _, param in self.named_parameters():
            values = rng.normal(0.0, std, size=tuple(param.shape))
            with torch.no_grad():
                param.copy_(torch.from_numpy(values).to(param.dtype))

    def forward(self, seq: TokenSequence, t: torch.Tensor) -> torch.Tensor:
        """Velocity prediction for the noise tokens, (B, Tn, 3p^2)."""
        tn = seq.n_noise
        tokens = torch.cat([seq.noise, seq.cond], dim=1).to(self.dtype)
        x = self.patch_embed(tokens)
        t_emb = self.time_mlp(timestep_embedding(t.to(self.dtype)))
        attn_bias = None
        if seq.key_mask is not None and not bool(seq.key_mask.all()):
            neg = torch.finfo(self.dtype).min / 2  # softmax weight underflows to exactly 0
            attn_bias = torch.where(seq.key_mask, 0.0, neg).to(self.dtype)
            attn_bias = attn_bias[:, None, None, :]
        cos = seq.cos.to(self.dtype)
        sin = seq.sin.to(self.dtype)
        for block in self.blocks:
            x = block(x, t_emb, cos, sin, attn_bias)
        sh, sc = self.final_modulation(nn.functional.silu(t_emb)).chunk(2, dim=-1)
        x = _modulate(self.final_norm(x[:, :tn]), sh, sc)
        return self.final_proj(x)


def param_count(config: DiTConfig) -> int:
    """Closed-form parameter count for a DiTConfig.

    patch embed (3p^2+1)d + time MLP (256+1)d + (d+1)d
    + per block: modulation (d+1)6d + qkv (d+1)3d + proj (d+1)d
                 + MLP (d+1)md + (md+1)d
    + final modulation (d+1)2d + final proj (d+1)3p^2
    """
    d, m, pd = config.d_model, config.mlp_ratio, config.patch_dim
    per_block = (d + 1) * 6 * d + (d + 1) * 3 * d + (d + 1) * d + (d + 1) * m * d + (m * d + 1) * d
    return (
        (pd + 1) * d
        + (TIME_EMBED_DIM + 1) * d
        + (d + 1) * d
        + config.n_blocks * per_block
        + (d + 1) * 2 * d
        + (d + 1) * pd
    )


def save_checkpoint(model: DiT, path) -> None:
    manifest = [
        {"name": name, "shape": list(param.shape)} for name, param in model.named_parameters()
    ]
    header = {
        "config": model.config.to_dict(),
        "head_map": model.head_map.to_dict(),
        "params": manifest,
    }
    with open(path, "wb") as f:
        f.write(f"{CHECKPOINT_MAGIC} ".encode("utf-8"))
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for _, param in model.named_parameters():
            f.write(param.detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path, dtype: torch.dtype = torch.float32) -> DiT:
    with open(path, "rb") as f:
        line = f.readline().decode("utf-8")
        if not line.startswith(CHECKPOINT_MAGIC + " "):
            raise ValueError(f"not a {CHECKPOINT_MAGIC} checkpoint: {path}")
        header = json.loads(line[len(CHECKPOINT_MAGIC) + 1 :])
        config = DiTConfig.from_dict(header["config"])
        model = DiT(config, dtype=dtype)
        expected = [
            {"name": name, "shape": list(p.shape)} for name, p in model.named_parameters()
        ]
        if expected != header["params"]:
            raise ValueError(f"checkpoint parameter manifest does not match model: {path}")
        for _, param in model.named_parameters():
            n = param.numel() * 4
            raw = f.read(n)
            if len(raw) != n:
                raise ValueError(f"truncated checkpoint payload in {path}")
            values = np.frombuffer(raw, dtype="<f4").reshape(tuple(param.shape))
            with torch.no_grad():
                param.copy_(torch.from_numpy(values.copy()).to(dtype))
    loaded_map = HeadLevelMap.from_dict(header["head_map"])
    if loaded_map != model.head_map:
        raise ValueError(f"checkpoint head map does not match config: {path}")
    return model
