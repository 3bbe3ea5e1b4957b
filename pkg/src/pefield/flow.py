"""Rectified-flow training and Euler sampling for the toy DiT.

The training path is the straight line z_t = (1-t) x_tgt + t eps with
constant target velocity (eps - x_tgt); the loss is the mean squared error of
the predicted velocity over all noise-token coordinates. Sampling integrates
dz/dt = v backwards from t=1 with a uniform Euler grid, which is exact for
constant-velocity fields at any step count.

All randomness (pair selection, timestep draws, noise, init) comes from numpy
generators so runs are reproducible end to end from a single integer seed.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from .geometry import CameraPose, build_pe_field, noise_grid_pe
from .model import DiT, DiTConfig, TokenSequence, patchify, rope_tables, save_checkpoint, unpatchify
from .scenes import SceneFrame


def interpolate(x_tgt, eps, t):
    """Linear path point (1-t)*x_tgt + t*eps; endpoints are exact."""
    if isinstance(t, torch.Tensor):
        t_vals = t.detach().cpu().numpy()
    else:
        t_vals = np.asarray(t)
    if np.any(t_vals < 0) or np.any(t_vals > 1):
        raise ValueError(f"t must lie in [0, 1], got {t_vals}")
    if isinstance(x_tgt, torch.Tensor):
        tt = t if isinstance(t, torch.Tensor) else torch.as_tensor(t, dtype=x_tgt.dtype)
        while tt.dim() < x_tgt.dim():
            tt = tt.unsqueeze(-1)
        return (1 - tt) * x_tgt + tt * eps
    return (1 - t_vals) * np.asarray(x_tgt) + t_vals * np.asarray(eps)


def sample_t(rng: np.random.Generator) -> float:
    """Uniform timestep in the open interval (0, 1)."""
    t = float(rng.uniform(0.0, 1.0))
    while t <= 0.0 or t >= 1.0:
        t = float(rng.uniform(0.0, 1.0))
    return t


@dataclass
class Condition:
    """Kept condition tokens of one source view with their rotation tables."""

    tokens: np.ndarray  # (Tc, 3p^2)
    cos: np.ndarray  # (n_heads, Tc, d_head/2)
    sin: np.ndarray
    keep: np.ndarray  # (T,) keep mask of the underlying full grid


@dataclass
class PreparedPair:
    """One training example: target patches plus the warped source condition."""

    x_tgt: np.ndarray  # (Tn, 3p^2)
    cond: Condition
    scene: int = -1
    pair: int = -1
    angle_deg: float = 0.0


@dataclass
class FlowBatch:
    """Assembled minibatch; shapes as in TokenSequence with noise-first layout."""

    x_tgt: torch.Tensor  # (B, Tn, 3p^2)
    eps: torch.Tensor
    t: torch.Tensor  # (B,)
    cond: torch.Tensor  # (B, Tc_max, 3p^2)
    cos: torch.Tensor  # (B, H, Tn+Tc_max, d_head/2)
    sin: torch.Tensor
    key_mask: torch.Tensor  # (B, Tn+Tc_max)


@lru_cache(maxsize=8)
def noise_tables(config: DiTConfig) -> tuple[np.ndarray, np.ndarray]:
    """Rotation tables of the regular noise grid (shared by every sample)."""
    field = noise_grid_pe(config.grid, config.grid, config.patch, config.head_map())
    return rope_tables(field, config)


def condition_from_field(frame: SceneFrame, pe, config: DiTConfig) -> Condition:
    """Condition tokens for a frame under an arbitrary positional field."""
    cos, sin = rope_tables(pe, config)
    keep = pe.keep
    tokens = patchify(frame.image, config.patch)[keep]
    return Condition(tokens=tokens, cos=cos[:, keep], sin=sin[:, keep], keep=keep)


def prepare_condition(frame: SceneFrame, rel: CameraPose, config: DiTConfig) -> Condition:
    """Warp a source frame's tokens into the target view and keep survivors."""
    pe = build_pe_field(
        frame.depth, frame.intrinsics, rel, config.patch, config.head_map(), config.z_scale
    )
    return condition_from_field(frame, pe, config)


def prepare_pair(
    src: SceneFrame, tgt: SceneFrame, rel: CameraPose, config: DiTConfig, **meta
) -> PreparedPair:
    return PreparedPair(
        x_tgt=patchify(tgt.image, config.patch), cond=prepare_condition(src, rel, config), **meta
    )


def assemble_sequence(
    noise_tokens: torch.Tensor,
    conds: list[Condition],
    config: DiTConfig,
    dtype: torch.dtype,
    noise_cos: np.ndarray | None = None,
    noise_sin: np.ndarray | None = None,
) -> TokenSequence:
    """Pad variable-length conditions to the batch max and stack the tables."""
    b, tn, dim = noise_tokens.shape
    if noise_cos is None:
        noise_cos, noise_sin = noise_tables(config)
    n_cos, n_sin = noise_cos, noise_sin
    h, _, half = n_cos.shape
    tc = max((c.tokens.shape[0] for c in conds), default=0)
    cond = torch.zeros(b, tc, dim, dtype=dtype)
    cos = torch.ones(b, h, tn + tc, half, dtype=dtype)
    sin = torch.zeros(b, h, tn + tc, half, dtype=dtype)
    mask = torch.zeros(b, tn + tc, dtype=torch.bool)
    mask[:, :tn] = True
    cos[:, :, :tn] = torch.as_tensor(n_cos, dtype=dtype)
    sin[:, :, :tn] = torch.as_tensor(n_sin, dtype=dtype)
    for i, c in enumerate(conds):
        k = c.tokens.shape[0]
        if k:
            cond[i, :k] = torch.as_tensor(c.tokens, dtype=dtype)
            cos[i, :, tn : tn + k] = torch.as_tensor(c.cos, dtype=dtype)
            sin[i, :, tn : tn + k] = torch.as_tensor(c.sin, dtype=dtype)
            mask[i, tn : tn + k] = True
    return TokenSequence(noise=noise_tokens, cond=cond, cos=cos, sin=sin, key_mask=mask)


def make_flow_batch(
    prepared: list[PreparedPair], rng: np.random.Generator, config: DiTConfig, dtype: torch.dtype
) -> FlowBatch:
    x_tgt = torch.as_tensor(np.stack([p.x_tgt for p in prepared]), dtype=dtype)
    eps = torch.as_tensor(rng.standard_normal(x_tgt.shape), dtype=dtype)
    t = torch.as_tensor([sample_t(rng) for _ in prepared], dtype=dtype)
    seq = assemble_sequence(x_tgt, [p.cond for p in prepared], config, dtype)
    return FlowBatch(
        x_tgt=x_tgt, eps=eps, t=t, cond=seq.cond, cos=seq.cos, sin=seq.sin, key_mask=seq.key_mask
    )


def flow_loss(model: DiT, batch: FlowBatch) -> torch.Tensor:
    """Mean squared velocity error over all noise-token coordinates."""
    z_t = interpolate(batch.x_tgt, batch.eps, batch.t)
    seq = TokenSequence(
        noise=z_t, cond=batch.cond, cos=batch.cos, sin=batch.sin, key_mask=batch.key_mask
    )
    v = model(seq, batch.t)
    if not torch.isfinite(v).all():
        raise FloatingPointError("velocity prediction is non-finite")
    return torch.mean((v - (batch.eps - batch.x_tgt)) ** 2)


def euler_sample_patches(
    model: DiT,
    cond: Condition,
    steps: int,
    seed,
    eps: np.ndarray | None = None,
    noise_cells: np.ndarray | None = None,
) -> np.ndarray:
    """Integrate the learned velocity field from noise; returns clean patches.

    noise_cells restricts the noise grid to a subset of cells (sparse grid
    reading); eps is always drawn for the full grid so a cell's noise does not
    depend on the subset choice.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    config = model.config
    tn = config.grid * config.grid
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal((tn, config.patch_dim))
    if eps.shape != (tn, config.patch_dim):
        raise ValueError(f"eps shape {eps.shape} does not match the noise grid")
    n_cos, n_sin = noise_tables(config)
    if noise_cells is not None:
        eps = eps[noise_cells]
        n_cos, n_sin = n_cos[:, noise_cells], n_sin[:, noise_cells]
    z = torch.as_tensor(eps, dtype=model.dtype).unsqueeze(0)
    seq_proto = assemble_sequence(
        z, [cond], config, model.dtype, noise_cos=n_cos, noise_sin=n_sin
    )
    dt = 1.0 / steps
    with torch.no_grad():
        for k in range(steps, 0, -1):
            t = torch.full((1,), k * dt, dtype=model.dtype)
            seq = TokenSequence(
                noise=z,
                cond=seq_proto.cond,
                cos=seq_proto.cos,
                sin=seq_proto.sin,
                key_mask=seq_proto.key_mask,
            )
            v = model(seq, t)
            z = z - dt * v
            if not torch.isfinite(z).all():
                raise FloatingPointError(f"sampler state became non-finite at step t={k * dt}")
    return np.clip(z.squeeze(0).double().numpy(), 0.0, 1.0)


def euler_sample(
    model: DiT, cond: Condition, steps: int, seed, eps: np.ndarray | None = None
) -> np.ndarray:
    """Full-grid sampling returned as an image in [0, 1]."""
    patches = euler_sample_patches(model, cond, steps, seed, eps=eps)
    config = model.config
    return unpatchify(patches, config.grid, config.grid, config.patch)


@dataclass
class OptimizerSettings:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.99)
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    batch_size: int = 8
    steps: int = 2000
    log_every: int = 25
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "betas": list(self.betas), "weight_decay": self.weight_decay,
            "grad_clip": self.grad_clip, "batch_size": self.batch_size, "steps": self.steps,
            "log_every": self.log_every, "checkpoint_every": self.checkpoint_every,
        }


@dataclass
class TrainResult:
    model: DiT
    losses: list[tuple[int, float]] = field(default_factory=list)
    checkpoint_path: Path | None = None


def write_loss_log(losses: list[tuple[int, float]], path) -> None:
    with open(path, "w") as f:
        for step, loss in losses:
            f.write(f"{step} {loss:.8e}\n")


def train_loop(
    config: DiTConfig,
    pairs: list[PreparedPair],
    opt: OptimizerSettings,
    seed: int,
    out_dir=None,
    init_model: DiT | None = None,
    progress: bool = False,
) -> TrainResult:
    """Adam training over randomly drawn pairs; deterministic from the seed."""
    if not pairs:
        raise ValueError("training needs at least one prepared pair")
    if init_model is not None:
        if init_model.config != config:
            raise ValueError("initial model config does not match training config")
        model = init_model
    else:
        model = DiT(config)
        model.init_parameters(seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=opt.lr, betas=opt.betas, weight_decay=opt.weight_decay
    )
    rng = np.random.default_rng(seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    losses: list[tuple[int, float]] = []
    for step in range(1, opt.steps + 1):
        idx = rng.integers(0, len(pairs), size=opt.batch_size)
        batch = make_flow_batch([pairs[i] for i in idx], rng, config, model.dtype)
        loss = flow_loss(model, batch)
        optimizer.zero_grad()
        loss.backward()
        if opt.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), opt.grad_clip)
        optimizer.step()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise FloatingPointError(f"training loss became non-finite at step {step}")
        if step == 1 or step % opt.log_every == 0 or step == opt.steps:
            losses.append((step, value))
            if progress:
                print(f"step {step} loss {value:.6f}", flush=True)
        if out is not None and opt.checkpoint_every and step % opt.checkpoint_every == 0:
            save_checkpoint(model, out / f"checkpoint_{step:06d}.ckpt")
    result = TrainResult(model=model, losses=losses)
    if out is not None:
        result.checkpoint_path = out / "checkpoint_final.ckpt"
        save_checkpoint(model, result.checkpoint_path)
        write_loss_log(losses, out / "loss_log.txt")
    return result
