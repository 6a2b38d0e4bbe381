"""Multi-task velocity transformer over sparse voxel latents.

One network serves all three segmentation tasks. Per forward pass it receives
the noisy color latent y_t and the geometry latent z (channel-concatenated per
cell and projected to voxel tokens), ten point-condition tokens (padded with
zero coordinates and zero features), a conditioning vector m = e_t + e_tau
driving adaptive layer-norm modulation in every block, and, for 2D-guided
full segmentation, a sequence of guidance-image patch tokens consumed through
cross-attention. Spatial structure enters attention through rotary position
encoding applied per coordinate axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .codec import LatentGrid
from .errors import (
    BadDimensionsError,
    CoordMismatchError,
    DimMismatchError,
    NonFiniteActivationError,
    TooManyPointsError,
    UnknownTaskError,
)
from .shapes import GuidanceMap

TASK_INTERACTIVE = 1
TASK_FULL = 2
TASK_GUIDED = 3
TASK_NAMES = {TASK_INTERACTIVE: "interactive", TASK_FULL: "full", TASK_GUIDED: "guided"}

MAX_POINTS = 10


@dataclass(frozen=True)
class PointPrompt:
    """Up to 10 normalized click coordinates in [0, 1]^3."""

    points: np.ndarray  # (m, 3) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] > MAX_POINTS:
            raise TooManyPointsError(f"{pts.shape[0]} points exceed the limit of {MAX_POINTS}")
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise ValueError("click coordinates must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]


EMPTY_PROMPT = PointPrompt(points=np.zeros((0, 3)))


@dataclass(frozen=True)
class TaskCondition:
    """Task index plus its payload: clicks, nothing, or a guidance map."""

    task: int
    prompt: PointPrompt | None = None
    guidance: GuidanceMap | None = None

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise UnknownTaskError(f"task index {self.task} not in {sorted(TASK_NAMES)}")
        if self.task == TASK_INTERACTIVE and self.prompt is None:
            raise ValueError("interactive task requires a PointPrompt")
        if self.task != TASK_INTERACTIVE and self.prompt is not None:
            raise ValueError("only the interactive task carries a PointPrompt")
        if self.task == TASK_GUIDED and self.guidance is None:
            raise ValueError("guided task requires a GuidanceMap")
        if self.task != TASK_GUIDED and self.guidance is not None:
            raise ValueError("only the guided task carries a GuidanceMap")


@dataclass
class PointTokens:
    """Fixed-length point-condition tokens: always exactly 10 entries.

    Valid tokens carry the click coordinate and a learned feature; padded
    tokens carry zero coordinates and zero features.
    """

    coords: torch.Tensor  # (10, 3)
    features: torch.Tensor  # (10, d_model)
    valid: torch.Tensor  # (10,) bool


@dataclass
class GuidanceTokens:
    """Embedded guidance patches plus the geometry needed to align them with
    voxel tokens: the patch grid dims and which coordinate axes the guidance
    view projects onto (image col = u_axis, image row = v_axis)."""

    tokens: torch.Tensor  # (grid_h * grid_w, d_model), row-major
    grid_h: int
    grid_w: int
    u_axis: int
    v_axis: int


def sinusoidal_encoding(pos: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    """Interleaved [sin, cos, sin, cos, ...] encoding over `dim` dimensions."""
    if dim % 2 != 0:
        raise ValueError("encoding dim must be even")
    half = dim // 2
    freqs = base ** (
        -torch.arange(half, dtype=pos.dtype, device=pos.device) * 2.0 / dim
    )
    ang = pos[..., None] * freqs
    return torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).flatten(-2)


def point_freq_encoding(u: torch.Tensor, octaves: int = 6) -> torch.Tensor:
    """NeRF-style per-axis encoding: sin/cos of (2^l * pi * u), axis-major."""
    scales = (2.0 ** torch.arange(octaves, dtype=u.dtype, device=u.device)) * math.pi
    ang = u[..., None] * scales  # (..., 3, L)
    enc = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)  # (..., 3, L, 2)
    return enc.flatten(-3)


def fuse_modulation(e_t: torch.Tensor, e_tau: torch.Tensor) -> torch.Tensor:
    """Additive fusion of timestep and task embeddings."""
    if e_t.shape != e_tau.shape:
        raise DimMismatchError(f"{tuple(e_t.shape)} vs {tuple(e_tau.shape)}")
    return e_t + e_tau


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale) + shift


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    blocks: int = 4
    heads: int = 4
    point_embed: str = "label"  # label | explicit
    patch_size: int = 8
    d_latent: int = 3
    d_freq: int = 32
    ffn_ratio: int = 4
    freq_octaves: int = 6
    rope_base: float = 10000.0
    mask_padded: bool = False
    time_scale: float = 1000.0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.d_model % 4 != 0:
            raise ValueError("d_model must be divisible by 4 (2D position halves)")
        if self.point_embed not in ("label", "explicit"):
            raise ValueError("point_embed must be 'label' or 'explicit'")


class RotaryAxes(nn.Module):
    """Per-axis rotary position encoding for multi-axis coordinates.

    The head dimension is split into `axes` equal even-sized groups, one per
    coordinate axis, each rotated by a standard 1D rotary scheme; leftover
    dimensions (when head_dim is not divisible by 2 * axes) pass through
    unrotated.
    """

    def __init__(self, head_dim: int, axes: int, base: float = 10000.0):
        super().__init__()
        group = (head_dim // axes) // 2 * 2
        if group == 0:
            raise ValueError(f"head_dim too small for {axes}-axis rotary encoding")
        self.head_dim = head_dim
        self.axes = axes
        self.group = group
        self.rot_dims = axes * group
        self.base = base

    def angles(self, coords: torch.Tensor, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
        """cos/sin tables of shape (T, axes * group / 2) from (T, axes) coords."""
        half = self.group // 2
        freqs = self.base ** (
            -torch.arange(half, dtype=dtype, device=coords.device) * 2.0 / self.group
        )
        ang = coords.to(dtype)[:, :, None] * freqs  # (T, axes, half)
        ang = ang.reshape(coords.shape[0], self.axes * half)
        return torch.cos(ang), torch.sin(ang)

    def rotate(self, x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
        """x: (heads, T, head_dim); cos/sin: (T, rot_dims // 2)."""
        h, t, _ = x.shape
        xr = x[..., : self.rot_dims].reshape(h, t, self.rot_dims // 2, 2)
        even, odd = xr[..., 0], xr[..., 1]
        out_even = even * cos - odd * sin
        out_odd = even * sin + odd * cos
        rotated = torch.stack([out_even, out_odd], dim=-1).reshape(h, t, self.rot_dims)
        if self.rot_dims == self.head_dim:
            return rotated
        return torch.cat([rotated, x[..., self.rot_dims :]], dim=-1)


class TransformerBlock(nn.Module):
    """Self-attention (rotary) + cross-attention to guidance + feedforward,
    each gated and shifted/scaled by the fused conditioning vector.

    Cross-attention aligns tokens with guidance patches through a 2D rotary
    scheme over projected image coordinates, mirroring the 3D rotary scheme
    used for self-attention."""

    def __init__(self, d_model: int, heads: int, ffn_ratio: int, rope_base: float):
        super().__init__()
        self.heads = heads
        self.head_dim = d_model // heads
        self.rope = RotaryAxes(self.head_dim, axes=3, base=rope_base)
        self.rope2d = RotaryAxes(self.head_dim, axes=2, base=rope_base)

        self.norm_sa = nn.LayerNorm(d_model, elementwise_affine=False)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj_sa = nn.Linear(d_model, d_model)

        self.norm_ca = nn.LayerNorm(d_model, elementwise_affine=False)
        self.q_ca = nn.Linear(d_model, d_model)
        self.kv_ca = nn.Linear(d_model, 2 * d_model)
        self.proj_ca = nn.Linear(d_model, d_model)

        self.norm_ff = nn.LayerNorm(d_model, elementwise_affine=False)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ffn_ratio * d_model),
            nn.GELU(),
            nn.Linear(ffn_ratio * d_model, d_model),
        )

        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(d_model, 9 * d_model))
        nn.init.zeros_(self.ada[1].weight)
        nn.init.zeros_(self.ada[1].bias)

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[0]
        return x.reshape(t, self.heads, self.head_dim).transpose(0, 1)

    def _merge(self, x: torch.Tensor) -> torch.Tensor:
        return x.transpose(0, 1).reshape(-1, self.heads * self.head_dim)

    def forward(
        self,
        x: torch.Tensor,  # (T, d_model)
        m: torch.Tensor,  # (d_model,)
        cos: torch.Tensor,
        sin: torch.Tensor,
        cross: tuple | None,  # (guidance tokens, q cos/sin, k cos/sin)
        attn_mask: torch.Tensor | None,
    ) -> torch.Tensor:
        (s_sa, g_sa, sh_sa, s_ca, g_ca, sh_ca, s_ff, g_ff, sh_ff) = self.ada(m).chunk(9)

        h = _modulate(self.norm_sa(x), sh_sa, s_sa)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = self.rope.rotate(self._heads(q), cos, sin)
        k = self.rope.rotate(self._heads(k), cos, sin)
        attn = F.scaled_dot_product_attention(q, k, self._heads(v), attn_mask=attn_mask)
        x = x + g_sa * self.proj_sa(self._merge(attn))

        if cross is not None:
            tokens, q_cos, q_sin, k_cos, k_sin = cross
            h = _modulate(self.norm_ca(x), sh_ca, s_ca)
            q = self.rope2d.rotate(self._heads(self.q_ca(h)), q_cos, q_sin)
            k, v = self.kv_ca(tokens).chunk(2, dim=-1)
            k = self.rope2d.rotate(self._heads(k), k_cos, k_sin)
            attn = F.scaled_dot_product_attention(q, k, self._heads(v))
            x = x + g_ca * self.proj_ca(self._merge(attn))

        h = _modulate(self.norm_ff(x), sh_ff, s_ff)
        x = x + g_ff * self.ff(h)
        return x


class VelocityTransformer(nn.Module):
    """The flow network: predicts the velocity on every active latent cell."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        d = cfg.d_model

        self.in_proj = nn.Linear(2 * cfg.d_latent, d)
        self.point_proj = nn.Linear(3 + d, d)
        self.e_p = nn.Parameter(torch.empty(d))
        nn.init.normal_(self.e_p, std=0.02)
        if cfg.point_embed == "explicit":
            self.freq_proj = nn.Linear(3 * 2 * cfg.freq_octaves, d)
        else:
            self.freq_proj = None

        self.time_mlp = nn.Sequential(nn.Linear(cfg.d_freq, d), nn.SiLU(), nn.Linear(d, d))
        self.task_mlp = nn.Sequential(nn.Linear(cfg.d_freq, d), nn.SiLU(), nn.Linear(d, d))
        self.guidance_proj = nn.Linear(cfg.patch_size * cfg.patch_size * 4, d)

        self.blocks = nn.ModuleList(
            TransformerBlock(d, cfg.heads, cfg.ffn_ratio, cfg.rope_base)
            for _ in range(cfg.blocks)
        )
        self.norm_out = nn.LayerNorm(d, elementwise_affine=False)
        self.ada_out = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * d))
        nn.init.zeros_(self.ada_out[1].weight)
        nn.init.zeros_(self.ada_out[1].bias)
        self.out_proj = nn.Linear(d, cfg.d_latent)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    # --- conditioning pieces -------------------------------------------------

    @property
    def dtype(self) -> torch.dtype:
        return self.e_p.dtype

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def timestep_embedding(self, t: float) -> torch.Tensor:
        pos = torch.tensor(self.config.time_scale * t, dtype=self.dtype)
        return self.time_mlp(sinusoidal_encoding(pos, self.config.d_freq))

    def task_embedding(self, task_index: int) -> torch.Tensor:
        if task_index not in TASK_NAMES:
            raise UnknownTaskError(f"task index {task_index} not in {sorted(TASK_NAMES)}")
        pos = torch.tensor(float(task_index), dtype=self.dtype)
        return self.task_mlp(sinusoidal_encoding(pos, self.config.d_freq))

    def build_point_tokens(self, prompt: PointPrompt | None) -> PointTokens:
        """Token features per the configured point-embedding mode, padded to 10."""
        if self.config.point_embed == "explicit":
            return self.explicit_coord_tokens(prompt)
        return self._tokens_from_features(prompt, lambda u: self.e_p.expand(u.shape[0], -1))

    def explicit_coord_tokens(self, prompt: PointPrompt | None) -> PointTokens:
        """Frequency-encoded coordinates fused with the shared semantic vector."""
        if self.freq_proj is None:
            raise ValueError("model was not built with point_embed='explicit'")
        return self._tokens_from_features(
            prompt,
            lambda u: self.freq_proj(point_freq_encoding(u, self.config.freq_octaves))
            + self.e_p,
        )

    def _tokens_from_features(self, prompt: PointPrompt | None, feature_fn) -> PointTokens:
        d = self.config.d_model
        prompt = prompt or EMPTY_PROMPT
        m = prompt.count
        coords = torch.zeros(MAX_POINTS, 3, dtype=self.dtype)
        features = torch.zeros(MAX_POINTS, d, dtype=self.dtype)
        valid = torch.zeros(MAX_POINTS, dtype=torch.bool)
        if m > 0:
            u = torch.from_numpy(prompt.points).to(self.dtype)
            coords[:m] = u
            features = torch.cat([feature_fn(u), features[m:]], dim=0)
            valid[:m] = True
        return PointTokens(coords=coords, features=features, valid=valid)

    def encode_guidance(self, gmap: GuidanceMap) -> GuidanceTokens:
        """Patchify the guidance image into embedded tokens with fixed 2D
        sinusoidal positions; token count = (W/p) * (H/p)."""
        p = self.config.patch_size
        if gmap.width % p != 0 or gmap.height % p != 0:
            raise BadDimensionsError(
                f"{gmap.width}x{gmap.height} map not divisible by patch size {p}"
            )
        gh, gw = gmap.height // p, gmap.width // p
        content = np.concatenate(
            [gmap.colors, gmap.background[..., None].astype(np.float32)], axis=-1
        )
        patches = (
            torch.from_numpy(content)
            .to(self.dtype)
            .reshape(gh, p, gw, p, 4)
            .permute(0, 2, 1, 3, 4)
            .reshape(gh * gw, p * p * 4)
        )
        tokens = self.guidance_proj(patches)
        d = self.config.d_model
        rows = torch.arange(gh, dtype=self.dtype).repeat_interleave(gw)
        cols = torch.arange(gw, dtype=self.dtype).repeat(gh)
        pos = torch.cat(
            [sinusoidal_encoding(rows, d // 2), sinusoidal_encoding(cols, d // 2)], dim=-1
        )
        depth_axis = "xyz".index(gmap.view[1])
        return GuidanceTokens(
            tokens=tokens + pos,
            grid_h=gh,
            grid_w=gw,
            u_axis=(depth_axis + 1) % 3,
            v_axis=(depth_axis + 2) % 3,
        )

    def condition_tensors(
        self, cond: TaskCondition
    ) -> tuple[PointTokens, GuidanceTokens | None]:
        """Point tokens (all-padded outside the interactive task) and guidance
        tokens (guided task only)."""
        prompt = cond.prompt if cond.task == TASK_INTERACTIVE else None
        tokens = self.build_point_tokens(prompt)
        guidance = None
        if cond.task == TASK_GUIDED:
            guidance = self.encode_guidance(cond.guidance)
        return tokens, guidance

    # --- main computation ------------------------------------------------------

    def forward(
        self,
        y_values: torch.Tensor,  # (N, d_latent) noisy color latent
        z_values: torch.Tensor,  # (N, d_latent) geometry/appearance latent
        coords: torch.Tensor,  # (N, 3) integer cell coordinates
        t: float,
        task: int,
        point_tokens: PointTokens,
        guidance: GuidanceTokens | None = None,
        latent_resolution: int | None = None,
    ) -> torch.Tensor:
        n = y_values.shape[0]
        if z_values.shape != y_values.shape:
            raise CoordMismatchError("y_t and z must share the same cells and channels")

        vox = self.in_proj(torch.cat([z_values, y_values], dim=-1))
        pts = self.point_proj(torch.cat([point_tokens.coords, point_tokens.features], dim=-1))
        x = torch.cat([vox, pts], dim=0)

        m = fuse_modulation(self.timestep_embedding(t), self.task_embedding(task))

        r_lat = latent_resolution or int(coords.max()) + 1
        q = (point_tokens.coords.detach() * r_lat).floor().long().clamp(0, r_lat - 1)
        q = torch.where(point_tokens.valid[:, None], q, torch.zeros_like(q))
        all_coords = torch.cat([coords.long(), q], dim=0)
        rope = self.blocks[0].rope
        cos, sin = rope.angles(all_coords, self.dtype)

        cross = None
        if guidance is not None:
            rope2d = self.blocks[0].rope2d
            # token and patch positions share latent-cell units so relative
            # rotary phases align projected voxels with their image patches
            q_pos = torch.stack(
                [all_coords[:, guidance.v_axis], all_coords[:, guidance.u_axis]], dim=1
            ).to(self.dtype) + 0.5
            prow = torch.arange(guidance.grid_h, dtype=self.dtype).repeat_interleave(
                guidance.grid_w
            )
            pcol = torch.arange(guidance.grid_w, dtype=self.dtype).repeat(guidance.grid_h)
            k_pos = torch.stack(
                [
                    (prow + 0.5) * (r_lat / guidance.grid_h),
                    (pcol + 0.5) * (r_lat / guidance.grid_w),
                ],
                dim=1,
            )
            cross = (
                guidance.tokens,
                *rope2d.angles(q_pos, self.dtype),
                *rope2d.angles(k_pos, self.dtype),
            )

        attn_mask = None
        if self.config.mask_padded:
            keep = torch.cat(
                [torch.ones(n, dtype=torch.bool), point_tokens.valid], dim=0
            )
            attn_mask = keep[None, :].expand(x.shape[0], -1)

        for block in self.blocks:
            x = block(x, m, cos, sin, cross, attn_mask)

        shift, scale = self.ada_out(m).chunk(2)
        x = _modulate(self.norm_out(x), shift, scale)
        return self.out_proj(x[:n])

    # --- numpy-facing entry point ----------------------------------------------

    def velocity(self, y_t: LatentGrid, z: LatentGrid, cond: TaskCondition, t: float) -> LatentGrid:
        return predict_velocity(self, y_t, z, cond, t)


def predict_velocity(
    model: VelocityTransformer,
    y_t: LatentGrid,
    z: LatentGrid,
    cond: TaskCondition,
    t: float,
) -> LatentGrid:
    """Evaluate the velocity field on a latent grid (inference path).

    The noisy latent and the geometry latent must share their active-cell set;
    the output lives on the same cells.
    """
    if not y_t.same_support(z):
        raise CoordMismatchError("y_t and z must have identical active cells")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    tokens, guidance = model.condition_tensors(cond)
    with torch.inference_mode():
        out = model(
            torch.from_numpy(y_t.latents).to(model.dtype),
            torch.from_numpy(z.latents).to(model.dtype),
            torch.from_numpy(y_t.coords.astype(np.int64)),
            t,
            cond.task,
            tokens,
            guidance,
            latent_resolution=z.resolution,
        )
    if not torch.isfinite(out).all():
        raise NonFiniteActivationError("velocity field produced non-finite values")
    return y_t.with_latents(out.to(torch.float32).numpy())


# --- parameter (de)serialization -------------------------------------------------


def parameters_flat(model: VelocityTransformer) -> np.ndarray:
    with torch.no_grad():
        return (
            torch.cat([p.detach().reshape(-1) for p in model.parameters()])
            .to(torch.float32)
            .numpy()
            .copy()
        )


def load_parameters_flat(model: VelocityTransformer, flat: np.ndarray) -> None:
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            n = p.numel()
            if offset + n > flat.size:
                raise ValueError("parameter count mismatch")
            p.copy_(torch.from_numpy(flat[offset : offset + n]).reshape(p.shape))
            offset += n
    if offset != flat.size:
        raise ValueError("parameter count mismatch")


def randomize_parameters(model: VelocityTransformer, seed: int, scale: float = 0.25) -> None:
    """Re-draw every parameter uniformly; used to put the network at a generic
    point before finite-difference gradient verification."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.uniform_(-scale, scale, generator=gen)
