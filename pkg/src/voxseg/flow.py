"""Flow-matching pieces: linear interpolants, the velocity-matching loss,
Gaussian noise draws, and the fixed-step Euler sampler.

Time convention used everywhere in this package: t = 0 is data, t = 1 is
noise, so the interpolant is y_t = (1 - t) * y + t * eps and the target
velocity is (eps - y). Sampling integrates from t = 1 down to t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .codec import LatentGrid
from .errors import NonFiniteError, SupportMismatchError


@dataclass(frozen=True)
class LossConfig:
    """Timestep weighting: uniform, or piecewise-linear over (t, w) pairs."""

    weighting: str = "uniform"  # uniform | table
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.weighting not in ("uniform", "table"):
            raise ValueError("weighting must be 'uniform' or 'table'")
        if self.weighting == "table":
            if not self.table:
                raise ValueError("table weighting requires (t, w) pairs")
            if any(w < 0 for _, w in self.table):
                raise ValueError("weights must be non-negative")

    def weight(self, t: float) -> float:
        if self.weighting == "uniform":
            return 1.0
        pts = sorted(self.table)
        ts = np.array([p[0] for p in pts])
        ws = np.array([p[1] for p in pts])
        return float(np.interp(t, ts, ws))


def _check_support(a: LatentGrid, b: LatentGrid) -> None:
    if not a.same_support(b):
        raise SupportMismatchError("latent grids have different active cells")


def interpolate(y: LatentGrid, eps: LatentGrid, t: float) -> LatentGrid:
    """y_t = (1 - t) * y + t * eps, per cell and channel."""
    _check_support(y, eps)
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return y.with_latents((1.0 - t) * y.latents + t * eps.latents)


def velocity_target(y: LatentGrid, eps: LatentGrid) -> LatentGrid:
    """The constant velocity along the linear interpolant: eps - y."""
    _check_support(y, eps)
    return y.with_latents(eps.latents - y.latents)


def cfm_loss(
    v_hat: LatentGrid,
    y: LatentGrid,
    eps: LatentGrid,
    t: float,
    cfg: LossConfig | None = None,
) -> float:
    """w(t) times the mean squared error between v_hat and (eps - y)."""
    cfg = cfg or LossConfig()
    _check_support(v_hat, y)
    _check_support(v_hat, eps)
    diff = v_hat.latents.astype(np.float64) - (
        eps.latents.astype(np.float64) - y.latents.astype(np.float64)
    )
    value = cfg.weight(t) * float(np.mean(diff**2))
    if not np.isfinite(value):
        raise NonFiniteError("flow-matching loss is not finite")
    return value


def cfm_loss_tensor(
    v_hat: torch.Tensor, y: torch.Tensor, eps: torch.Tensor, t: float, cfg: LossConfig | None = None
) -> torch.Tensor:
    """Differentiable twin of cfm_loss for the training loop."""
    cfg = cfg or LossConfig()
    return cfg.weight(t) * ((v_hat - (eps - y)) ** 2).mean()


def sample_noise(
    coords: np.ndarray,
    d_lat: int,
    seed: int,
    resolution: int,
    stride: int = 1,
) -> LatentGrid:
    """I.i.d. standard-normal latent on the given support; deterministic per seed."""
    coords = np.ascontiguousarray(coords, dtype=np.int32)
    if coords.size == 0:
        raise ValueError("support must be non-empty")
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((coords.shape[0], d_lat), dtype=np.float32)
    return LatentGrid(resolution=resolution, stride=stride, coords=coords, latents=values)


def noise_like(latent: LatentGrid, seed: int) -> LatentGrid:
    return sample_noise(latent.coords, latent.d_lat, seed, latent.resolution, latent.stride)


def euler_sample(model, z: LatentGrid, cond, steps: int, seed: int) -> LatentGrid:
    """Integrate the learned velocity from noise (t=1) to data (t=0).

    `model` is anything exposing velocity(x, z, cond, t) -> LatentGrid, or a
    bare callable with that signature. Uniform steps: t_k = k / steps,
    x <- x - (1/steps) * v_hat(x, t_k) for k = steps .. 1.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    velocity = model.velocity if hasattr(model, "velocity") else model
    x = noise_like(z, seed)
    acc = x.latents.astype(np.float64)  # float64 accumulator over the steps
    dt = 1.0 / steps
    for k in range(steps, 0, -1):
        v = velocity(x, z, cond, k / steps)
        _check_support(v, x)
        acc -= dt * v.latents.astype(np.float64)
        x = x.with_latents(acc.astype(np.float32))
    return x
