"""Latent codec for voxel colors: identity pass-through or a small learned
autoencoder (stride-2 pooling + per-cell MLPs), trained once and then frozen.

Only color channels are encoded; occupancy is implicit in the coordinate set,
and geometry reaches the flow model through coordinates, not features.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from .checkpoint import params_checksum, read_container, write_container
from .errors import (
    ChannelMismatchError,
    CoordOutsideLatentSupportError,
    NonFiniteLossError,
)
from .grids import NUM_CHANNELS, SparseVoxelGrid, new_grid


@dataclass(frozen=True)
class LatentGrid:
    """Active latent cells with one d_lat vector each.

    resolution is the latent-cell resolution (source R / stride); coords are
    sorted lexicographically and aligned with latents.
    """

    resolution: int
    stride: int
    coords: np.ndarray  # (M, 3) int32
    latents: np.ndarray  # (M, d_lat) float32

    @property
    def num_cells(self) -> int:
        return self.coords.shape[0]

    @property
    def d_lat(self) -> int:
        return self.latents.shape[1]

    def same_support(self, other: "LatentGrid") -> bool:
        return (
            self.resolution == other.resolution
            and self.stride == other.stride
            and self.coords.shape == other.coords.shape
            and np.array_equal(self.coords, other.coords)
        )

    def with_latents(self, latents: np.ndarray) -> "LatentGrid":
        latents = np.ascontiguousarray(latents, dtype=np.float32)
        if latents.shape[0] != self.num_cells:
            raise ValueError("latent count must match cell count")
        return replace(self, latents=latents)


class ColorAutoencoder(nn.Module):
    """Per-cell MLP pair mapping pooled colors <-> latent vectors."""

    def __init__(self, d_lat: int = 8, hidden: int = 32):
        super().__init__()
        self.d_lat = d_lat
        self.encoder = nn.Sequential(
            nn.Linear(3, hidden), nn.SiLU(), nn.Linear(hidden, d_lat)
        )
        self.decoder = nn.Sequential(
            nn.Linear(d_lat, hidden), nn.SiLU(), nn.Linear(hidden, 3)
        )


@dataclass
class CodecParams:
    """Frozen-after-training codec parameters. mode is 'identity' or 'learned'."""

    mode: str
    d_lat: int
    stride: int
    frozen: bool
    hidden: int = 32
    module: ColorAutoencoder | None = None

    def parameters_flat(self) -> np.ndarray:
        if self.module is None:
            return np.zeros(0, dtype=np.float32)
        with torch.no_grad():
            return torch.cat(
                [p.detach().reshape(-1) for p in self.module.parameters()]
            ).numpy().astype(np.float32)

    def checksum(self) -> int:
        return params_checksum(self.parameters_flat())


def identity_codec() -> CodecParams:
    """Latents are exactly the per-voxel color channels (d_lat=3, stride=1)."""
    return CodecParams(mode="identity", d_lat=3, stride=1, frozen=True)


def _check_grid(grid: SparseVoxelGrid) -> None:
    if grid.features.shape[1] != NUM_CHANNELS:
        raise ChannelMismatchError(
            f"expected {NUM_CHANNELS}-channel grid, got {grid.features.shape[1]}"
        )


def _pool_cells(grid: SparseVoxelGrid, stride: int):
    """Unique stride-blocks (sorted) and mean-pooled colors per block."""
    cells = grid.coords // stride
    unique, inverse = np.unique(cells, axis=0, return_inverse=True)
    pooled = np.zeros((len(unique), 3), dtype=np.float64)
    np.add.at(pooled, inverse, grid.colors.astype(np.float64))
    counts = np.bincount(inverse, minlength=len(unique)).astype(np.float64)
    pooled /= counts[:, None]
    return unique.astype(np.int32), inverse, pooled.astype(np.float32)


def encode(params: CodecParams, grid: SparseVoxelGrid) -> LatentGrid:
    """Map a colored grid to its latent; deterministic given frozen params."""
    _check_grid(grid)
    if params.mode == "identity":
        return LatentGrid(
            resolution=grid.resolution,
            stride=1,
            coords=grid.coords.astype(np.int32),
            latents=np.ascontiguousarray(grid.colors, dtype=np.float32),
        )
    if grid.resolution % params.stride != 0:
        raise ValueError("learned codec requires resolution divisible by stride")
    cells, _, pooled = _pool_cells(grid, params.stride)
    with torch.no_grad():
        latents = params.module.encoder(torch.from_numpy(pooled)).numpy()
    return LatentGrid(
        resolution=grid.resolution // params.stride,
        stride=params.stride,
        coords=cells,
        latents=latents.astype(np.float32),
    )


def decode(params: CodecParams, latent: LatentGrid, target_coords) -> SparseVoxelGrid:
    """Reconstruct colors on the requested active voxels (geometry is given)."""
    target_coords = np.ascontiguousarray(target_coords, dtype=np.int64)
    cell_index = {tuple(c): i for i, c in enumerate(latent.coords.tolist())}
    cells = target_coords // latent.stride
    try:
        rows = np.array([cell_index[tuple(c)] for c in cells.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise CoordOutsideLatentSupportError(
            f"target voxel block {exc} has no active latent cell"
        ) from None
    if params.mode == "identity":
        colors = latent.latents[rows]
    else:
        with torch.no_grad():
            colors = params.module.decoder(torch.from_numpy(latent.latents[rows])).numpy()
    colors = np.clip(colors, -1.0, 1.0)
    feats = np.ones((len(target_coords), NUM_CHANNELS), dtype=np.float32)
    feats[:, 1:] = colors
    return new_grid(latent.resolution * latent.stride, target_coords, feats)


@dataclass(frozen=True)
class CodecTrainConfig:
    mode: str = "identity"
    d_lat: int = 8
    stride: int = 2
    hidden: int = 32
    learning_rate: float = 1e-2
    max_epochs: int = 500
    target_mse: float = 1e-3
    seed: int = 0


def train_codec(dataset: list[SparseVoxelGrid], config: CodecTrainConfig) -> CodecParams:
    """Fit the color autoencoder by plain reconstruction MSE, then freeze it.

    Identity mode returns immediately. Learned mode stops at max_epochs or once
    the epoch-mean per-voxel color MSE drops below target_mse.
    """
    if config.mode == "identity":
        return identity_codec()
    if config.mode != "learned":
        raise ValueError(f"unknown codec mode {config.mode!r}")
    if not dataset:
        raise ValueError("dataset must be non-empty")

    torch.manual_seed(config.seed)
    module = ColorAutoencoder(d_lat=config.d_lat, hidden=config.hidden)
    opt = torch.optim.Adam(module.parameters(), lr=config.learning_rate)

    prepared = []
    for grid in dataset:
        _check_grid(grid)
        if grid.resolution % config.stride != 0:
            raise ValueError("learned codec requires resolution divisible by stride")
        _, inverse, pooled = _pool_cells(grid, config.stride)
        prepared.append(
            (
                torch.from_numpy(pooled),
                torch.from_numpy(inverse.astype(np.int64)),
                torch.from_numpy(np.ascontiguousarray(grid.colors, dtype=np.float32)),
            )
        )

    for _ in range(config.max_epochs):
        total, voxels = 0.0, 0
        for pooled, inverse, colors in prepared:
            opt.zero_grad()
            decoded = module.decoder(module.encoder(pooled))[inverse]
            loss = ((decoded - colors) ** 2).mean()
            if not torch.isfinite(loss):
                raise NonFiniteLossError("codec training loss is not finite")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(colors)
            voxels += len(colors)
        if total / voxels < config.target_mse:
            break

    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return CodecParams(
        mode="learned",
        d_lat=config.d_lat,
        stride=config.stride,
        frozen=True,
        hidden=config.hidden,
        module=module,
    )


def reconstruction_mse(params: CodecParams, dataset: list[SparseVoxelGrid]) -> float:
    """Mean per-voxel color MSE of decode(encode(g)) over a dataset."""
    total, voxels = 0.0, 0
    for grid in dataset:
        recon = decode(params, encode(params, grid), grid.coords)
        total += float(((recon.colors - grid.colors) ** 2).mean()) * grid.num_voxels
        voxels += grid.num_voxels
    return total / voxels


# --- codec.ckpt -------------------------------------------------------------


def save_codec(params: CodecParams, path) -> None:
    header = {
        "kind": "codec",
        "mode": params.mode,
        "d_lat": params.d_lat,
        "stride": params.stride,
        "hidden": params.hidden,
    }
    write_container(path, header, params.parameters_flat())


def load_codec(path) -> CodecParams:
    header, flat = read_container(path)
    if header.get("kind") != "codec":
        raise ValueError("not a codec checkpoint")
    if header["mode"] == "identity":
        return identity_codec()
    module = ColorAutoencoder(d_lat=header["d_lat"], hidden=header["hidden"])
    offset = 0
    with torch.no_grad():
        for p in module.parameters():
            n = p.numel()
            p.copy_(torch.from_numpy(flat[offset : offset + n]).reshape(p.shape))
            offset += n
    if offset != flat.size:
        raise ValueError("parameter count mismatch in codec checkpoint")
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return CodecParams(
        mode="learned",
        d_lat=header["d_lat"],
        stride=header["stride"],
        frozen=True,
        hidden=header["hidden"],
        module=module,
    )
