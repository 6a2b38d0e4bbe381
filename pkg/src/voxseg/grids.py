"""Sparse voxel grids, part labelings, color palettes, and their binary file format.

Conventions shared by the whole package:

* A grid of resolution R covers the unit cube; voxel (i, j, k) has its center
  at ((i + 0.5) / R, (j + 0.5) / R, (k + 0.5) / R).
* Active-voxel coordinates are stored in lexicographic order; this is the one
  canonical order used by losses, metrics, and serialization.
* Features are one row per voxel: channel 0 is a constant occupancy of 1.0,
  channels 1..3 are RGB colors in [-1, +1] (white = (+1,+1,+1), black =
  (-1,-1,-1)).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    ChannelRangeError,
    CorruptPayloadError,
    DuplicateVoxelError,
    EmptyGridError,
    FormatVersionError,
    OutOfBoundsError,
    PaletteInfeasibleError,
)

NUM_CHANNELS = 4  # occupancy + rgb
COLOR_SLICE = slice(1, 4)

WHITE = np.array([1.0, 1.0, 1.0], dtype=np.float32)
BLACK = np.array([-1.0, -1.0, -1.0], dtype=np.float32)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SparseVoxelGrid:
    """Set of active voxels on an R^3 grid with per-voxel features.

    Immutable after construction; build via :func:`new_grid`.
    """

    resolution: int
    coords: np.ndarray  # (N, 3) int32, lexicographically sorted
    features: np.ndarray  # (N, 4) float32

    @property
    def num_voxels(self) -> int:
        return self.coords.shape[0]

    @property
    def colors(self) -> np.ndarray:
        """(N, 3) view of the color channels."""
        return self.features[:, COLOR_SLICE]

    def centers(self) -> np.ndarray:
        """Normalized voxel-center positions in [0, 1]^3."""
        return (self.coords.astype(np.float64) + 0.5) / self.resolution

    def with_colors(self, colors: np.ndarray) -> "SparseVoxelGrid":
        """Same geometry, new color channels."""
        feats = np.ones((self.num_voxels, NUM_CHANNELS), dtype=np.float32)
        feats[:, COLOR_SLICE] = colors
        return new_grid(self.resolution, self.coords, feats)

    def index_of(self) -> dict[tuple[int, int, int], int]:
        """Map coordinate triple -> row index in canonical order."""
        return {tuple(c): i for i, c in enumerate(self.coords.tolist())}


@dataclass(frozen=True)
class PartLabeling:
    """One part id per active voxel, aligned with a grid's canonical order."""

    labels: np.ndarray  # (N,) int32
    num_parts: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("labels must be a non-empty 1-d array")
        if self.num_parts < 1:
            raise ValueError("num_parts must be positive")
        present = np.unique(labels)
        if present[0] < 0 or present[-1] >= self.num_parts:
            raise ValueError("labels must lie in [0, num_parts)")
        if present.size != self.num_parts:
            raise ValueError("labels must cover every part id (contiguous)")
        object.__setattr__(self, "labels", _freeze(labels))

    def mask(self, part_id: int) -> np.ndarray:
        return self.labels == part_id


@dataclass(frozen=True)
class Palette:
    """Ordered part colors with a pairwise Euclidean separation guarantee."""

    colors: np.ndarray  # (P, 3) float32 in [-1, 1]
    min_separation: float

    def __post_init__(self):
        colors = np.ascontiguousarray(self.colors, dtype=np.float32)
        if colors.ndim != 2 or colors.shape[1] != 3:
            raise ValueError("palette colors must be (P, 3)")
        if np.abs(colors).max() > 1.0:
            raise ChannelRangeError("palette colors must lie in [-1, +1]")
        if len(colors) > 1:
            d = np.linalg.norm(colors[:, None, :] - colors[None, :, :], axis=-1)
            np.fill_diagonal(d, np.inf)
            if d.min() < self.min_separation:
                raise ValueError("palette violates its min_separation")
            if d.min() == 0.0:
                raise ValueError("palette colors must be distinct")
        object.__setattr__(self, "colors", _freeze(colors))

    def __len__(self) -> int:
        return len(self.colors)


def new_grid(resolution: int, coords, features) -> SparseVoxelGrid:
    """Validate and canonicalize a sparse voxel grid.

    Coordinates are sorted lexicographically and features permuted to match.
    The occupancy channel is forced to exactly 1.0.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    coords = np.ascontiguousarray(coords, dtype=np.int64)
    features = np.ascontiguousarray(features, dtype=np.float32)
    if coords.size == 0:
        raise EmptyGridError("grid has no active voxels")
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError("coords must be (N, 3)")
    if features.ndim != 2 or features.shape[0] != coords.shape[0]:
        raise ValueError("features count must match coords count")
    if features.shape[1] != NUM_CHANNELS:
        raise ChannelRangeError(
            f"expected {NUM_CHANNELS} channels, got {features.shape[1]}"
        )
    if coords.min() < 0 or coords.max() >= resolution:
        raise OutOfBoundsError("coordinates must lie in [0, resolution)")

    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
    coords = coords[order]
    features = features[order]
    if len(coords) > 1 and (np.diff(coords, axis=0) == 0).all(axis=1).any():
        raise DuplicateVoxelError("duplicate voxel coordinate")

    colors = features[:, COLOR_SLICE]
    if np.abs(colors).max() > 1.0 + 1e-6:
        raise ChannelRangeError("color channels must lie in [-1, +1]")
    features = features.copy()
    features[:, COLOR_SLICE] = np.clip(colors, -1.0, 1.0)
    features[:, 0] = 1.0

    return SparseVoxelGrid(
        resolution=int(resolution),
        coords=_freeze(coords.astype(np.int32)),
        features=_freeze(features),
    )


MAX_PALETTE_DRAWS = 10_000


def sample_palette(num_parts: int, seed: int, min_separation: float = 0.6) -> Palette:
    """Rejection-sample well-separated part colors, uniform in [-1, +1]^3.

    Deterministic in (num_parts, seed). Raises PaletteInfeasibleError once
    the total draw budget of 10,000 colors is exhausted.
    """
    if num_parts < 1:
        raise ValueError("num_parts must be >= 1")
    if min_separation < 0:
        raise ValueError("min_separation must be non-negative")
    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    draws = 0
    while len(accepted) < num_parts:
        if draws >= MAX_PALETTE_DRAWS:
            raise PaletteInfeasibleError(
                f"could not place {num_parts} colors at separation "
                f"{min_separation} within {MAX_PALETTE_DRAWS} draws"
            )
        color = rng.uniform(-1.0, 1.0, size=3)
        draws += 1
        if all(np.linalg.norm(color - c) >= min_separation for c in accepted):
            accepted.append(color)
    return Palette(np.asarray(accepted, dtype=np.float32), float(min_separation))


def sample_palette_adaptive(
    num_parts: int, seed: int, base_separation: float = 0.6
) -> Palette:
    """sample_palette with the separation halved once per infeasibility retry."""
    sep = base_separation
    while True:
        try:
            return sample_palette(num_parts, seed, sep)
        except PaletteInfeasibleError:
            if sep < 1e-6:
                raise
            sep = sep / 2.0


# --- SVG1 binary format ----------------------------------------------------
#
# magic "SVGF" | version u32=1 | R u32 | N u32 | channel_count u32 |
# has_labels u8 | coords N x 3 u16 LE | features N x C f32 LE |
# [labels N x u32 LE] | CRC32 u32 of everything between version and CRC.

SVG1_MAGIC = b"SVGF"
SVG1_VERSION = 1


def grid_to_bytes(grid: SparseVoxelGrid, labeling: PartLabeling | None = None) -> bytes:
    if labeling is not None and len(labeling.labels) != grid.num_voxels:
        raise ValueError("labeling length must match the grid")
    if grid.resolution > 0xFFFF:
        raise ValueError("SVG1 stores coordinates as u16; resolution too large")
    n = grid.num_voxels
    payload = struct.pack(
        "<IIIB", grid.resolution, n, NUM_CHANNELS, 1 if labeling is not None else 0
    )
    payload += grid.coords.astype("<u2").tobytes()
    payload += grid.features.astype("<f4").tobytes()
    if labeling is not None:
        payload += labeling.labels.astype("<u4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return SVG1_MAGIC + struct.pack("<I", SVG1_VERSION) + payload + struct.pack("<I", crc)


def grid_from_bytes(blob: bytes) -> tuple[SparseVoxelGrid, PartLabeling | None]:
    if len(blob) < 8 or blob[:4] != SVG1_MAGIC:
        raise FormatVersionError("bad magic; not an SVG1 file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != SVG1_VERSION:
        raise FormatVersionError(f"unsupported SVG1 version {version}")
    if len(blob) < 8 + 13 + 4:
        raise CorruptPayloadError("truncated SVG1 file")
    payload, (crc,) = blob[8:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptPayloadError("SVG1 checksum failure")
    resolution, n, channels, has_labels = struct.unpack_from("<IIIB", payload, 0)
    off = 13
    coords_bytes = n * 3 * 2
    feats_bytes = n * channels * 4
    labels_bytes = n * 4 if has_labels else 0
    if len(payload) != off + coords_bytes + feats_bytes + labels_bytes:
        raise CorruptPayloadError("SVG1 payload size mismatch")
    coords = np.frombuffer(payload, dtype="<u2", count=n * 3, offset=off)
    coords = coords.reshape(n, 3).astype(np.int64)
    off += coords_bytes
    features = np.frombuffer(payload, dtype="<f4", count=n * channels, offset=off)
    features = features.reshape(n, channels)
    off += feats_bytes
    labeling = None
    if has_labels:
        labels = np.frombuffer(payload, dtype="<u4", count=n, offset=off)
        labels = labels.astype(np.int32)
        labeling = PartLabeling(labels=labels, num_parts=int(labels.max()) + 1)
    return new_grid(resolution, coords, features), labeling


def write_grid(grid: SparseVoxelGrid, path, labeling: PartLabeling | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(grid, labeling))


def read_grid(path) -> tuple[SparseVoxelGrid, PartLabeling | None]:
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())
