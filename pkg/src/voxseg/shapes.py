"""Procedural multi-part shapes, colorization targets, and rendered 2D guidance.

Shapes are unions of solid primitives (box / sphere / cylinder) voxelized on
the unit cube; each voxel is owned by the highest-priority primitive that
contains its center, and the owning primitive index is the part label. Every
shape also carries an input "texture": a solid color per part baked into the
grid's color channels, with an occasional pair of parts sharing one color so
that appearance alone does not always determine the decomposition.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptPayloadError,
    DatasetExhaustedError,
    DegenerateShapeError,
    FormatVersionError,
    PaletteSizeMismatchError,
    UnknownPartError,
)
from .grids import (
    BLACK,
    WHITE,
    Palette,
    PartLabeling,
    SparseVoxelGrid,
    new_grid,
    read_grid,
    sample_palette_adaptive,
    write_grid,
)

PRIMITIVE_KINDS = ("box", "sphere", "cylinder")

# Probabilities (driven by the shape's own seed) that one, and then a second,
# pair of parts shares an input texture color. Shared-texture parts cannot be
# separated by appearance alone, which is what clicks and 2D guidance resolve.
TEXTURE_SHARE_PROB = 0.6
TEXTURE_SHARE_SECOND_PROB = 0.5


@dataclass(frozen=True)
class Primitive:
    kind: str  # box | sphere | cylinder
    center: tuple[float, float, float]  # in [0, 1]^3
    size: tuple[float, float, float]  # see contains_points
    priority: int

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """Boolean membership of (N, 3) points in [0, 1]^3.

        size semantics: box -> half extents per axis; sphere -> size[0] is the
        radius; cylinder -> size[0] radius, size[1] half height, round(size[2])
        selects the axis (mod 3).
        """
        c = np.asarray(self.center, dtype=np.float64)
        s = np.asarray(self.size, dtype=np.float64)
        d = points - c
        if self.kind == "box":
            return (np.abs(d) <= s).all(axis=1)
        if self.kind == "sphere":
            return (d**2).sum(axis=1) <= s[0] ** 2
        if self.kind == "cylinder":
            axis = int(round(s[2])) % 3
            radial = [a for a in range(3) if a != axis]
            in_height = np.abs(d[:, axis]) <= s[1]
            in_radius = (d[:, radial] ** 2).sum(axis=1) <= s[0] ** 2
            return in_height & in_radius
        raise ValueError(f"unknown primitive kind {self.kind!r}")


@dataclass(frozen=True)
class ShapeSpec:
    seed: int
    primitives: tuple[Primitive, ...]

    def __post_init__(self):
        prios = [p.priority for p in self.primitives]
        if len(set(prios)) != len(prios):
            raise ValueError("primitive priorities must be unique")


def _voxel_centers(resolution: int) -> np.ndarray:
    """All R^3 voxel centers in lexicographic coordinate order."""
    r = np.arange(resolution)
    grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return (grid + 0.5) / resolution, grid


def _texture_colors(spec: ShapeSpec, num_parts: int) -> np.ndarray:
    """Deterministic per-part input colors; some pairs may share a color."""
    palette = sample_palette_adaptive(num_parts, seed=spec.seed ^ 0x5EED, base_separation=0.5)
    colors = 0.85 * palette.colors.copy()  # keep a margin inside [-1, 1]
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(num_parts)
    if num_parts >= 3 and rng.random() < TEXTURE_SHARE_PROB:
        colors[order[1]] = colors[order[0]]
        if num_parts >= 5 and rng.random() < TEXTURE_SHARE_SECOND_PROB:
            colors[order[3]] = colors[order[2]]
    return colors


def generate_shape(spec: ShapeSpec, resolution: int) -> tuple[SparseVoxelGrid, PartLabeling]:
    """Voxelize a ShapeSpec; deterministic in (spec, resolution).

    A voxel is active iff its center lies inside at least one primitive; the
    label is the index of the highest-priority containing primitive. Raises
    DegenerateShapeError if any primitive owns zero voxels.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    if not spec.primitives:
        raise ValueError("spec has no primitives")
    centers, coords = _voxel_centers(resolution)
    num_parts = len(spec.primitives)

    owner = np.full(centers.shape[0], -1, dtype=np.int64)
    best_priority = np.full(centers.shape[0], np.iinfo(np.int64).min, dtype=np.int64)
    for idx, prim in enumerate(spec.primitives):
        inside = prim.contains_points(centers)
        take = inside & (prim.priority > best_priority)
        owner[take] = idx
        best_priority[take] = prim.priority

    active = owner >= 0
    labels = owner[active]
    present = np.unique(labels)
    if present.size != num_parts:
        missing = sorted(set(range(num_parts)) - set(present.tolist()))
        raise DegenerateShapeError(f"primitives {missing} own no voxels")

    texture = _texture_colors(spec, num_parts)
    feats = np.ones((int(active.sum()), 4), dtype=np.float32)
    feats[:, 1:4] = texture[labels]
    grid = new_grid(resolution, coords[active], feats)
    labeling = PartLabeling(labels=labels.astype(np.int32), num_parts=num_parts)
    return grid, labeling


@dataclass(frozen=True)
class DatasetConfig:
    resolution: int = 32
    min_primitives: int = 2
    max_primitives: int = 8
    center_range: tuple[float, float] = (0.25, 0.75)
    size_range: tuple[float, float] = (0.08, 0.2)
    max_active_voxels: int | None = None
    min_part_voxels: int = 1


def _draw_spec(seed: int, cfg: DatasetConfig) -> ShapeSpec:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(cfg.min_primitives, cfg.max_primitives + 1))
    prios = rng.permutation(n)
    prims = []
    for i in range(n):
        kind = PRIMITIVE_KINDS[int(rng.integers(len(PRIMITIVE_KINDS)))]
        center = tuple(rng.uniform(*cfg.center_range, size=3).tolist())
        lo, hi = cfg.size_range
        if kind == "sphere":
            size = (float(rng.uniform(lo, hi)), 0.0, 0.0)
        elif kind == "cylinder":
            size = (
                float(rng.uniform(lo, hi)),
                float(rng.uniform(lo, hi)),
                float(rng.integers(3)),
            )
        else:
            size = tuple(rng.uniform(lo, hi, size=3).tolist())
        prims.append(Primitive(kind=kind, center=center, size=size, priority=int(prios[i])))
    return ShapeSpec(seed=seed, primitives=tuple(prims))


@dataclass(frozen=True)
class DatasetEntry:
    shape_id: str
    seed: int
    grid: SparseVoxelGrid
    labeling: PartLabeling

    @property
    def palette_seeds(self) -> list[int]:
        return palette_seeds_for(self.seed)


def palette_seeds_for(shape_seed: int, count: int = 10) -> list[int]:
    """The per-shape palette seeds: shape_seed * 10 + j for j in 0..count-1."""
    return [shape_seed * 10 + j for j in range(count)]


def shape_palette(labeling: PartLabeling, shape_seed: int, index: int) -> Palette:
    """The index-th of a shape's 10 target palettes."""
    return sample_palette_adaptive(labeling.num_parts, palette_seeds_for(shape_seed)[index])


MAX_CONSECUTIVE_REJECTIONS = 100


def sample_dataset(
    count: int, seed: int, config: DatasetConfig | None = None, prefix: str = "shape"
) -> list[DatasetEntry]:
    """Draw `count` multi-part shapes; deterministic in (count, seed, config)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    cfg = config or DatasetConfig()
    rng = np.random.default_rng(seed)
    entries: list[DatasetEntry] = []
    rejections = 0
    while len(entries) < count:
        shape_seed = int(rng.integers(1, 2**31 - 1))
        try:
            grid, labeling = generate_shape(_draw_spec(shape_seed, cfg), cfg.resolution)
        except DegenerateShapeError:
            rejections += 1
            if rejections >= MAX_CONSECUTIVE_REJECTIONS:
                raise DatasetExhaustedError(
                    f"{rejections} consecutive shape rejections"
                ) from None
            continue
        too_big = (
            cfg.max_active_voxels is not None and grid.num_voxels > cfg.max_active_voxels
        )
        part_sizes = np.bincount(labeling.labels, minlength=labeling.num_parts)
        if too_big or part_sizes.min() < cfg.min_part_voxels:
            rejections += 1
            if rejections >= MAX_CONSECUTIVE_REJECTIONS:
                raise DatasetExhaustedError(f"{rejections} consecutive shape rejections")
            continue
        rejections = 0
        entries.append(
            DatasetEntry(
                shape_id=f"{prefix}-{len(entries):04d}",
                seed=shape_seed,
                grid=grid,
                labeling=labeling,
            )
        )
    return entries


# --- colorization targets ----------------------------------------------------


def make_interactive_target(
    grid: SparseVoxelGrid, labeling: PartLabeling, part_id: int
) -> SparseVoxelGrid:
    """White on the selected part, black everywhere else."""
    if not 0 <= part_id < labeling.num_parts:
        raise UnknownPartError(f"part {part_id} not in [0, {labeling.num_parts})")
    if len(labeling.labels) != grid.num_voxels:
        raise ValueError("labeling does not match grid")
    colors = np.where(labeling.mask(part_id)[:, None], WHITE, BLACK)
    return grid.with_colors(colors)


def make_full_target(
    grid: SparseVoxelGrid, labeling: PartLabeling, palette: Palette
) -> SparseVoxelGrid:
    """Each part painted with its palette color."""
    if len(palette) != labeling.num_parts:
        raise PaletteSizeMismatchError(
            f"palette has {len(palette)} colors for {labeling.num_parts} parts"
        )
    if len(labeling.labels) != grid.num_voxels:
        raise ValueError("labeling does not match grid")
    return grid.with_colors(palette.colors[labeling.labels])


# --- 2D guidance maps ----------------------------------------------------------

VIEWS = ("+x", "-x", "+y", "-y", "+z", "-z")


@dataclass(frozen=True)
class GuidanceMap:
    """Orthographic part-color rendering used as the 2D conditioning signal."""

    width: int
    height: int
    colors: np.ndarray  # (H, W, 3) float32
    background: np.ndarray  # (H, W) bool
    view: str

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ValueError(f"view must be one of {VIEWS}")


def render_guidance(
    grid: SparseVoxelGrid,
    colored: SparseVoxelGrid,
    view: str = "+z",
    width: int = 64,
    height: int = 64,
) -> GuidanceMap:
    """Orthographic voxel splat along `view` with a depth buffer.

    The voxel's footprint is the pixel block covering its cell; the voxel
    nearest to the observer (who sits on the `view` side of the cube) wins.
    """
    if view not in VIEWS:
        raise ValueError(f"view must be one of {VIEWS}")
    if colored.num_voxels != grid.num_voxels or not np.array_equal(
        colored.coords, grid.coords
    ):
        raise ValueError("colored grid must be aligned with the geometry grid")
    axis = "xyz".index(view[1])
    u_axis, v_axis = (axis + 1) % 3, (axis + 2) % 3
    r = grid.resolution
    coords = grid.coords
    depth = coords[:, axis].astype(np.int64)
    # Painter's algorithm: far voxels first, so the nearest one ends on top.
    # An observer on the positive side is nearest to large coordinates.
    order = np.argsort(depth, kind="stable")
    if view[0] == "-":
        order = order[::-1]

    colors = np.zeros((height, width, 3), dtype=np.float32)
    background = np.ones((height, width), dtype=bool)
    cols = coords[:, u_axis]
    rows = coords[:, v_axis]
    col_lo = (cols * width) // r
    col_hi = ((cols + 1) * width) // r
    row_lo = (rows * height) // r
    row_hi = ((rows + 1) * height) // r
    voxel_colors = colored.colors
    for i in order:
        colors[row_lo[i] : row_hi[i], col_lo[i] : col_hi[i]] = voxel_colors[i]
        background[row_lo[i] : row_hi[i], col_lo[i] : col_hi[i]] = False
    return GuidanceMap(width=width, height=height, colors=colors, background=background, view=view)


# --- GMAP binary format --------------------------------------------------------
#
# magic "GMAP" | version u32=1 | W u32 | H u32 | view u8 |
# H x W x (rgb 3 x f32 LE + background u8), row-major, interleaved per pixel.

GMAP_MAGIC = b"GMAP"
GMAP_VERSION = 1


def guidance_to_bytes(gmap: GuidanceMap) -> bytes:
    header = GMAP_MAGIC + struct.pack(
        "<IIIB", GMAP_VERSION, gmap.width, gmap.height, VIEWS.index(gmap.view)
    )
    rgb = gmap.colors.reshape(-1, 3).astype("<f4").view(np.uint8).reshape(-1, 12)
    flags = gmap.background.reshape(-1, 1).astype(np.uint8)
    body = np.concatenate([rgb, flags], axis=1).tobytes()
    return header + body


def guidance_from_bytes(blob: bytes) -> GuidanceMap:
    if len(blob) < 17 or blob[:4] != GMAP_MAGIC:
        raise FormatVersionError("bad magic; not a GMAP file")
    version, width, height, view_idx = struct.unpack_from("<IIIB", blob, 4)
    if version != GMAP_VERSION:
        raise FormatVersionError(f"unsupported GMAP version {version}")
    if view_idx >= len(VIEWS):
        raise CorruptPayloadError("bad view id")
    body = np.frombuffer(blob, dtype=np.uint8, offset=17)
    if body.size != width * height * 13:
        raise CorruptPayloadError("GMAP payload size mismatch")
    body = body.reshape(-1, 13)
    rgb = body[:, :12].copy().view("<f4").reshape(height, width, 3).astype(np.float32)
    flags = body[:, 12].astype(bool).reshape(height, width)
    return GuidanceMap(
        width=width, height=height, colors=rgb, background=flags, view=VIEWS[view_idx]
    )


def write_guidance(gmap: GuidanceMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(guidance_to_bytes(gmap))


def read_guidance(path) -> GuidanceMap:
    with open(path, "rb") as fh:
        return guidance_from_bytes(fh.read())


# --- dataset directory layout ---------------------------------------------------


def save_dataset(root, split: str, entries: list[DatasetEntry]) -> None:
    """dataset/{split}/{shape_id}.svg1 plus a shared manifest.json."""
    root = Path(root)
    (root / split).mkdir(parents=True, exist_ok=True)
    manifest_path = root / "manifest.json"
    manifest = {"format": 1, "splits": {}}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    manifest["splits"][split] = [
        {
            "id": e.shape_id,
            "seed": e.seed,
            "num_parts": e.labeling.num_parts,
            "resolution": e.grid.resolution,
            "palette_seeds": e.palette_seeds,
        }
        for e in entries
    ]
    for e in entries:
        write_grid(e.grid, root / split / f"{e.shape_id}.svg1", e.labeling)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(root, split: str) -> list[DatasetEntry]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    if split not in manifest["splits"]:
        raise FileNotFoundError(f"split {split!r} not in manifest")
    entries = []
    for rec in manifest["splits"][split]:
        grid, labeling = read_grid(root / split / f"{rec['id']}.svg1")
        if labeling is None:
            raise ValueError(f"shape {rec['id']} has no labels")
        entries.append(
            DatasetEntry(shape_id=rec["id"], seed=rec["seed"], grid=grid, labeling=labeling)
        )
    return entries
