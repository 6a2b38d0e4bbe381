"""Turning generated voxel colors back into part masks and labelings, plus the
evaluation protocols: click simulation with IoU@N, and permutation-invariant
full-segmentation IoU under optimal part matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    EmptyDatasetError,
    GridMismatchError,
    LengthMismatchError,
    UnknownPartError,
)
from .grids import Palette, PartLabeling, SparseVoxelGrid

NEIGHBOR_OFFSETS = (
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two aligned boolean masks; 1.0 if both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise LengthMismatchError(f"mask lengths differ: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / union


def decode_interactive(colored: SparseVoxelGrid) -> np.ndarray:
    """Foreground = voxels whose mean color channel is above zero."""
    return colored.colors.mean(axis=1) > 0


def decode_full(colored: SparseVoxelGrid, delta_c: float = 0.3) -> PartLabeling:
    """Single-linkage clustering of voxel colors: merge while any inter-cluster
    distance is below delta_c (equivalently, connected components of the
    strictly-closer-than-delta_c graph). Cluster ids are ordered by first
    appearance in canonical voxel order."""
    if delta_c <= 0:
        raise ValueError("delta_c must be positive")
    colors = colored.colors.astype(np.float64)
    n = len(colors)
    rows, cols = [], []
    chunk = max(1, int(4e6) // max(n, 1))
    thresh = delta_c**2
    for start in range(0, n, chunk):
        d2 = ((colors[start : start + chunk, None, :] - colors[None, :, :]) ** 2).sum(-1)
        r, c = np.nonzero(d2 < thresh)
        rows.append(r + start)
        cols.append(c)
    adj = coo_matrix(
        (np.ones(sum(len(r) for r in rows)), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    _, comp = connected_components(adj, directed=False)

    remap = {}
    labels = np.empty(n, dtype=np.int32)
    for i, c in enumerate(comp.tolist()):
        if c not in remap:
            remap[c] = len(remap)
        labels[i] = remap[c]
    return PartLabeling(labels=labels, num_parts=len(remap))


def decode_guided(colored: SparseVoxelGrid, palette: Palette) -> PartLabeling:
    """Snap each voxel to its nearest palette color (ties to the lowest palette
    index); unused palette entries are compacted away preserving index order."""
    if len(palette) == 0:
        raise ValueError("palette must be non-empty")
    colors = colored.colors.astype(np.float64)
    pal = palette.colors.astype(np.float64)
    d2 = ((colors[:, None, :] - pal[None, :, :]) ** 2).sum(-1)
    nearest = np.argmin(d2, axis=1)
    used = np.unique(nearest)
    remap = np.zeros(len(pal), dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    return PartLabeling(labels=remap[nearest], num_parts=int(len(used)))


@dataclass(frozen=True)
class MatchResult:
    """Optimal one-to-one part matching between a prediction and ground truth.

    mean_iou sums the matched pair IoUs (unmatched ground-truth parts score 0)
    and divides by the number of ground-truth parts.
    """

    assignment: dict[int, int]  # predicted part -> ground-truth part
    mean_iou: float
    per_pair_iou: tuple[tuple[int, int, float], ...]


def iou_matrix(pred: PartLabeling, gt: PartLabeling) -> np.ndarray:
    if len(pred.labels) != len(gt.labels):
        raise GridMismatchError("labelings cover different voxel counts")
    inter = np.zeros((pred.num_parts, gt.num_parts), dtype=np.float64)
    np.add.at(inter, (pred.labels, gt.labels), 1.0)
    size_p = np.bincount(pred.labels, minlength=pred.num_parts).astype(np.float64)
    size_g = np.bincount(gt.labels, minlength=gt.num_parts).astype(np.float64)
    union = size_p[:, None] + size_g[None, :] - inter
    return inter / union


def assign_by_max_iou(mat: np.ndarray, num_gt: int) -> MatchResult:
    """Hungarian assignment maximizing total IoU over a (pred, gt) IoU matrix."""
    rows, cols = linear_sum_assignment(-mat)
    pairs = tuple((int(r), int(c), float(mat[r, c])) for r, c in zip(rows, cols))
    mean = float(mat[rows, cols].sum() / num_gt)
    return MatchResult(
        assignment={int(r): int(c) for r, c in zip(rows, cols)},
        mean_iou=mean,
        per_pair_iou=pairs,
    )


def match_parts(pred: PartLabeling, gt: PartLabeling) -> MatchResult:
    """Optimal one-to-one part matching between two labelings of one grid."""
    return assign_by_max_iou(iou_matrix(pred, gt), gt.num_parts)


# --- click simulation -------------------------------------------------------------


def region_boundary_distance(coords: np.ndarray, region: np.ndarray) -> np.ndarray:
    """6-connected distance to the region's boundary for every region voxel.

    A region voxel with any 6-neighbor outside the region (inactive voxels and
    the grid exterior count as outside) has distance 1; distances grow inward.
    """
    region_idx = np.nonzero(region)[0]
    local = {tuple(c): i for i, c in enumerate(coords[region_idx].tolist())}
    dist = np.zeros(len(region_idx), dtype=np.int64)
    frontier = []
    for c, i in local.items():
        for off in NEIGHBOR_OFFSETS:
            if (c[0] + off[0], c[1] + off[1], c[2] + off[2]) not in local:
                dist[i] = 1
                frontier.append(c)
                break
    depth = 1
    while frontier:
        nxt = []
        for c in frontier:
            for off in NEIGHBOR_OFFSETS:
                nb = (c[0] + off[0], c[1] + off[1], c[2] + off[2])
                j = local.get(nb)
                if j is not None and dist[j] == 0:
                    dist[j] = depth + 1
                    nxt.append(nb)
        frontier = nxt
        depth += 1
    return region_idx, dist


def interior_most_voxel(coords: np.ndarray, region: np.ndarray) -> int:
    """The region voxel farthest from the region boundary; ties break to the
    first in canonical order."""
    region_idx, dist = region_boundary_distance(coords, region)
    return int(region_idx[np.argmax(dist)])


def simulate_clicks(
    segmenter,
    grid: SparseVoxelGrid,
    gt: PartLabeling,
    part_id: int,
    max_clicks: int = 10,
    seed: int = 0,
    policy: str = "interior",
) -> list[tuple[int, float]]:
    """Iterative positive-click protocol for one ground-truth part.

    `segmenter(points, sample_seed) -> bool mask` runs interactive inference on
    normalized click coordinates. Click 1 is the interior-most part voxel; each
    later click applies the same rule to the false-negative region (or repeats
    click 1 once the part is fully covered). Returns [(k, IoU after click k)].
    """
    if not 0 <= part_id < gt.num_parts:
        raise UnknownPartError(f"part {part_id} not in [0, {gt.num_parts})")
    if not 1 <= max_clicks <= 10:
        raise ValueError("max_clicks must lie in [1, 10]")
    if policy not in ("interior", "random"):
        raise ValueError("policy must be 'interior' or 'random'")
    part_mask = gt.mask(part_id)
    rng = np.random.default_rng(seed)

    def pick(region: np.ndarray) -> int:
        if policy == "interior":
            return interior_most_voxel(grid.coords, region)
        return int(rng.choice(np.nonzero(region)[0]))

    first = pick(part_mask)
    clicks = [first]
    centers = grid.centers()
    curve: list[tuple[int, float]] = []
    for k in range(1, max_clicks + 1):
        pred = np.asarray(segmenter(centers[clicks], seed + k), dtype=bool)
        curve.append((k, iou(pred, part_mask)))
        if k == max_clicks:
            break
        false_neg = part_mask & ~pred
        clicks.append(pick(false_neg) if false_neg.any() else first)
    return curve


IOU_AT_COLUMNS = (1, 3, 5, 7, 10)


def iou_at_n_report(
    make_segmenter,
    entries,
    n_values=IOU_AT_COLUMNS,
    seed: int = 0,
    policy: str = "interior",
) -> dict:
    """Mean IoU@N over every part of every shape, as percentages.

    `make_segmenter(entry) -> segmenter` binds the model to one shape. N values
    must come from the standard column set {1, 3, 5, 7, 10}.
    """
    entries = list(entries)
    if not entries:
        raise EmptyDatasetError("iou_at_n_report requires a non-empty dataset")
    n_values = tuple(sorted(n_values))
    if not set(n_values) <= set(IOU_AT_COLUMNS):
        raise ValueError(f"N values must be a subset of {IOU_AT_COLUMNS}")
    max_clicks = max(n_values)
    per_shape = []
    sums = {n: 0.0 for n in n_values}
    total_parts = 0
    for s_idx, entry in enumerate(entries):
        segmenter = make_segmenter(entry)
        shape_iou = {n: 0.0 for n in n_values}
        parts = entry.labeling.num_parts
        for part_id in range(parts):
            base_seed = seed + 1000003 * s_idx + 101 * part_id
            curve = dict(
                simulate_clicks(
                    segmenter,
                    entry.grid,
                    entry.labeling,
                    part_id,
                    max_clicks=max_clicks,
                    seed=base_seed,
                    policy=policy,
                )
            )
            for n in n_values:
                shape_iou[n] += curve[n]
                sums[n] += curve[n]
        total_parts += parts
        per_shape.append(
            {
                "id": entry.shape_id,
                "num_parts": parts,
                "iou_at": {str(n): 100.0 * shape_iou[n] / parts for n in n_values},
            }
        )
    return {
        "iou_at": {str(n): 100.0 * sums[n] / total_parts for n in n_values},
        "per_shape": per_shape,
        "num_parts_total": total_parts,
    }


def format_iou_table(report: dict) -> str:
    """Aligned text table with the standard IoU@N columns."""
    cols = sorted(report["iou_at"], key=int)
    header = " | ".join([f"{'shape':<12}"] + [f"IoU@{n:>2}" for n in cols])
    lines = [header, "-" * len(header)]
    for rec in report["per_shape"]:
        cells = [f"{rec['id']:<12}"] + [f"{rec['iou_at'][n]:6.2f}" for n in cols]
        lines.append(" | ".join(cells))
    cells = [f"{'mean':<12}"] + [f"{report['iou_at'][n]:6.2f}" for n in cols]
    lines.append(" | ".join(cells))
    return "\n".join(lines)


def format_full_table(report: dict) -> str:
    """Aligned text table for the full / guided-full protocols."""
    header = f"{'shape':<12} | parts | pred | full IoU"
    lines = [header, "-" * len(header)]
    for rec in report["per_shape"]:
        lines.append(
            f"{rec['id']:<12} | {rec['num_parts']:>5} | {rec['pred_parts']:>4} "
            f"| {rec['full_iou']:8.2f}"
        )
    lines.append(f"{'mean':<12} | {'':>5} | {'':>4} | {report['full_iou']:8.2f}")
    return "\n".join(lines)
