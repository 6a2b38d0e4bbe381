import numpy as np
import pytest

from voxseg.errors import (
    DegenerateShapeError,
    PaletteSizeMismatchError,
    UnknownPartError,
)
from voxseg.grids import sample_palette
from voxseg.shapes import (
    DatasetConfig,
    Primitive,
    ShapeSpec,
    generate_shape,
    guidance_from_bytes,
    guidance_to_bytes,
    load_dataset,
    make_full_target,
    make_interactive_target,
    read_guidance,
    render_guidance,
    sample_dataset,
    save_dataset,
    write_guidance,
)


def box_spec(seed=0, lo=0.25, hi=0.75):
    half = (hi - lo) / 2
    center = ((lo + hi) / 2,) * 3
    return ShapeSpec(seed=seed, primitives=(Primitive("box", center, (half,) * 3, 0),))


def two_spheres_spec(seed=1):
    return ShapeSpec(
        seed=seed,
        primitives=(
            Primitive("sphere", (0.3, 0.3, 0.3), (0.15, 0, 0), 0),
            Primitive("sphere", (0.7, 0.7, 0.7), (0.15, 0, 0), 1),
        ),
    )


def flood_fill_components(coords):
    """Oracle: count 6-connected components of a coordinate set."""
    remaining = set(map(tuple, coords.tolist()))
    comps = 0
    while remaining:
        comps += 1
        stack = [remaining.pop()]
        while stack:
            x, y, z = stack.pop()
            for dx, dy, dz in (
                (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
            ):
                nb = (x + dx, y + dy, z + dz)
                if nb in remaining:
                    remaining.remove(nb)
                    stack.append(nb)
    return comps


class TestGenerateShape:
    def test_box_count_matches_brute_force(self):
        # oracle: enumerate every voxel center of the 16^3 grid
        grid, labeling = generate_shape(box_spec(), 16)
        count = 0
        for i in range(16):
            for j in range(16):
                for k in range(16):
                    c = (np.array([i, j, k]) + 0.5) / 16
                    if np.all(np.abs(c - 0.5) <= 0.25):
                        count += 1
        assert grid.num_voxels == count
        assert labeling.num_parts == 1

    def test_deterministic(self):
        a_grid, a_lab = generate_shape(two_spheres_spec(), 16)
        b_grid, b_lab = generate_shape(two_spheres_spec(), 16)
        assert np.array_equal(a_grid.coords, b_grid.coords)
        assert np.array_equal(a_grid.features, b_grid.features)
        assert np.array_equal(a_lab.labels, b_lab.labels)

    def test_two_disjoint_spheres_connectivity(self):
        grid, labeling = generate_shape(two_spheres_spec(), 16)
        assert labeling.num_parts == 2
        for part in range(2):
            part_coords = grid.coords[labeling.mask(part)]
            assert flood_fill_components(part_coords) == 1

    def test_priority_resolution(self):
        # overlapping boxes: the higher-priority one owns the overlap
        spec = ShapeSpec(
            seed=0,
            primitives=(
                Primitive("box", (0.4, 0.5, 0.5), (0.15, 0.15, 0.15), 0),
                Primitive("box", (0.6, 0.5, 0.5), (0.15, 0.15, 0.15), 5),
            ),
        )
        grid, labeling = generate_shape(spec, 16)
        centers = grid.centers()
        overlap = (np.abs(centers - np.array([0.4, 0.5, 0.5])) <= 0.15).all(axis=1) & (
            np.abs(centers - np.array([0.6, 0.5, 0.5])) <= 0.15
        ).all(axis=1)
        assert overlap.any()
        assert (labeling.labels[overlap] == 1).all()

    def test_degenerate_shape(self):
        # the high-priority box completely hides the low-priority one
        spec = ShapeSpec(
            seed=0,
            primitives=(
                Primitive("box", (0.5, 0.5, 0.5), (0.05, 0.05, 0.05), 0),
                Primitive("box", (0.5, 0.5, 0.5), (0.3, 0.3, 0.3), 1),
            ),
        )
        with pytest.raises(DegenerateShapeError):
            generate_shape(spec, 16)

    def test_texture_is_part_constant(self):
        grid, labeling = generate_shape(two_spheres_spec(), 16)
        for part in range(2):
            part_colors = grid.colors[labeling.mask(part)]
            assert np.allclose(part_colors, part_colors[0])


class TestSampleDataset:
    def test_counts_and_contiguity(self):
        entries = sample_dataset(4, seed=1, config=DatasetConfig(resolution=16))
        assert len(entries) == 4
        for e in entries:
            assert len(e.labeling.labels) == e.grid.num_voxels

    def test_part_counts_within_bounds(self):
        entries = sample_dataset(64, seed=3, config=DatasetConfig(resolution=16))
        parts = [e.labeling.num_parts for e in entries]
        assert min(parts) >= 2
        assert max(parts) <= 8

    def test_deterministic_bytes(self):
        from voxseg.grids import grid_to_bytes

        cfg = DatasetConfig(resolution=16)
        a = sample_dataset(6, seed=9, config=cfg)
        b = sample_dataset(6, seed=9, config=cfg)
        for ea, eb in zip(a, b):
            assert ea.seed == eb.seed
            assert grid_to_bytes(ea.grid, ea.labeling) == grid_to_bytes(eb.grid, eb.labeling)

    def test_max_voxel_cap(self):
        cfg = DatasetConfig(resolution=16, max_active_voxels=400)
        entries = sample_dataset(8, seed=5, config=cfg)
        assert all(e.grid.num_voxels <= 400 for e in entries)

    def test_min_part_size(self):
        cfg = DatasetConfig(resolution=16, min_part_voxels=12)
        entries = sample_dataset(8, seed=6, config=cfg)
        for e in entries:
            assert np.bincount(e.labeling.labels).min() >= 12

    def test_save_load_roundtrip(self, tmp_path):
        entries = sample_dataset(3, seed=2, config=DatasetConfig(resolution=16))
        save_dataset(tmp_path, "train", entries)
        loaded = load_dataset(tmp_path, "train")
        assert [e.shape_id for e in loaded] == [e.shape_id for e in entries]
        for a, b in zip(entries, loaded):
            assert np.array_equal(a.grid.coords, b.grid.coords)
            assert np.array_equal(a.grid.features, b.grid.features)
            assert np.array_equal(a.labeling.labels, b.labeling.labels)
            assert a.palette_seeds == b.palette_seeds


class TestTargets:
    def setup_method(self):
        self.grid, self.labeling = generate_shape(two_spheres_spec(), 16)

    def test_single_part_all_white(self):
        grid, labeling = generate_shape(box_spec(), 16)
        target = make_interactive_target(grid, labeling, 0)
        assert np.allclose(target.colors, 1.0)

    def test_unknown_part(self):
        with pytest.raises(UnknownPartError):
            make_interactive_target(self.grid, self.labeling, self.labeling.num_parts)

    def test_interactive_per_voxel_oracle(self):
        target = make_interactive_target(self.grid, self.labeling, 1)
        for row in range(self.grid.num_voxels):
            expected = 1.0 if self.labeling.labels[row] == 1 else -1.0
            assert np.allclose(target.colors[row], expected)

    def test_interactive_two_coloring(self):
        target = make_interactive_target(self.grid, self.labeling, 0)
        distinct = np.unique(target.colors, axis=0)
        assert len(distinct) <= 2

    def test_full_single_part_matches_interactive(self):
        grid, labeling = generate_shape(box_spec(), 16)
        pal = sample_palette(1, seed=0)
        pal.colors.setflags(write=True)
        pal.colors[:] = [1.0, 1.0, 1.0]
        pal.colors.setflags(write=False)
        full = make_full_target(grid, labeling, pal)
        inter = make_interactive_target(grid, labeling, 0)
        assert np.array_equal(full.colors, inter.colors)

    def test_palette_size_mismatch(self):
        with pytest.raises(PaletteSizeMismatchError):
            make_full_target(self.grid, self.labeling, sample_palette(1, seed=0))

    def test_full_per_voxel_oracle(self):
        grid, labeling = generate_shape(
            ShapeSpec(
                seed=4,
                primitives=(
                    Primitive("box", (0.3, 0.3, 0.3), (0.1, 0.1, 0.1), 0),
                    Primitive("box", (0.7, 0.3, 0.3), (0.1, 0.1, 0.1), 1),
                    Primitive("box", (0.3, 0.7, 0.7), (0.1, 0.1, 0.1), 2),
                ),
            ),
            16,
        )
        pal = sample_palette(3, seed=5)
        target = make_full_target(grid, labeling, pal)
        assert len(np.unique(target.colors, axis=0)) == 3
        for row in range(grid.num_voxels):
            assert np.allclose(target.colors[row], pal.colors[labeling.labels[row]])


class TestGuidance:
    def test_single_center_voxel_footprint(self):
        grid, labeling = generate_shape(
            ShapeSpec(
                seed=0,
                primitives=(Primitive("box", (0.5 + 1 / 32, 0.5 + 1 / 32, 0.5 + 1 / 32), (0.01, 0.01, 0.01), 0),),
            ),
            16,
        )
        assert grid.num_voxels == 1
        assert grid.coords.tolist() == [[8, 8, 8]]
        colored = grid.with_colors(np.array([[0.5, -0.5, 0.25]], dtype=np.float32))
        gmap = render_guidance(grid, colored, view="+z", width=64, height=64)
        # voxel (8, 8, 8) of a 16-grid covers a 4x4 block at rows/cols 32..36
        fg = ~gmap.background
        rows, cols = np.nonzero(fg)
        assert fg.sum() == 16
        assert rows.min() == 32 and rows.max() == 35
        assert cols.min() == 32 and cols.max() == 35
        assert np.allclose(gmap.colors[fg], [0.5, -0.5, 0.25])

    def test_background_flag(self):
        grid, _ = generate_shape(box_spec(), 16)
        gmap = render_guidance(grid, grid, view="+z")
        assert gmap.background.any()
        assert np.allclose(gmap.colors[gmap.background], 0.0)

    def test_depth_buffer_near_voxel_wins(self):
        from voxseg.grids import new_grid

        feats = np.ones((2, 4), dtype=np.float32)
        feats[0, 1:] = [1, 0, 0]  # voxel at z=4
        feats[1, 1:] = [-1, 0, 0]  # voxel at z=12 (nearer for +z view)
        grid = new_grid(16, [(8, 8, 4), (8, 8, 12)], feats)
        gmap = render_guidance(grid, grid, view="+z")
        fg = ~gmap.background
        assert np.allclose(gmap.colors[fg], [-1, 0, 0])
        gmap_neg = render_guidance(grid, grid, view="-z")
        fg = ~gmap_neg.background
        assert np.allclose(gmap_neg.colors[fg], [1, 0, 0])

    def test_color_closure(self):
        grid, labeling = generate_shape(two_spheres_spec(), 16)
        pal = sample_palette(2, seed=3)
        target = make_full_target(grid, labeling, pal)
        gmap = render_guidance(grid, target, view="+y")
        fg_colors = gmap.colors[~gmap.background]
        for color in np.unique(fg_colors.reshape(-1, 3), axis=0):
            assert any(np.allclose(color, p) for p in pal.colors)

    def test_gmap_roundtrip_bit_exact(self, tmp_path):
        grid, labeling = generate_shape(two_spheres_spec(), 16)
        pal = sample_palette(2, seed=3)
        gmap = render_guidance(grid, make_full_target(grid, labeling, pal), view="-x")
        blob = guidance_to_bytes(gmap)
        gmap2 = guidance_from_bytes(blob)
        assert guidance_to_bytes(gmap2) == blob
        path = tmp_path / "g.gd1"
        write_guidance(gmap, path)
        gmap3 = read_guidance(path)
        assert np.array_equal(gmap.colors, gmap3.colors)
        assert np.array_equal(gmap.background, gmap3.background)
        assert gmap.view == gmap3.view
