import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from crownpipe.grids import (Band, Grid, RasterError, build_stack, load_ascii_grid,
                             load_dem, load_rgb, resample, write_ascii_grid, write_rgb)


def write_png(path, array, pixel_size=1.0, sidecar=True, mode="RGB"):
    Image.fromarray(array, mode=mode).save(path)
    if sidecar:
        path.with_suffix(".png.grid.json").write_text(json.dumps(
            {"origin_x": 0.0, "origin_y": 0.0, "pixel_size": pixel_size}))


class TestLoadRgb:
    def test_all_white_image(self, tmp_path):
        write_png(tmp_path / "w.png", np.full((2, 2, 3), 255, dtype=np.uint8))
        r, g, b = load_rgb(tmp_path / "w.png")
        for band in (r, g, b):
            assert np.array_equal(band.values, np.full((2, 2), 255.0))
            assert band.grid == r.grid

    def test_sidecar_pixel_size(self, tmp_path):
        write_png(tmp_path / "o.png", np.zeros((2, 2, 3), dtype=np.uint8),
                  pixel_size=0.05)
        r, _, _ = load_rgb(tmp_path / "o.png")
        assert r.grid.pixel_size == 0.05

    def test_red_channel_byte_pattern_roundtrip(self, tmp_path):
        pattern = np.arange(9, dtype=np.uint8).reshape(3, 3) * 17
        rgb = np.zeros((3, 3, 3), dtype=np.uint8)
        rgb[:, :, 0] = pattern
        write_png(tmp_path / "p.png", rgb)
        r, g, b = load_rgb(tmp_path / "p.png")
        assert np.array_equal(r.values, pattern.astype(float))
        assert np.array_equal(g.values, np.zeros((3, 3)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(RasterError, match="not found"):
            load_rgb(tmp_path / "absent.png")

    def test_missing_sidecar(self, tmp_path):
        write_png(tmp_path / "n.png", np.zeros((2, 2, 3), dtype=np.uint8),
                  sidecar=False)
        with pytest.raises(RasterError, match="sidecar"):
            load_rgb(tmp_path / "n.png")

    def test_non_rgb_channel_count(self, tmp_path):
        write_png(tmp_path / "grey.png", np.zeros((2, 2), dtype=np.uint8), mode="L")
        with pytest.raises(RasterError, match="RGB"):
            load_rgb(tmp_path / "grey.png")

    def test_write_read_roundtrip(self, tmp_path):
        rgb = np.random.default_rng(0).integers(0, 256, (4, 5, 3), dtype=np.uint8)
        grid = Grid(width=5, height=4, origin_x=3.0, origin_y=-2.0, pixel_size=0.5)
        write_rgb(tmp_path / "rt.png", rgb, grid)
        r, g, b = load_rgb(tmp_path / "rt.png")
        assert r.grid == grid
        assert np.array_equal(np.stack([r.values, g.values, b.values], -1), rgb)


class TestLoadDem:
    def test_constant_elevation(self, tmp_path):
        grid = Grid(width=2, height=2)
        write_ascii_grid(tmp_path / "d.asc", Band(grid, np.full((2, 2), 109.0)))
        band = load_dem(tmp_path / "d.asc")
        assert np.array_equal(band.values, np.full((2, 2), 109.0))

    def test_nodata_cells_masked(self, tmp_path):
        (tmp_path / "d.asc").write_text(
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n"
            "NODATA_value -9999\n1 -9999\n3 4\n")
        band = load_dem(tmp_path / "d.asc")
        assert band.nodata_mask.tolist() == [[False, True], [False, False]]

    def test_roundtrip_bitwise(self, tmp_path, rng):
        values = rng.uniform(50, 500, (5, 5))
        grid = Grid(width=5, height=5, origin_x=1.25, origin_y=-3.5, pixel_size=0.09)
        write_ascii_grid(tmp_path / "r.asc", Band(grid, values))
        band = load_ascii_grid(tmp_path / "r.asc")
        assert band.grid == grid
        assert np.array_equal(band.values, values)

    def test_malformed_header(self, tmp_path):
        (tmp_path / "bad.asc").write_text("ncols 2\nnrows 2\n1 2\n3 4\n")
        with pytest.raises(RasterError, match="header"):
            load_dem(tmp_path / "bad.asc")

    def test_row_length_mismatch(self, tmp_path):
        (tmp_path / "bad.asc").write_text(
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n4 5\n")
        with pytest.raises(RasterError, match="row"):
            load_dem(tmp_path / "bad.asc")


class TestResample:
    def test_identity_grid(self):
        grid = Grid(width=3, height=3)
        band = Band(grid, np.arange(9, dtype=float).reshape(3, 3))
        for method in ("nearest", "bilinear"):
            out = resample(band, grid, method)
            assert np.array_equal(out.values, band.values)

    def test_constant_preserved(self):
        src = Grid(width=4, height=4, pixel_size=1.0)
        dst = Grid(width=7, height=5, origin_x=0.3, origin_y=0.2, pixel_size=0.41)
        band = Band(src, np.full((4, 4), 3.25))
        out = resample(band, dst, "bilinear")
        assert np.allclose(out.values[~out.nodata_mask], 3.25)

    def test_bilinear_horizontal_midpoint(self):
        src = Grid(width=2, height=2, pixel_size=1.0)
        band = Band(src, np.array([[0.0, 10.0], [0.0, 10.0]]))
        # one cell centered exactly between the two source columns
        dst = Grid(width=1, height=1, origin_x=0.5, origin_y=0.5, pixel_size=1.0)
        out = resample(band, dst, "bilinear")
        assert out.values[0, 0] == pytest.approx(5.0)

    def test_disjoint_extents(self):
        src = Grid(width=2, height=2)
        band = Band(src, np.zeros((2, 2)))
        with pytest.raises(RasterError, match="overlap"):
            resample(band, Grid(width=2, height=2, origin_x=10.0), "nearest")

    def test_nodata_propagates(self):
        src = Grid(width=2, height=1)
        band = Band(src, np.array([[1.0, 5.0]]), np.array([[False, True]]))
        dst = Grid(width=1, height=1, origin_x=0.5, origin_y=0.0, pixel_size=1.0)
        out = resample(band, dst, "bilinear")
        assert out.nodata_mask[0, 0]

    @given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 5), st.integers(0, 5))
    @settings(max_examples=25, deadline=None)
    def test_exact_on_coincident_points(self, w, h, r, c):
        rng = np.random.default_rng(99)
        values = rng.uniform(-10, 10, (h, w))
        src = Grid(width=w, height=h)
        band = Band(src, values)
        r, c = r % h, c % w
        # 1x1 target whose center is the (r, c) source cell center
        dst = Grid(width=1, height=1, origin_x=float(c), origin_y=float(h - r - 1))
        for method in ("nearest", "bilinear"):
            out = resample(band, dst, method)
            assert out.values[0, 0] == values[r, c]

    def test_bilinear_bounded_by_local_extremes(self, rng):
        src = Grid(width=6, height=6)
        band = Band(src, rng.uniform(0, 100, (6, 6)))
        dst = Grid(width=11, height=11, pixel_size=0.5, origin_x=0.2, origin_y=0.2)
        out = resample(band, dst, "bilinear")
        good = ~out.nodata_mask
        assert out.values[good].max() <= band.values.max() + 1e-12
        assert out.values[good].min() >= band.values.min() - 1e-12


class TestBuildStack:
    def test_default_weights(self):
        grid = Grid(width=2, height=2)
        bands = [Band(grid, np.zeros((2, 2))) for _ in range(5)]
        stack = build_stack(*bands)
        assert stack.weights.tolist() == [1.0, 1.0, 1.0, 2.0, 3.0]

    def test_dem_linear_rescale(self):
        grid = Grid(width=2, height=1)
        const = Band(grid, np.zeros((1, 2)))
        dem = Band(grid, np.array([[109.0, 225.0]]))
        stack = build_stack(const, const, const, dem, const)
        assert stack.layers[3].tolist() == [[0.0, 255.0]]

    def test_constant_layer_maps_to_zero(self):
        grid = Grid(width=2, height=2)
        const = Band(grid, np.full((2, 2), 42.0))
        stack = build_stack(const, const, const, const, const)
        assert np.array_equal(stack.layers, np.zeros((5, 2, 2)))

    def test_grid_mismatch(self):
        a = Band(Grid(width=2, height=2), np.zeros((2, 2)))
        b = Band(Grid(width=3, height=2), np.zeros((2, 3)))
        with pytest.raises(RasterError, match="grid"):
            build_stack(a, a, a, b, a)

    def test_negative_weight(self):
        grid = Grid(width=2, height=2)
        band = Band(grid, np.zeros((2, 2)))
        with pytest.raises(RasterError, match="nonnegative"):
            build_stack(band, band, band, band, band, weights=(1, 1, 1, -2, 3))

    @given(st.lists(st.floats(-1e5, 1e5), min_size=4, max_size=36))
    @settings(max_examples=40, deadline=None)
    def test_range_and_order_preserved(self, values):
        n = int(np.sqrt(len(values)))
        arr = np.array(values[:n * n]).reshape(n, n)
        grid = Grid(width=n, height=n)
        band = Band(grid, arr)
        const = Band(grid, np.zeros((n, n)))
        stack = build_stack(band, const, const, const, const)
        layer = stack.layers[0]
        assert layer.min() >= 0.0 and layer.max() <= 255.0
        flat_in = arr.ravel()
        flat_out = layer.ravel()
        order = np.argsort(flat_in, kind="stable")
        assert (np.diff(flat_out[order]) >= 0).all()

    def test_nodata_any_layer_is_background(self):
        grid = Grid(width=2, height=1)
        clean = Band(grid, np.array([[1.0, 2.0]]))
        masked = Band(grid, np.array([[1.0, 2.0]]), np.array([[True, False]]))
        stack = build_stack(clean, clean, clean, masked, clean)
        assert stack.nodata_mask.tolist() == [[True, False]]
        assert stack.foreground.tolist() == [[False, True]]
