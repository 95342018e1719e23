"""Raster plumbing: grids, bands, file I/O and the weighted layer stack.

A :class:`Grid` describes a regular, square-pixel raster footprint with the
origin at the lower-left corner (world units, e.g. meters). Array row 0 is
the top image row, matching both PNG layout and the row order of ESRI ASCII
grid files.

Supported inputs are an 8-bit RGB PNG orthomosaic with a ``<image>.grid.json``
sidecar, and elevation/slope rasters in the ESRI ASCII grid format
(``ncols``/``nrows``/``xllcorner``/``yllcorner``/``cellsize``/``NODATA_value``
header followed by space-separated rows).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

LAYER_NAMES = ("R", "G", "B", "DEM", "SLOPE")

# Table-driven defaults: R, G, B, DEM, SLOPE
DEFAULT_LAYER_WEIGHTS = (1.0, 1.0, 1.0, 2.0, 3.0)


class RasterError(Exception):
    """Malformed raster input or mismatched grids."""


@dataclass(frozen=True)
class Grid:
    """Footprint of a raster: size, world origin (lower-left) and pixel size."""

    width: int
    height: int
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise RasterError(f"grid dimensions must be positive, got {self.width}x{self.height}")
        if self.pixel_size <= 0:
            raise RasterError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def top_y(self) -> float:
        return self.origin_y + self.height * self.pixel_size

    @property
    def right_x(self) -> float:
        return self.origin_x + self.width * self.pixel_size

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """World (x, y) of a cell center; row 0 is the top row."""
        x = self.origin_x + (col + 0.5) * self.pixel_size
        y = self.top_y - (row + 0.5) * self.pixel_size
        return x, y


@dataclass
class Band:
    """One raster layer: float values on a Grid plus a per-pixel nodata mask."""

    grid: Grid
    values: np.ndarray
    nodata_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.height, self.grid.width):
            raise RasterError(
                f"band shape {self.values.shape} does not match grid "
                f"{(self.grid.height, self.grid.width)}"
            )
        if self.nodata_mask is None:
            self.nodata_mask = np.zeros(self.values.shape, dtype=bool)
        else:
            self.nodata_mask = np.asarray(self.nodata_mask, dtype=bool)
            if self.nodata_mask.shape != self.values.shape:
                raise RasterError("nodata mask shape does not match values")

    @property
    def valid_mask(self) -> np.ndarray:
        return ~self.nodata_mask


@dataclass
class LayerStack:
    """Aligned R, G, B, DEM, SLOPE bands with per-layer merge weights.

    Layer values are min-max rescaled to integer levels in [0, 255] so the
    weights act on comparable dynamic ranges; keeping the levels integral
    makes all downstream segment statistics exact under any summation order.
    """

    grid: Grid
    layers: np.ndarray  # (5, H, W) float64, integer-valued levels 0..255
    weights: np.ndarray  # (5,) float64
    nodata_mask: np.ndarray  # (H, W) bool, True where any source layer is nodata
    names: tuple[str, ...] = LAYER_NAMES

    @property
    def foreground(self) -> np.ndarray:
        return ~self.nodata_mask


# ---------------------------------------------------------------------------
# PNG orthomosaic + sidecar

def load_rgb(path) -> tuple[Band, Band, Band]:
    """Load an 8-bit RGB PNG with its ``<image>.grid.json`` sidecar.

    Returns the (R, G, B) bands on a shared grid.
    """
    path = Path(path)
    if not path.exists():
        raise RasterError(f"image not found: {path}")
    sidecar = path.with_suffix(path.suffix + ".grid.json")
    if not sidecar.exists():
        raise RasterError(f"missing sidecar metadata: {sidecar}")
    try:
        meta = json.loads(sidecar.read_text())
        origin_x = float(meta["origin_x"])
        origin_y = float(meta["origin_y"])
        pixel_size = float(meta["pixel_size"])
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise RasterError(f"bad sidecar {sidecar}: {exc}") from exc

    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise RasterError(f"cannot read image {path}: {exc}") from exc
    if img.mode != "RGB":
        raise RasterError(f"expected 3-channel RGB image, got mode {img.mode!r}")

    arr = np.asarray(img, dtype=np.float64)
    grid = Grid(width=arr.shape[1], height=arr.shape[0],
                origin_x=origin_x, origin_y=origin_y, pixel_size=pixel_size)
    return tuple(Band(grid, arr[:, :, i]) for i in range(3))  # type: ignore[return-value]


def write_rgb(path, rgb: np.ndarray, grid: Grid) -> None:
    """Write an (H, W, 3) uint8 array as PNG plus its grid sidecar."""
    path = Path(path)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)
    sidecar = path.with_suffix(path.suffix + ".grid.json")
    sidecar.write_text(json.dumps({
        "origin_x": grid.origin_x,
        "origin_y": grid.origin_y,
        "pixel_size": grid.pixel_size,
    }))


# ---------------------------------------------------------------------------
# ESRI ASCII grid

def load_ascii_grid(path) -> Band:
    """Read an ESRI ASCII grid (elevations, slope, label rasters...)."""
    path = Path(path)
    if not path.exists():
        raise RasterError(f"grid file not found: {path}")
    with open(path) as fh:
        header = {}
        nodata = None
        line = fh.readline()
        while line:
            parts = line.split()
            if len(parts) == 2 and parts[0].lower() in (
                    "ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"):
                key = parts[0].lower()
                header[key] = parts[1]
                line = fh.readline()
            else:
                break
        for key in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
            if key not in header:
                raise RasterError(f"{path}: malformed header, missing {key}")
        try:
            ncols = int(header["ncols"])
            nrows = int(header["nrows"])
            xll = float(header["xllcorner"])
            yll = float(header["yllcorner"])
            cellsize = float(header["cellsize"])
            if "nodata_value" in header:
                nodata = float(header["nodata_value"])
        except ValueError as exc:
            raise RasterError(f"{path}: malformed header: {exc}") from exc

        rows = []
        while line:
            if line.strip():
                row = [float(v) for v in line.split()]
                if len(row) != ncols:
                    raise RasterError(
                        f"{path}: row {len(rows)} has {len(row)} values, expected {ncols}")
                rows.append(row)
            line = fh.readline()
    if len(rows) != nrows:
        raise RasterError(f"{path}: got {len(rows)} rows, header says {nrows}")

    values = np.array(rows, dtype=np.float64)
    grid = Grid(width=ncols, height=nrows, origin_x=xll, origin_y=yll, pixel_size=cellsize)
    mask = np.zeros(values.shape, dtype=bool) if nodata is None else values == nodata
    return Band(grid, values, mask)


def write_ascii_grid(path, band: Band, nodata: float = -9999.0, fmt: str = "%.17g") -> None:
    """Write a Band as an ESRI ASCII grid; masked cells become the nodata value."""
    g = band.grid
    values = np.where(band.nodata_mask, nodata, band.values)
    with open(path, "w") as fh:
        fh.write(f"ncols {g.width}\n")
        fh.write(f"nrows {g.height}\n")
        fh.write(f"xllcorner {g.origin_x!r}\n")
        fh.write(f"yllcorner {g.origin_y!r}\n")
        fh.write(f"cellsize {g.pixel_size!r}\n")
        fh.write(f"NODATA_value {fmt % nodata}\n")
        for row in values:
            fh.write(" ".join(fmt % v for v in row))
            fh.write("\n")


load_dem = load_ascii_grid


# ---------------------------------------------------------------------------
# Resampling

def resample(band: Band, target: Grid, method: str = "bilinear") -> Band:
    """Resample a band onto a target grid by nearest or bilinear interpolation.

    Sampling happens at target cell centers. Any contributing source cell
    (interpolation weight > 0) that is nodata makes the output cell nodata,
    as do sample points outside the source extent.
    """
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resampling method {method!r}")
    src = band.grid
    if (target.origin_x >= src.right_x or target.right_x <= src.origin_x or
            target.origin_y >= src.top_y or target.top_y <= src.origin_y):
        raise RasterError("source and target grids do not overlap")
    if target == src:
        return Band(target, band.values.copy(), band.nodata_mask.copy())

    rows = np.arange(target.height, dtype=np.float64)
    cols = np.arange(target.width, dtype=np.float64)
    x = target.origin_x + (cols + 0.5) * target.pixel_size
    y = target.top_y - (rows + 0.5) * target.pixel_size

    # fractional source indices of each target cell center
    col_f = (x - src.origin_x) / src.pixel_size - 0.5
    row_f = (src.top_y - y) / src.pixel_size - 0.5
    col_f, row_f = np.meshgrid(col_f, row_f)

    outside = ((col_f < -0.5) | (col_f > src.width - 0.5) |
               (row_f < -0.5) | (row_f > src.height - 0.5))
    # constant extrapolation inside the outer half-pixel margin
    col_f = np.clip(col_f, 0.0, src.width - 1.0)
    row_f = np.clip(row_f, 0.0, src.height - 1.0)

    vals = band.values
    bad = band.nodata_mask
    if method == "nearest":
        ci = np.floor(col_f + 0.5).astype(np.int64)
        ri = np.floor(row_f + 0.5).astype(np.int64)
        out = vals[ri, ci]
        out_bad = bad[ri, ci] | outside
    else:
        c0 = np.floor(col_f).astype(np.int64)
        r0 = np.floor(row_f).astype(np.int64)
        c1 = np.minimum(c0 + 1, src.width - 1)
        r1 = np.minimum(r0 + 1, src.height - 1)
        fc = col_f - c0
        fr = row_f - r0
        w00 = (1 - fr) * (1 - fc)
        w01 = (1 - fr) * fc
        w10 = fr * (1 - fc)
        w11 = fr * fc
        out = (w00 * vals[r0, c0] + w01 * vals[r0, c1] +
               w10 * vals[r1, c0] + w11 * vals[r1, c1])
        out_bad = outside.copy()
        for w, rr, cc in ((w00, r0, c0), (w01, r0, c1), (w10, r1, c0), (w11, r1, c1)):
            out_bad |= (w > 0) & bad[rr, cc]
    out = np.where(out_bad, 0.0, out)
    return Band(target, out, out_bad)


# ---------------------------------------------------------------------------
# Layer stack

def normalize_layer(band: Band) -> np.ndarray:
    """Min-max rescale valid cells to integer levels 0..255 (constant -> 0)."""
    out = np.zeros(band.values.shape, dtype=np.float64)
    valid = band.valid_mask
    if not valid.any():
        return out
    vmin = band.values[valid].min()
    vmax = band.values[valid].max()
    if vmax > vmin:
        scaled = (band.values - vmin) * (255.0 / (vmax - vmin))
        out[valid] = np.rint(scaled[valid])
    return out


def build_stack(r: Band, g: Band, b: Band, dem: Band, slope: Band,
                weights=None) -> LayerStack:
    """Assemble the five-layer segmentation substrate.

    All bands must already live on one grid (resample DEM/slope first).
    Each layer is min-max rescaled to [0, 255]; a pixel that is nodata in
    any layer is excluded from the stack's foreground.
    """
    bands = (r, g, b, dem, slope)
    grid = r.grid
    for band in bands:
        if band.grid != grid:
            raise RasterError("all stack layers must share one grid")
    if weights is None:
        weights = DEFAULT_LAYER_WEIGHTS
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (5,):
        raise RasterError(f"expected 5 layer weights, got shape {weights.shape}")
    if (weights < 0).any():
        raise RasterError("layer weights must be nonnegative")
    if not (weights > 0).any():
        raise RasterError("at least one layer weight must be positive")

    nodata = np.zeros((grid.height, grid.width), dtype=bool)
    for band in bands:
        nodata |= band.nodata_mask
    layers = np.stack([normalize_layer(band) for band in bands])
    layers[:, nodata] = 0.0
    return LayerStack(grid=grid, layers=layers, weights=weights, nodata_mask=nodata)


def save_stack(path, stack: LayerStack) -> None:
    """Persist a LayerStack losslessly as .npz."""
    np.savez_compressed(
        path,
        layers=stack.layers,
        weights=stack.weights,
        nodata=stack.nodata_mask,
        grid=np.array([stack.grid.width, stack.grid.height, stack.grid.origin_x,
                       stack.grid.origin_y, stack.grid.pixel_size], dtype=np.float64),
    )


def load_stack(path) -> LayerStack:
    data = np.load(path)
    gw, gh, ox, oy, ps = data["grid"]
    grid = Grid(width=int(gw), height=int(gh), origin_x=float(ox),
                origin_y=float(oy), pixel_size=float(ps))
    return LayerStack(grid=grid, layers=data["layers"], weights=data["weights"],
                      nodata_mask=data["nodata"])
