"""Slope derivation from an elevation raster.

Slope is the maximum rate of elevation change from each cell to its
neighbors, in degrees. Gradients come from the standard 3x3 weighted
finite-difference kernel (face weights 1, 2, 1) used by GIS slope tools:

    dz/dx = ((c + 2f + i) - (a + 2d + g)) / (8 * cellsize)
    dz/dy = ((g + 2h + i) - (a + 2b + c)) / (8 * cellsize)

with the window labeled  a b c / d e f / g h i.  Border rows and columns
are replicated so the output grid matches the input; cells whose window
touches a nodata cell are nodata.
"""

from __future__ import annotations

import numpy as np

from .grids import Band, RasterError


def slope(dem: Band) -> Band:
    """Per-cell slope in degrees, in [0, 90], on the same grid as the DEM."""
    h, w = dem.values.shape
    if h < 2 or w < 2:
        raise RasterError(f"DEM must be at least 2x2 to compute slope, got {h}x{w}")
    cell = dem.grid.pixel_size

    z = np.pad(dem.values, 1, mode="edge")
    a = z[:-2, :-2]; b = z[:-2, 1:-1]; c = z[:-2, 2:]
    d = z[1:-1, :-2];                  f = z[1:-1, 2:]
    g = z[2:, :-2];  hh = z[2:, 1:-1]; i = z[2:, 2:]

    dzdx = ((c + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * cell)
    dzdy = ((g + 2.0 * hh + i) - (a + 2.0 * b + c)) / (8.0 * cell)
    deg = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))

    bad = np.pad(dem.nodata_mask, 1, mode="edge")
    touched = np.zeros((h, w), dtype=bool)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            touched |= bad[dr:dr + h, dc:dc + w]
    deg = np.where(touched, 0.0, deg)
    return Band(dem.grid, deg, touched)
