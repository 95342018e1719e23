"""Synthetic forest scene generator for end-to-end runs and demos.

Builds a square RGB "orthomosaic" of colored, textured crown blobs over a
bare-ground background, a coarser-grid elevation model with one dome per
crown, and a per-pixel truth raster. The four artificial species map to
tree classes 1 (broad-leaved), 4, 5 and 6 (the conifers); everything else
is class 7. Fully deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grids import Band, Grid, write_ascii_grid, write_rgb

BACKGROUND_CLASS = 7


@dataclass(frozen=True)
class SpeciesSpec:
    class_id: int
    color: tuple[int, int, int]
    texture: float      # per-pixel speckle amplitude in color levels
    height: tuple[float, float]  # crown dome height range in meters


SPECIES = (
    SpeciesSpec(1, (196, 168, 48), 26.0, (3.0, 5.0)),    # broad-leaved, yellowish
    SpeciesSpec(4, (32, 96, 44), 14.0, (6.0, 9.0)),      # dark green conifer
    SpeciesSpec(5, (88, 150, 70), 20.0, (5.0, 8.0)),     # mid green conifer
    SpeciesSpec(6, (150, 200, 150), 10.0, (4.0, 6.0)),   # pale green conifer
)


def _smooth_field(rng: np.random.Generator, side: int, cells: int,
                  amplitude: float) -> np.ndarray:
    """Low-frequency surface: bilinear upsample of a coarse random grid."""
    coarse = rng.uniform(-amplitude, amplitude, size=(cells, cells))
    ys = np.linspace(0, cells - 1, side)
    xs = np.linspace(0, cells - 1, side)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, cells - 1)
    x1 = np.minimum(x0 + 1, cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    return ((1 - fy) * (1 - fx) * coarse[y0][:, x0]
            + (1 - fy) * fx * coarse[y0][:, x1]
            + fy * (1 - fx) * coarse[y1][:, x0]
            + fy * fx * coarse[y1][:, x1])


def generate_scene(out_dir, side: int = 512, pixel_size: float = 0.05,
                   crowns_per_species: int = 55, seed: int = 42) -> dict[str, str]:
    """Write ortho.png (+ sidecar), dem.asc (half resolution) and truth.asc.

    Returns the paths of the three products.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    ground = 120.0 + _smooth_field(rng, side, 6, 2.5)
    rgb = np.zeros((side, side, 3))
    base_ground = np.array([118.0, 104.0, 86.0])
    rgb += base_ground[None, None, :]
    rgb += _smooth_field(rng, side, 10, 9.0)[:, :, None]
    rgb += rng.uniform(-5, 5, size=(side, side, 3))

    truth = np.full((side, side), BACKGROUND_CLASS, dtype=np.int32)
    dem = ground.copy()

    yy, xx = np.mgrid[0:side, 0:side]
    centers: list[tuple[float, float, float]] = []
    min_gap = 4.0
    for spec in SPECIES:
        placed = 0
        attempts = 0
        while placed < crowns_per_species and attempts < 20000:
            attempts += 1
            r = rng.uniform(9.0, 16.0)
            cx = rng.uniform(r + 2, side - r - 2)
            cy = rng.uniform(r + 2, side - r - 2)
            if any((cx - ox) ** 2 + (cy - oy) ** 2 < (r + orr + min_gap) ** 2
                   for ox, oy, orr in centers):
                continue
            centers.append((cx, cy, r))
            placed += 1

            d2 = (xx - cx) ** 2 + (yy - cy) ** 2
            inside = d2 <= r * r
            truth[inside] = spec.class_id
            dome = rng.uniform(*spec.height) * (1.0 - d2 / (r * r))
            dem[inside] += dome[inside]

            jitter = rng.uniform(-12, 12, size=3)
            color = np.array(spec.color, dtype=np.float64) + jitter
            speckle = rng.uniform(-spec.texture, spec.texture, size=(side, side))
            for ch in range(3):
                rgb[:, :, ch][inside] = color[ch] + speckle[inside]

    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    grid = Grid(width=side, height=side, origin_x=0.0, origin_y=0.0,
                pixel_size=pixel_size)

    ortho_path = out_dir / "ortho.png"
    write_rgb(ortho_path, rgb, grid)

    # elevation model on a grid twice as coarse, like a photogrammetric DEM
    half = side // 2
    dem_coarse = dem.reshape(half, 2, half, 2).mean(axis=(1, 3))
    dem_grid = Grid(width=half, height=half, origin_x=0.0, origin_y=0.0,
                    pixel_size=pixel_size * 2)
    dem_path = out_dir / "dem.asc"
    write_ascii_grid(dem_path, Band(dem_grid, dem_coarse), fmt="%.6f")

    truth_path = out_dir / "truth.asc"
    write_ascii_grid(truth_path, Band(grid, truth.astype(np.float64)), fmt="%d")

    meta = {"side": side, "pixel_size": pixel_size, "seed": seed,
            "species_classes": [s.class_id for s in SPECIES],
            "crowns_per_species": crowns_per_species}
    (out_dir / "scene.json").write_text(json.dumps(meta, indent=2))
    return {"ortho": str(ortho_path), "dem": str(dem_path), "truth": str(truth_path)}


def default_pipeline_config(scene_dir, workdir) -> dict:
    """Pipeline configuration tuned to finish the synthetic scene quickly."""
    scene_dir = Path(scene_dir)
    return {
        "version": 1,
        "ortho": str(scene_dir / "ortho.png"),
        "dem": str(scene_dir / "dem.asc"),
        "slope": None,
        "weights": [1, 1, 1, 2, 3],
        "workdir": str(workdir),
        "segmentation": {"scale": 200.0, "shape": 0.2, "compactness": 0.5},
        "labeling": {"truth_raster": str(scene_dir / "truth.asc")},
        "dataset": {
            "min_pixels": 25,
            "fill": 0,
            "pad_side": 64,
            "split_seed": 42,
            "augment": {"copies": 8, "rotation_deg": 180.0, "shift_frac": 0.1,
                        "shear_deg": 10.0, "zoom": [0.9, 1.1],
                        "flip_h": True, "flip_v": True, "seed": 42},
        },
        "classifier": {"input_side": 32, "conv_channels": [16, 32, 64], "kernel": 3,
                       "pool": 2, "hidden": 64, "epochs": 12, "batch_size": 32,
                       "base_lr": 0.01, "momentum": 0.9, "step_size_pct": 33,
                       "gamma": 0.1, "seed": 42},
    }
