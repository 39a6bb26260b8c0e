"""End-to-end transfer: source preconditioning, grid, target rasterization, projection."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import project_global, project_per_face
from .geometry import Mesh
from .grid import SpatialGrid, build_grid, grid_geometry
from .project import ProjectionParams, project_texture
from .raster import ProjectionMap, rasterize_projection_map
from .splat import SplatCloud, default_spacing, densify, splats_from_mesh
from .texture import Texture

METHODS = ("grid", "global", "perface")
STAGES = ("splats", "grid", "raster", "project")


@dataclass
class TransferConfig:
    target_mesh: Mesh
    source_mesh: Mesh | None = None
    source_texture: Texture | None = None
    source_splats: SplatCloud | None = None
    width: int = 1024
    height: int = 1024
    method: str = "grid"
    params: ProjectionParams = field(default_factory=ProjectionParams)
    supersample: int = 1
    densify: bool = True
    densify_spacing: float | None = None  # None = 1.5 x median NN distance
    max_angle_deg: float = 60.0
    max_dist: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        has_mesh = self.source_mesh is not None and self.source_texture is not None
        if not has_mesh and self.source_splats is None:
            raise ValueError("need a source mesh with texture, or source splats")
        if self.method == "perface" and not has_mesh:
            raise ValueError("perface method needs a source mesh and texture")


@dataclass
class TransferResult:
    texture: Texture
    coverage: float
    timings: dict[str, float]
    pmap: ProjectionMap
    cloud: SplatCloud | None = None
    grid: SpatialGrid | None = None
    params: ProjectionParams | None = None
    densify_spacing: float | None = None
    texels_projected: int = 0

    @property
    def total_time(self) -> float:
        return sum(self.timings.values())


def prepare_source(config: TransferConfig) -> tuple[SplatCloud, float | None]:
    """Build (or take) the source cloud and densify it. Returns the cloud and the spacing used."""
    if config.source_splats is not None:
        cloud = config.source_splats
    else:
        cloud = splats_from_mesh(config.source_mesh, config.source_texture, config.supersample)
    spacing = None
    if config.densify:
        spacing = config.densify_spacing if config.densify_spacing is not None else default_spacing(cloud)
        cloud = densify(cloud, spacing)
    return cloud, spacing


def run_transfer(config: TransferConfig, threads: int = 1, rows=None,
                 cloud: SplatCloud | None = None) -> TransferResult:
    """Run one transfer. ``threads`` drives grid insertion, rasterization and
    projection. ``rows`` limits projection to a subset of texture rows.
    A precomputed ``cloud`` skips source preconditioning."""
    timings = dict.fromkeys(STAGES, 0.0)
    spacing = None
    if config.method != "perface" and cloud is None:
        t0 = time.perf_counter()
        cloud, spacing = prepare_source(config)
        timings["splats"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pmap = rasterize_projection_map(config.target_mesh, config.width, config.height, threads)
    timings["raster"] = time.perf_counter() - t0

    grid = None
    params = config.params
    if config.method == "grid":
        t0 = time.perf_counter()
        grid = build_grid(cloud, config.width * config.height, threads)
        timings["grid"] = time.perf_counter() - t0
        params = params.resolved(grid.cell_size)
        t0 = time.perf_counter()
        tex, coverage = project_texture(grid, cloud, pmap, params, threads, rows)
        timings["project"] = time.perf_counter() - t0
    elif config.method == "global":
        params = params.resolved(grid_geometry(cloud, config.width * config.height)[1])
        t0 = time.perf_counter()
        tex, coverage = project_global(cloud, pmap, params, threads, rows)
        timings["project"] = time.perf_counter() - t0
    else:
        t0 = time.perf_counter()
        tex, coverage = project_per_face(config.source_mesh, config.source_texture, pmap,
                                         config.max_angle_deg, config.max_dist,
                                         params.fallback_color, threads, rows)
        timings["project"] = time.perf_counter() - t0
    projected = pmap.valid_count if rows is None else int(np.count_nonzero(pmap.valid[np.asarray(rows)]))
    return TransferResult(tex, coverage, timings, pmap, cloud, grid, params, spacing, projected)
