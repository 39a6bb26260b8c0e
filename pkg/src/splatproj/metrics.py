"""Texture similarity and wall-clock benchmarking."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch
from .pipeline import STAGES, TransferConfig, run_transfer
from .raster import ProjectionMap
from .texture import Texture

MATCH_THRESHOLD = 2  # 8-bit levels, i.e. 2/255


@dataclass(frozen=True)
class SimilarityReport:
    similarity: float
    mean_abs_error: tuple[float, float, float]
    compared_texels: int

    def as_line(self) -> str:
        mae = ",".join(f"{m:.6f}" for m in self.mean_abs_error)
        return f"similarity={self.similarity:.6f} mean_abs_error={mae} compared_texels={self.compared_texels}"


def similarity(a: Texture, b: Texture, mask: ProjectionMap | np.ndarray | None = None) -> SimilarityReport:
    """Fraction of masked texels whose largest RGB difference is at most 2/255,
    plus the per-channel mean absolute error over the same texels."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(f"{a.width}x{a.height} vs {b.width}x{b.height}")
    if mask is None:
        valid = np.ones((a.height, a.width), dtype=bool)
    else:
        valid = mask.valid if isinstance(mask, ProjectionMap) else np.asarray(mask, dtype=bool)
        if valid.shape != (a.height, a.width):
            raise DimensionMismatch(f"mask {valid.shape[::-1]} vs texture {a.width}x{a.height}")
    diff = np.abs(a.pixels[..., :3].astype(np.int16) - b.pixels[..., :3].astype(np.int16))[valid]
    n = len(diff)
    if n == 0:
        return SimilarityReport(1.0, (0.0, 0.0, 0.0), 0)
    match = np.count_nonzero(diff.max(axis=1) <= MATCH_THRESHOLD)
    mae = tuple(float(x) for x in diff.mean(axis=0) / 255.0)
    return SimilarityReport(match / n, mae, n)


@dataclass(frozen=True)
class BenchReport:
    method: str
    threads: int
    splats: int
    triangles: int
    width: int
    height: int
    splats_s: float
    grid_s: float
    raster_s: float
    project_s: float
    coverage: float
    extrapolated: bool
    digest: str

    @property
    def total_s(self) -> float:
        return self.splats_s + self.grid_s + self.raster_s + self.project_s

    @property
    def method_s(self) -> float:
        """Time specific to the method: grid build plus projection."""
        return self.grid_s + self.project_s

    def as_line(self) -> str:
        d = asdict(self)
        d["total_s"] = self.total_s
        return " ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in d.items())


def bench(config: TransferConfig, threads: int = 1, repetitions: int = 1, sample_rows: int | None = None,
          cloud=None) -> BenchReport:
    """Run the full transfer ``repetitions`` times and keep the minimum of each stage.

    ``sample_rows`` evenly spaced texture rows are projected instead of the
    whole map, and the projection time is scaled by valid-texel count. Use it
    for the brute-force baselines, whose per-texel cost does not depend on
    where the texel is. ``cloud`` reuses an already prepared source.
    """
    if threads < 1 or repetitions < 1:
        raise ValueError("threads and repetitions must be >= 1")
    rows = None
    if sample_rows is not None and sample_rows < config.height:
        rows = np.unique(np.linspace(0, config.height - 1, sample_rows).round().astype(np.int64))
    best = dict.fromkeys(STAGES, np.inf)
    result = None
    for _ in range(repetitions):
        result = run_transfer(config, threads, rows, cloud=cloud)
        for k in STAGES:
            best[k] = min(best[k], result.timings[k])
    if cloud is not None and config.method != "perface":
        best["splats"] = 0.0
    project_s = best["project"]
    if rows is not None and result.texels_projected:
        project_s *= result.pmap.valid_count / result.texels_projected
    n_splats = len(result.cloud) if result.cloud is not None else 0
    return BenchReport(
        method=config.method, threads=threads, splats=n_splats,
        triangles=config.target_mesh.n_triangles, width=config.width, height=config.height,
        splats_s=best["splats"], grid_s=best["grid"], raster_s=best["raster"], project_s=project_s,
        coverage=result.coverage, extrapolated=rows is not None,
        digest=hashlib.sha256(result.texture.tobytes()).hexdigest()[:16],
    )


CSV_HEADER = ("stage", "threads", "seconds", "splats", "triangles", "width", "height")


def write_csv(reports: list[BenchReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in reports:
            for stage in STAGES:
                w.writerow((f"{r.method}/{stage}", r.threads, f"{getattr(r, stage + '_s'):.6f}",
                            r.splats, r.triangles, r.width, r.height))


