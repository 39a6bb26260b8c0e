"""Exception hierarchy shared by every pipeline stage."""


class PipelineError(Exception):
    """Base class for all pipeline failures.

    ``stage`` names the part of the pipeline that failed so the CLI can
    report it without inspecting the exception type.
    """

    stage = "pipeline"

    def __init__(self, message: str = "", stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


# geometry / OBJ
class MeshError(PipelineError):
    stage = "mesh"


class MissingUV(MeshError):
    pass


class MissingNormal(MeshError):
    pass


class MalformedRecord(MeshError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyMesh(MeshError):
    pass


class DegenerateNormal(MeshError):
    pass


# splats / PLY
class SplatError(PipelineError):
    stage = "splats"


class EmptyCloud(SplatError):
    pass


class BadHeader(SplatError):
    pass


class MissingProperty(SplatError):
    pass


class TruncatedBody(SplatError):
    pass


class IterationCapExceeded(UserWarning):
    """Densification stopped before every gap closed; the result is best effort."""

    def __init__(self, iterations: int, max_gap: float):
        super().__init__(f"densify hit {iterations} iterations, remaining max gap {max_gap:.6g}")
        self.iterations = iterations
        self.max_gap = max_gap


# raster / projection / metrics
class NoCoverage(PipelineError):
    stage = "raster"


class GridCloudMismatch(PipelineError):
    stage = "project"


class DimensionMismatch(PipelineError):
    stage = "metrics"
