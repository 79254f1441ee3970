"""Cartogram-aided demand forecasting for station-based bike sharing."""

__version__ = "0.1.0"

from .errors import CartoflowError, NumericFailure, ValidationError  # noqa: E402
from .geometry import CartogramLayout, build_cartogram, voronoi_cells  # noqa: E402
from .dataset import GridSeries, GridSpec, ResolutionConfig, bin_to_grid, ingest_csv  # noqa: E402
from .model import ModelConfig, ModelState, TrainConfig, forward, backward, predict, train  # noqa: E402

__all__ = [
    "CartoflowError", "NumericFailure", "ValidationError",
    "CartogramLayout", "build_cartogram", "voronoi_cells",
    "GridSeries", "GridSpec", "ResolutionConfig", "bin_to_grid", "ingest_csv",
    "ModelConfig", "ModelState", "TrainConfig", "forward", "backward", "predict", "train",
]
