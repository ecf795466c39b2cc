"""Curvature potentials, stochastic gradient flows and spectral vanishing criteria for immersed manifolds."""

__version__ = "0.1.0"

from .catalog import ConfigError, chart_from_config, load_config  # noqa: E402
from .geometry import GeometryError, ImmersionChart  # noqa: E402

__all__ = ["ConfigError", "GeometryError", "ImmersionChart", "__version__", "chart_from_config", "load_config"]
