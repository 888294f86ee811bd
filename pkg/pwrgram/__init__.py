"""3D power diagrams by independent per-cell clipping over a weighted BVH."""

from pwrgram.engine.builder import BuildConfig, PowerDiagram, build_diagram, empty_ratio
from pwrgram.engine.geometry import PrecisionMode, SiteArray, WeightedSite

__version__ = "0.1.0"

__all__ = [
    "BuildConfig",
    "PowerDiagram",
    "PrecisionMode",
    "SiteArray",
    "WeightedSite",
    "build_diagram",
    "empty_ratio",
]
