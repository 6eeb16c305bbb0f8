"""Gradient flow aggregation: growth, hitting statistics and rendering."""

__version__ = "0.1.0"

from .errors import DomainError, GFAError, GrowthAbort, TieError, TooManyFailures, UnsupportedOperation
from .flow import Absorbed, Attached, Failed, FlowConfig, Stalled, launch, launch_nearestmax
from .geometry import Cluster, ConvexHull, diameter, read_cluster_csv, write_cluster_csv
from .growth import GrowthConfig, GrowthTrace, grow, grow_nearestmax, verify_cluster
from .potential import Log, NearestMax, Power, PotentialKind, energy, gradient, laplacian

__all__ = [
    "Absorbed", "Attached", "Cluster", "ConvexHull", "DomainError", "Failed", "FlowConfig", "GFAError",
    "GrowthAbort", "GrowthConfig", "GrowthTrace", "Log", "NearestMax", "Power", "PotentialKind", "Stalled",
    "TieError", "TooManyFailures", "UnsupportedOperation", "diameter", "energy", "gradient", "grow",
    "grow_nearestmax", "launch", "launch_nearestmax", "laplacian", "read_cluster_csv", "verify_cluster",
    "write_cluster_csv",
]
