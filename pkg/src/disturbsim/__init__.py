"""Deterministic DRAM read-disturbance mitigation simulator and toolkit."""

__version__ = "0.1.0"

from .dram import Geometry, TimingParams  # noqa: F401
from .errors import DisturbSimError  # noqa: F401
