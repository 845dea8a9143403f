"""Stitch per-chunk dense-reconstruction outputs into a globally consistent
trajectory and point cloud: reliability-masked single-step similarity
alignment, training-free loop retrieval from patch tokens, and Sim(3)
pose-graph optimization.
"""

from .config import PipelineConfig
from .sim3 import Sim3, Sim3Tangent

__all__ = ["PipelineConfig", "Sim3", "Sim3Tangent"]
__version__ = "0.1.0"
