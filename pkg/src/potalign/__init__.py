"""Behavior discovery and spatial alignment of articulated objects from motion data.

Stages: PoT extraction (``pot``), codebook and interval clustering
(``cluster``), shot partitioning (``partition``), candidate matching pairs
(``cmp``), homography and temporal TPS alignment (``homography``, ``ttps``)
and metrics (``evaluate``). ``pipeline`` and ``cli`` chain them over a run
directory; ``synth`` generates ground-truth scenes.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, desk_config
from .datamodel import Interval, Shot, load_shot_bundle

__all__ = ["PipelineConfig", "desk_config", "Interval", "Shot", "load_shot_bundle", "__version__"]
