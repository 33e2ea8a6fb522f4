"""segloop: simulator and evaluation harness for iterative, prompt-driven
3D segmentation.

The package turns segmentation error regions into human-like visual prompts
(points, boxes, centerline/boundary scribbles), drives pluggable
segmentation backends through an interactive loop, and scores predictions
with surface-aware metrics.
"""

from . import backends, harness, metrics, morph, prompts, volume
from .rng import Rng, derive_seed
from .volume import BinaryMask, SliceAxis, VoxelGrid

__version__ = "0.1.0"

__all__ = [
    "backends", "harness", "metrics", "morph", "prompts", "volume",
    "Rng", "derive_seed", "BinaryMask", "SliceAxis", "VoxelGrid",
]
