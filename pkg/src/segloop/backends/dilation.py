"""Prompt-ball painter: the in-process twin of the reference bridge server's
dummy model.

Semantics are pinned so that an external implementation can reproduce them
bit for bit: starting from the previous mask (or empty), set 1 on the
Euclidean ball of ``radius_mm`` around every positive point/scribble voxel,
then set 0 on the ball around every negative one.  Box prompts are ignored.
The ball contains voxels whose center-to-center distance is <= radius_mm.
"""

from __future__ import annotations

import numpy as np

from ..prompts import Polarity
from ..volume import BinaryMask
from .base import SegmentationRequest, Segmenter, ball_offsets, check_result_geometry, paint_balls


class DilationBackend(Segmenter):
    def __init__(self, radius_mm: float = 4.0):
        self.radius_mm = float(radius_mm)

    def segment(self, request: SegmentationRequest) -> BinaryMask:
        dims = request.image.dims
        spacing = request.image.spacing
        out = (request.previous_mask.bool().copy() if request.previous_mask is not None
               else np.zeros(dims, dtype=bool))
        offsets = ball_offsets(self.radius_mm, spacing)
        paint_balls(out, request.prompts.voxels_with_polarity(Polarity.POSITIVE), offsets, True)
        paint_balls(out, request.prompts.voxels_with_polarity(Polarity.NEGATIVE), offsets, False)
        return check_result_geometry(request, BinaryMask.from_bool(out, spacing))
