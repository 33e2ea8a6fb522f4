"""Replay backend: re-score predictions saved to disk."""

from __future__ import annotations

import os

from ..errors import ReplayError
from ..volume import BinaryMask, read_volume
from .base import SegmentationRequest, Segmenter, check_result_geometry


class ReplayBackend(Segmenter):
    """Returns the stored mask ``iter_<k>`` for each requested iteration.

    Masks live in a directory as ``iter_<k>.vgh`` (native) or
    ``iter_<k>.nii``.
    """

    def __init__(self, directory):
        self.directory = os.fspath(directory)

    def segment(self, request: SegmentationRequest) -> BinaryMask:
        stem = os.path.join(self.directory, f"iter_{request.iteration}")
        for ext in (".vgh", ".nii"):
            path = stem + ext
            if os.path.exists(path):
                mask = read_volume(path, as_mask=True)
                return check_result_geometry(request, mask)
        raise ReplayError(f"no stored mask for iteration {request.iteration} "
                          f"under {self.directory} (looked for iter_{request.iteration}.vgh/.nii)")
