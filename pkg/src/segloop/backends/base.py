"""Segmentation backend contract and shared voxel-ball helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BackendError, GeometryError
from ..prompts import PromptSet
from ..volume import BinaryMask, VoxelGrid


@dataclass
class SegmentationRequest:
    """One iteration's input to a backend."""

    image: VoxelGrid
    prompts: PromptSet
    previous_mask: BinaryMask | None
    session_id: str
    iteration: int

    def __post_init__(self):
        if self.previous_mask is not None:
            self.image.require_same_geometry(self.previous_mask)
        if self.iteration != self.prompts.iteration:
            raise BackendError(
                f"request iteration {self.iteration} != prompt set iteration "
                f"{self.prompts.iteration}")


class Segmenter:
    """Behavioral contract: produce a mask of the request's geometry,
    deterministically for a given (request, backend seed)."""

    def segment(self, request: SegmentationRequest) -> BinaryMask:
        raise NotImplementedError

    def close(self) -> None:
        """Release external resources (no-op for in-process backends)."""


def check_result_geometry(request: SegmentationRequest, mask: BinaryMask) -> BinaryMask:
    if not mask.same_geometry(request.image):
        raise GeometryError(
            f"backend returned {mask.dims}@{mask.spacing}, expected "
            f"{request.image.dims}@{request.image.spacing}")
    return mask


def ball_offsets(radius_mm: float, spacing) -> np.ndarray:
    """Integer voxel offsets whose center-to-center distance is <= radius_mm."""
    if radius_mm < 0:
        raise ValueError(f"radius must be >= 0, got {radius_mm}")
    reach = [int(np.floor(radius_mm / s)) for s in spacing]
    axes = [np.arange(-r, r + 1) for r in reach]
    di, dj, dk = np.meshgrid(*axes, indexing="ij")
    d2 = ((di * spacing[0]) ** 2 + (dj * spacing[1]) ** 2 + (dk * spacing[2]) ** 2)
    keep = d2 <= radius_mm * radius_mm
    return np.stack([di[keep], dj[keep], dk[keep]], axis=1).astype(np.int64)


def paint_balls(target: np.ndarray, centers, offsets: np.ndarray, value: bool,
                limit: np.ndarray | None = None) -> None:
    """Set ``target`` to ``value`` on the ball around each center, clipped to
    the volume and optionally restricted to ``limit``."""
    dims = target.shape
    for c in centers:
        coords = offsets + np.asarray(c, dtype=np.int64)
        ok = ((coords >= 0).all(axis=1)
              & (coords[:, 0] < dims[0]) & (coords[:, 1] < dims[1]) & (coords[:, 2] < dims[2]))
        coords = coords[ok]
        if limit is not None:
            coords = coords[limit[coords[:, 0], coords[:, 1], coords[:, 2]]]
        target[coords[:, 0], coords[:, 1], coords[:, 2]] = value
