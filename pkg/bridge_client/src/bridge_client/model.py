"""Model slot: the dummy prompt-dilation model and the real-model hook.

A model is a callable

    model(image, spacing, prompts, previous, iteration) -> mask

with ``image`` a float32 array of shape (nx, ny, nz), ``spacing`` the voxel
size in mm, ``prompts`` a :class:`~bridge_client.prompts.ParsedPrompts`,
``previous`` the previous uint8 mask or None, returning a uint8 {0,1} array
of the image's shape.

The dummy model starts from the previous mask (or empty), sets 1 on the
Euclidean ball of ``radius_mm`` around every positive prompt voxel, then 0
around every negative one; box prompts are ignored.  The ball contains
voxels whose center-to-center distance is <= radius_mm.  These semantics are
pinned so the driving harness's in-process twin produces identical masks.

Real checkpoints mount via ``load_model("package.module:callable")``; the
import happens on demand so this package stays dependency-light.
"""

from __future__ import annotations

import importlib

import numpy as np

from .prompts import ParsedPrompts

DEFAULT_RADIUS_MM = 4.0


def ball_offsets(radius_mm: float, spacing) -> np.ndarray:
    reach = [int(np.floor(radius_mm / s)) for s in spacing]
    axes = [np.arange(-r, r + 1) for r in reach]
    di, dj, dk = np.meshgrid(*axes, indexing="ij")
    d2 = ((di * spacing[0]) ** 2 + (dj * spacing[1]) ** 2 + (dk * spacing[2]) ** 2)
    keep = d2 <= radius_mm * radius_mm
    return np.stack([di[keep], dj[keep], dk[keep]], axis=1).astype(np.int64)


def _paint(mask: np.ndarray, centers, offsets: np.ndarray, value: int) -> None:
    dims = mask.shape
    for c in centers:
        coords = offsets + np.asarray(c, dtype=np.int64)
        ok = ((coords >= 0).all(axis=1)
              & (coords[:, 0] < dims[0]) & (coords[:, 1] < dims[1])
              & (coords[:, 2] < dims[2]))
        coords = coords[ok]
        mask[coords[:, 0], coords[:, 1], coords[:, 2]] = value


class DilationModel:
    def __init__(self, radius_mm: float = DEFAULT_RADIUS_MM):
        self.radius_mm = float(radius_mm)

    def __call__(self, image: np.ndarray, spacing, prompts: ParsedPrompts,
                 previous: np.ndarray | None, iteration: int) -> np.ndarray:
        mask = (previous.astype(np.uint8).copy() if previous is not None
                else np.zeros(image.shape, dtype=np.uint8))
        offsets = ball_offsets(self.radius_mm, spacing)
        _paint(mask, prompts.positive_voxels, offsets, 1)
        _paint(mask, prompts.negative_voxels, offsets, 0)
        return mask


def load_model(spec: str, radius_mm: float = DEFAULT_RADIUS_MM):
    """``dummy`` or ``package.module:callable``."""
    if spec == "dummy":
        return DilationModel(radius_mm)
    module_name, sep, attr = spec.partition(":")
    if not sep:
        raise ValueError(f"model spec {spec!r} must be 'dummy' or 'module:callable'")
    module = importlib.import_module(module_name)
    model = getattr(module, attr)
    if not callable(model):
        raise TypeError(f"{spec} is not callable")
    return model
