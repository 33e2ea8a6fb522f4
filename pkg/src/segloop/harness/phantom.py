"""Synthetic image/ground-truth pairs with speckle and shadow artifacts.

Real clinical volumes cannot ship with the repository, so experiments run
on phantoms: a randomly deformed ellipsoid as ground truth inside a noisy
two-level intensity image, optionally attenuated beyond a random occluder
depth to mimic acoustic shadowing.  Generation is a pure function of
(spec.seed, index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PhantomError
from ..morph import gaussian_blur
from ..rng import Rng
from ..volume import BinaryMask, VoxelGrid, connected_components


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    count: int = 20
    radii_mm: tuple[float, float, float] = (16.0, 13.0, 11.0)
    deform_amplitude_px: float = 3.0
    deform_sigma_px: float = 6.0
    speckle_sigma: float = 0.25
    blur_sigma: float = 0.8
    shadow: bool = False
    shadow_axis: int = 2
    shadow_attenuation: float = 0.5
    splits: tuple[int, int, int] | None = None
    seed: int = 0
    occupancy_range: tuple[float, float] = (0.02, 0.20)

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims), "spacing": list(self.spacing), "count": self.count,
            "radii_mm": list(self.radii_mm),
            "deform_amplitude_px": self.deform_amplitude_px,
            "deform_sigma_px": self.deform_sigma_px,
            "speckle_sigma": self.speckle_sigma, "blur_sigma": self.blur_sigma,
            "shadow": self.shadow, "shadow_axis": self.shadow_axis,
            "shadow_attenuation": self.shadow_attenuation,
            "splits": list(self.splits) if self.splits else None,
            "seed": self.seed,
            "occupancy_range": list(self.occupancy_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        for key in ("dims", "spacing", "radii_mm", "occupancy_range"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("splits"):
            d["splits"] = tuple(d["splits"])
        return cls(**d)


def _smooth_field(shape, gen, sigma_px: float, amplitude_px: float) -> np.ndarray:
    """(3, *shape) displacement, max magnitude equal to amplitude_px."""
    comps = np.stack([gaussian_blur(gen.standard_normal(shape), sigma_px) for _ in range(3)])
    if amplitude_px == 0:
        return np.zeros_like(comps)
    mag = np.sqrt((comps ** 2).sum(axis=0))
    peak = float(mag.max())
    return comps * (amplitude_px / peak) if peak > 0 else comps


def _attempt_gt(spec: PhantomSpec, gen) -> BinaryMask:
    dims = np.asarray(spec.dims)
    spacing = np.asarray(spec.spacing)
    center = (dims - 1) / 2.0 + gen.uniform(-0.1, 0.1, size=3) * dims
    radii = np.asarray(spec.radii_mm) * gen.uniform(0.9, 1.15, size=3)
    disp = _smooth_field(spec.dims, gen, spec.deform_sigma_px, spec.deform_amplitude_px)
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in spec.dims], indexing="ij")
    # ellipsoid membership evaluated at the displaced voxel position (mm)
    q = np.zeros(spec.dims, dtype=np.float64)
    for ax in range(3):
        pos_mm = (grids[ax] + disp[ax] - center[ax]) * spacing[ax]
        q += (pos_mm / radii[ax]) ** 2
    indicator = (q <= 1.0).astype(np.float64)
    return BinaryMask.from_bool(gaussian_blur(indicator, 1.2) > 0.5, spec.spacing)


def generate_phantom(spec: PhantomSpec, index: int) -> tuple[VoxelGrid, BinaryMask]:
    """Deterministic (image, ground truth) pair for a subject index."""
    nvox = spec.dims[0] * spec.dims[1] * spec.dims[2]
    lo, hi = spec.occupancy_range
    for attempt in range(10):
        rng = Rng(spec.seed).spawn(index, attempt)
        gt = _attempt_gt(spec, rng.gen)
        occupancy = gt.voxel_count / nvox
        if not lo <= occupancy <= hi:
            continue
        _, sizes = connected_components(gt, connectivity=26)
        if len(sizes) != 1:
            continue
        gen = rng.gen
        base = np.where(gt.bool(), 0.7, 0.3)
        speckle = np.clip(np.exp(spec.speckle_sigma * gen.standard_normal(spec.dims)),
                          0.25, 4.0)
        img = gaussian_blur(base * speckle, spec.blur_sigma)
        if spec.shadow:
            ax = spec.shadow_axis
            n = spec.dims[ax]
            depth = int(gen.integers(n // 3, 2 * n // 3))
            ramp = np.clip((np.arange(n, dtype=np.float64) - depth) / max(n - 1 - depth, 1),
                           0.0, 1.0)
            shape = [1, 1, 1]
            shape[ax] = n
            img = img * (1.0 - spec.shadow_attenuation * ramp.reshape(shape))
        return VoxelGrid(img.astype(np.float32), spec.spacing), gt
    raise PhantomError(f"phantom {index}: ground truth violated its invariants "
                       f"in 10 attempts (occupancy target {spec.occupancy_range})")
