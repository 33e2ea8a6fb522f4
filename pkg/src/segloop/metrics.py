"""Overlap and surface-distance metrics for binary masks.

Surface metrics operate on voxel surfaces (6-neighbor background rule with
the volume border as background) and measure voxel-center-to-voxel-center
distances in mm, so values are directly comparable across spacings.  Empty
masks are rejected by the surface metrics rather than mapped to sentinels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError
from .morph import edt_3d, surface_bool_3d
from .volume import BinaryMask, SliceAxis


@dataclass
class MetricsReport:
    dice: float
    nsd: float
    asd_mm: float
    hd95_mm: float
    annotated_slices_only: "MetricsReport | None" = None

    def to_dict(self) -> dict:
        out = {"dice": self.dice, "nsd": self.nsd, "asd_mm": self.asd_mm,
               "hd95_mm": self.hd95_mm}
        out["annotated_slices_only"] = (
            self.annotated_slices_only.to_dict() if self.annotated_slices_only else None)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        nested = d.get("annotated_slices_only")
        return cls(dice=d["dice"], nsd=d["nsd"], asd_mm=d["asd_mm"], hd95_mm=d["hd95_mm"],
                   annotated_slices_only=cls.from_dict(nested) if nested else None)


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """2|a n b| / (|a| + |b|); dice of two empty masks is 1."""
    a.require_same_geometry(b)
    na = a.voxel_count
    nb = b.voxel_count
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.bool() & b.bool()))
    return 2.0 * inter / (na + nb)


def _directed_surface_distances(a: BinaryMask, b: BinaryMask):
    """Distances (mm) from each surface voxel of a to the surface of b and
    vice versa, as two 1D arrays."""
    a.require_same_geometry(b)
    if a.is_empty() or b.is_empty():
        raise EmptyMaskError("surface metrics require two nonempty masks")
    surf_a = surface_bool_3d(a)
    surf_b = surface_bool_3d(b)
    dist_to_b = edt_3d(BinaryMask.from_bool(surf_b, b.spacing))
    dist_to_a = edt_3d(BinaryMask.from_bool(surf_a, a.spacing))
    return dist_to_b[surf_a], dist_to_a[surf_b]


def nsd(a: BinaryMask, b: BinaryMask, tolerance_mm: float = 1.0) -> float:
    """Fraction of the two surfaces lying within tolerance of each other."""
    d_ab, d_ba = _directed_surface_distances(a, b)
    agree = int(np.count_nonzero(d_ab <= tolerance_mm)) + int(np.count_nonzero(d_ba <= tolerance_mm))
    return agree / (d_ab.size + d_ba.size)


def asd(a: BinaryMask, b: BinaryMask) -> float:
    """Average symmetric surface distance in mm."""
    d_ab, d_ba = _directed_surface_distances(a, b)
    return float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))


def _percentile_linear(values: np.ndarray, pct: float) -> float:
    return float(np.percentile(values, pct, method="linear"))


def hd95(a: BinaryMask, b: BinaryMask) -> float:
    """Max of the two directed 95th-percentile surface distances (mm),
    percentile by linear interpolation."""
    d_ab, d_ba = _directed_surface_distances(a, b)
    return max(_percentile_linear(d_ab, 95.0), _percentile_linear(d_ba, 95.0))


def restrict_to_slices(mask: BinaryMask, axis: SliceAxis, indices) -> BinaryMask:
    """Stack the given slices into a thin volume with the same spacing."""
    indices = [int(i) for i in indices]
    if not indices:
        raise ValueError("need at least one slice index")
    data = np.asarray(mask.data)
    if axis is SliceAxis.TRANSVERSE:
        out = data[:, :, indices]
    else:
        out = data[indices, :, :]
    return BinaryMask(out, mask.spacing)


def report(a: BinaryMask, b: BinaryMask, tolerance_mm: float = 1.0,
           annotated_slices=None, axis: SliceAxis = SliceAxis.TRANSVERSE) -> MetricsReport:
    """All four metrics; optionally also on the annotated-slice restriction."""
    a.require_same_geometry(b)
    d = dice(a, b)
    d_ab, d_ba = _directed_surface_distances(a, b)
    total = d_ab.size + d_ba.size
    rep = MetricsReport(
        dice=d,
        nsd=(int(np.count_nonzero(d_ab <= tolerance_mm))
             + int(np.count_nonzero(d_ba <= tolerance_mm))) / total,
        asd_mm=float((d_ab.sum() + d_ba.sum()) / total),
        hd95_mm=max(_percentile_linear(d_ab, 95.0), _percentile_linear(d_ba, 95.0)),
    )
    if annotated_slices is not None:
        ra = restrict_to_slices(a, axis, annotated_slices)
        rb = restrict_to_slices(b, axis, annotated_slices)
        rep.annotated_slices_only = report(ra, rb, tolerance_mm)
    return rep
