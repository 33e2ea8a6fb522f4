"""Classical prompt-responsive baseline: seeded geodesic region growing."""

from __future__ import annotations

import heapq

import numpy as np

from ..errors import BackendError
from ..prompts import Polarity
from ..volume import BinaryMask
from .base import SegmentationRequest, Segmenter, ball_offsets, check_result_geometry, paint_balls


class RegionGrowBackend(Segmenter):
    """Breadth-first geodesic growth from positive prompt voxels.

    Growth is 6-connected over voxels whose intensity stays within
    ``intensity_tolerance`` of the seed-neighborhood mean, capped at
    ``max_geodesic_mm`` of path length.  Negative prompt voxels and their
    ``barrier_radius_mm`` balls are barriers that accumulate over the
    session: barrier voxels are never part of the output, and they are also
    carved out of the previous mask.
    """

    def __init__(self, intensity_tolerance: float, max_geodesic_mm: float,
                 barrier_radius_mm: float = 2.0):
        self.intensity_tolerance = float(intensity_tolerance)
        self.max_geodesic_mm = float(max_geodesic_mm)
        self.barrier_radius_mm = float(barrier_radius_mm)
        self._barriers: np.ndarray | None = None
        self._first_call = True

    def segment(self, request: SegmentationRequest) -> BinaryMask:
        image = np.asarray(request.image.data, dtype=np.float64)
        dims = request.image.dims
        spacing = request.image.spacing
        if self._barriers is None:
            self._barriers = np.zeros(dims, dtype=bool)
        positives = request.prompts.voxels_with_polarity(Polarity.POSITIVE)
        negatives = request.prompts.voxels_with_polarity(Polarity.NEGATIVE)
        if self._first_call and not positives:
            raise BackendError("region growing needs at least one positive prompt "
                               "voxel at the first call")
        self._first_call = False
        if negatives:
            paint_balls(self._barriers, negatives,
                        ball_offsets(self.barrier_radius_mm, spacing), True)
        grown = np.zeros(dims, dtype=bool)
        seeds = [v for v in positives if not self._barriers[v[0], v[1], v[2]]]
        if seeds:
            mean = self._seed_neighborhood_mean(image, seeds)
            self._grow(image, seeds, mean, grown, spacing)
        prev = request.previous_mask.bool() if request.previous_mask is not None \
            else np.zeros(dims, dtype=bool)
        out = (prev | grown) & ~self._barriers
        return check_result_geometry(request, BinaryMask.from_bool(out, spacing))

    @staticmethod
    def _seed_neighborhood_mean(image: np.ndarray, seeds) -> float:
        dims = image.shape
        vals = []
        for v in seeds:
            vals.append(image[v[0], v[1], v[2]])
            for ax, d in ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)):
                n = list(v)
                n[ax] += d
                if 0 <= n[ax] < dims[ax]:
                    vals.append(image[n[0], n[1], n[2]])
        return float(np.mean(vals))

    def _grow(self, image, seeds, mean, grown, spacing):
        tol = self.intensity_tolerance
        cap = self.max_geodesic_mm
        barriers = self._barriers
        dims = image.shape
        best: dict[tuple[int, int, int], float] = {}
        heap = []
        for v in seeds:
            v = tuple(int(x) for x in v)
            if abs(image[v] - mean) <= tol:
                best[v] = 0.0
                heapq.heappush(heap, (0.0, v))
        steps = [(0, 1, spacing[0]), (0, -1, spacing[0]), (1, 1, spacing[1]),
                 (1, -1, spacing[1]), (2, 1, spacing[2]), (2, -1, spacing[2])]
        while heap:
            d, v = heapq.heappop(heap)
            if d > best.get(v, np.inf):
                continue
            grown[v] = True
            for ax, sgn, step in steps:
                n = list(v)
                n[ax] += sgn
                if not 0 <= n[ax] < dims[ax]:
                    continue
                n = (n[0], n[1], n[2])
                nd = d + step
                if nd > cap or barriers[n] or abs(image[n] - mean) > tol:
                    continue
                if nd < best.get(n, np.inf):
                    best[n] = nd
                    heapq.heappush(heap, (nd, n))
