"""A cooperative stand-in for an interactive segmentation model.

The oracle starts from a corrupted copy of the ground truth and repairs it
around every prompt voxel it receives, so session Dice climbs over
iterations the way a well-behaved model's would.  All randomness sits in the
initial corruption; segmentation itself is deterministic.
"""

from __future__ import annotations

import numpy as np

from ..errors import BackendError, PhantomError
from ..metrics import dice
from ..prompts import Polarity
from ..rng import Rng
from ..volume import BinaryMask, connected_components
from .base import SegmentationRequest, Segmenter, ball_offsets, check_result_geometry, paint_balls


def corrupt_mask(gt: BinaryMask, rng: Rng, dice_range=(0.6, 0.85),
                 max_attempts: int = 10) -> BinaryMask:
    """Corrupt ``gt`` into a plausible imperfect prediction.

    Adds one off-target blob near the object, then carves balls out of the
    object until Dice lands in ``dice_range``.
    """
    lo, hi = dice_range
    gtb = gt.bool()
    gt_idx = np.argwhere(gtb)
    if gt_idx.shape[0] == 0:
        raise BackendError("cannot corrupt an empty ground truth")
    spacing = gt.spacing
    for attempt in range(max_attempts):
        gen = rng.spawn(attempt).gen
        cur = gtb.copy()
        # off-target blob: a ball just outside the object
        center = gt_idx[gen.integers(gt_idx.shape[0])]
        direction = gen.standard_normal(3)
        direction /= max(np.linalg.norm(direction), 1e-9)
        shift_mm = gen.uniform(6.0, 12.0)
        fp_center = center + np.round(direction * shift_mm / np.asarray(spacing)).astype(np.int64)
        fp_center = np.clip(fp_center, 0, np.asarray(gt.dims) - 1)
        paint_balls(cur, [fp_center], ball_offsets(gen.uniform(2.5, 4.5), spacing), True,
                    limit=~gtb)
        # carve false negatives until Dice drops into range
        for _ in range(200):
            d = dice(BinaryMask.from_bool(cur, spacing), gt)
            if d <= hi:
                break
            target = np.argwhere(cur & gtb)
            if target.shape[0] == 0:
                break
            hole = target[gen.integers(target.shape[0])]
            paint_balls(cur, [hole], ball_offsets(gen.uniform(2.0, 4.0), spacing), False)
        d = dice(BinaryMask.from_bool(cur, spacing), gt)
        if lo <= d <= hi and cur.any():
            return BinaryMask.from_bool(cur, spacing)
    raise PhantomError(f"could not corrupt mask into Dice range {dice_range} "
                       f"after {max_attempts} attempts")


class OracleBackend(Segmenter):
    """Repairs its current mask toward the ground truth around prompts.

    Positive prompt voxels restore the ground truth within
    ``repair_radius_mm``, limited to the false-negative component containing
    the voxel; negative ones clear the false-positive component within the
    radius; a box clears everything outside it.  Dice versus the ground
    truth is non-decreasing under any prompt sequence derived from the
    session's own predictions.
    """

    def __init__(self, gt: BinaryMask, seed: int, repair_radius_mm: float = 8.0,
                 initial_dice=(0.6, 0.85)):
        self.gt = gt
        self.repair_radius_mm = float(repair_radius_mm)
        self.current = corrupt_mask(gt, Rng(seed).spawn(0xC0), tuple(initial_dice))
        self._offsets = ball_offsets(self.repair_radius_mm, gt.spacing)

    def segment(self, request: SegmentationRequest) -> BinaryMask:
        if not request.image.same_geometry(self.gt):
            raise BackendError("oracle ground truth does not match the request geometry")
        gtb = self.gt.bool()
        cur = self.current.bool().copy()
        spacing = self.gt.spacing
        # error decomposition is fixed at request start
        fn_labels, n_fn = self._labels(gtb & ~cur)
        fp_labels, n_fp = self._labels(cur & ~gtb)
        for polarity, labels, n, value in ((Polarity.POSITIVE, fn_labels, n_fn, True),
                                           (Polarity.NEGATIVE, fp_labels, n_fp, False)):
            if n == 0:
                continue
            voxels = request.prompts.voxels_with_polarity(polarity)
            for v in voxels:
                lab = int(labels[v[0], v[1], v[2]])
                if lab == 0:
                    continue
                paint_balls(cur, [v], self._offsets, value, limit=labels == lab)
        if request.prompts.box is not None:
            box = request.prompts.box
            inside = np.zeros(self.gt.dims, dtype=bool)
            inside[box.corner_min[0]:box.corner_max[0] + 1,
                   box.corner_min[1]:box.corner_max[1] + 1,
                   box.corner_min[2]:box.corner_max[2] + 1] = True
            cur &= inside
        self.current = BinaryMask.from_bool(cur, spacing)
        return check_result_geometry(request, self.current)

    @staticmethod
    def _labels(err: np.ndarray):
        mask = BinaryMask.from_bool(err, (1.0, 1.0, 1.0))
        if mask.is_empty():
            return np.zeros(err.shape, dtype=np.int32), 0
        labels, sizes = connected_components(mask, connectivity=26)
        return labels, len(sizes)
