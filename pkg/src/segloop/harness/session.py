"""The human-in-the-loop session driver.

One session = one subject driven through the prompt/segment/score loop:
iteration 0 prompts from the ground truth alone, later iterations from the
errors of the previous prediction, metrics after every backend call.  The
loop ends after the configured iteration count, earlier when the prediction
matches the ground truth exactly (nothing left to prompt), or earlier still
under ``early_stop`` once the success bar is reached.

Per-iteration wall time is kept on the in-memory record only; serialized
records contain nothing volatile, so identical (config, seed, data) produce
byte-identical output files.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..metrics import MetricsReport, report, restrict_to_slices
from ..prompts import build_prompt_set
from ..rng import Rng
from ..volume import BinaryMask, VoxelGrid
from ..backends.base import SegmentationRequest, Segmenter, check_result_geometry


@dataclass
class IterationEntry:
    iteration: int
    prompts: dict
    metrics: MetricsReport
    wall_time_s: float  # in-memory only, excluded from serialization

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "prompts": dict(self.prompts),
                "metrics": self.metrics.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "IterationEntry":
        return cls(iteration=d["iteration"], prompts=dict(d["prompts"]),
                   metrics=MetricsReport.from_dict(d["metrics"]), wall_time_s=0.0)


@dataclass
class SessionRecord:
    subject_id: str
    config_hash: str
    gt_voxels: int
    entries: list[IterationEntry] = field(default_factory=list)
    success: bool = False
    failed: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "config_hash": self.config_hash,
            "gt_voxels": self.gt_voxels,
            "success": self.success,
            "failed": self.failed,
            "error": self.error,
            "iterations": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionRecord":
        return cls(subject_id=d["subject_id"], config_hash=d["config_hash"],
                   gt_voxels=d["gt_voxels"],
                   entries=[IterationEntry.from_dict(e) for e in d["iterations"]],
                   success=d["success"], failed=d["failed"], error=d.get("error"))


def run_session(image: VoxelGrid, gt: BinaryMask, backend: Segmenter, cfg,
                subject_id: str = "subject", session_rng: Rng | None = None,
                config_hash: str = "") -> SessionRecord:
    """Drive one subject through the interactive loop; never raises for
    backend failures (the record comes back flagged ``failed`` instead)."""
    image.require_same_geometry(gt)
    rng = session_rng if session_rng is not None else Rng(cfg.seed)
    record = SessionRecord(subject_id=subject_id, config_hash=config_hash,
                           gt_voxels=gt.voxel_count)
    pcfg = cfg.prompts
    # Table-3-style scope: the slices that actually received scribbles so far
    track_annotated = pcfg.slice_frequency > 1
    annotated: set[int] = set()
    pred: BinaryMask | None = None
    for k in range(cfg.iterations):
        if pred is not None and np.array_equal(pred.data, gt.data):
            break  # no errors left to prompt from
        try:
            prompt_set = build_prompt_set(gt, pred, pcfg, k, rng)
            if track_annotated:
                annotated.update(s.slice_index for s in prompt_set.scribbles)
            request = SegmentationRequest(image=image, prompts=prompt_set,
                                          previous_mask=pred, session_id=subject_id,
                                          iteration=k)
            t0 = time.perf_counter()
            pred = check_result_geometry(request, backend.segment(request))
            wall = time.perf_counter() - t0
            rep = report(gt, pred, cfg.tolerance_mm)
            if track_annotated and annotated:
                indices = sorted(annotated)
                rgt = restrict_to_slices(gt, pcfg.slice_axis, indices)
                rpred = restrict_to_slices(pred, pcfg.slice_axis, indices)
                if not rgt.is_empty() and not rpred.is_empty():
                    rep.annotated_slices_only = report(rgt, rpred, cfg.tolerance_mm)
        except Exception as exc:  # a failed session must not kill the sweep
            record.failed = True
            record.error = f"iteration {k}: {type(exc).__name__}: {exc}"
            break
        record.entries.append(IterationEntry(iteration=k, prompts=prompt_set.summary(),
                                             metrics=rep, wall_time_s=wall))
        if cfg.early_stop and rep.dice >= cfg.success_dice:
            break
    record.success = any(e.metrics.dice >= cfg.success_dice for e in record.entries)
    return record
