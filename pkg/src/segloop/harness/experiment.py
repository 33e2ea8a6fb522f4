"""Experiment runner: datasets, backend wiring, aggregation, report files.

``run_experiment`` executes one session per subject (optionally in a worker
pool), writes per-session records as NDJSON, then re-reads that file to
build the aggregate tables, so saved runs can always be re-aggregated.

Output files (all deterministic for a given config + seed + data):

* ``sessions.ndjson``  one canonical-JSON line per session
* ``aggregate.csv``    per-iteration table, columns: iteration, n,
  dice_mean, dice_ci, nsd_mean, nsd_ci, asd_mean, asd_ci, hd95_mean,
  hd95_ci, ratio_mean
* ``annotated.csv``    same columns on the annotated-slice restriction
  (written when slice_frequency > 1)
* ``summary.csv``      one row: n, failures, dice_mean, nsd_mean, asd_mean,
  hd95_mean, success_rate (final-iteration values)

Sessions that stop early with a perfect or successful prediction carry
their last metrics forward in per-iteration aggregates and contribute zero
prompt voxels afterwards; failed sessions are excluded from aggregates and
reported via ``failures``.
"""

from __future__ import annotations

import concurrent.futures
import glob
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..prompts import PromptConfig
from ..rng import Rng, derive_seed
from ..volume import BinaryMask, VoxelGrid, as_binary_mask, clip_percentiles, \
    foreground_mask, read_volume, resample_isotropic, zscore_normalize
from ..backends import (BridgeBackend, DilationBackend, OracleBackend,
                        RegionGrowBackend, ReplayBackend)
from .phantom import PhantomSpec, generate_phantom
from .session import SessionRecord, run_session

AGGREGATE_COLUMNS = ["iteration", "n", "dice_mean", "dice_ci", "nsd_mean", "nsd_ci",
                     "asd_mean", "asd_ci", "hd95_mean", "hd95_ci", "ratio_mean"]
SUMMARY_COLUMNS = ["n", "failures", "dice_mean", "nsd_mean", "asd_mean", "hd95_mean",
                   "success_rate"]


@dataclass
class ExperimentConfig:
    dataset: dict
    backend: dict
    prompts: PromptConfig
    iterations: int = 11
    success_dice: float = 0.95
    early_stop: bool = False
    seed: int = 0
    output_dir: str = "out"
    tolerance_mm: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 < self.success_dice <= 1.0:
            raise ConfigError(f"success_dice must be in (0, 1], got {self.success_dice}")
        if self.dataset.get("kind") not in ("phantom", "directory"):
            raise ConfigError(f"dataset.kind must be phantom or directory, got {self.dataset}")
        if self.backend.get("kind") not in ("oracle", "region_grow", "replay",
                                            "dilation", "bridge"):
            raise ConfigError(f"unknown backend kind {self.backend.get('kind')!r}")

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "backend": self.backend,
                "prompts": self.prompts.to_dict(), "iterations": self.iterations,
                "success_dice": self.success_dice, "early_stop": self.early_stop,
                "seed": self.seed, "output_dir": self.output_dir,
                "tolerance_mm": self.tolerance_mm, "workers": self.workers}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["prompts"] = PromptConfig.from_dict(d.get("prompts", {}))
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise ConfigError(f"{path}: {exc}") from exc

    def config_hash(self) -> str:
        """Hash over semantic fields (output location and parallelism do not
        change results)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Dataset and backend wiring
# ---------------------------------------------------------------------------

def _preprocess(image: VoxelGrid, gt: BinaryMask, target_mm: float):
    image = resample_isotropic(image, target_mm, "trilinear")
    gt = resample_isotropic(gt, target_mm, "nearest")
    fg = foreground_mask(image)
    image = zscore_normalize(clip_percentiles(image, fg), fg)
    return image, as_binary_mask(gt)


def load_subjects(cfg: ExperimentConfig) -> list[tuple[str, VoxelGrid, BinaryMask]]:
    ds = cfg.dataset
    if ds["kind"] == "phantom":
        spec = PhantomSpec.from_dict(ds["spec"])
        out = []
        for i in range(spec.count):
            image, gt = generate_phantom(spec, i)
            out.append((f"phantom_{i:03d}", image, gt))
        return out
    root = ds["path"]
    pairs = []
    for image_path in sorted(glob.glob(os.path.join(root, "*_image.vgh"))
                             + glob.glob(os.path.join(root, "*_image.nii"))):
        stem = os.path.basename(image_path).rsplit("_image.", 1)[0]
        ext = image_path.rsplit(".", 1)[1]
        label_path = os.path.join(root, f"{stem}_label.{ext}")
        if not os.path.exists(label_path):
            raise ConfigError(f"no label found for {image_path}")
        image = read_volume(image_path)
        gt = read_volume(label_path, as_mask=True)
        if ds.get("preprocess_mm"):
            image, gt = _preprocess(image, gt, float(ds["preprocess_mm"]))
        pairs.append((stem, image, gt))
    if not pairs:
        raise ConfigError(f"no '*_image.vgh'/'*_image.nii' subjects under {root}")
    return pairs


def make_backend(cfg: ExperimentConfig, gt: BinaryMask, subject_index: int):
    b = cfg.backend
    kind = b["kind"]
    if kind == "oracle":
        return OracleBackend(gt, seed=derive_seed(cfg.seed, subject_index, 0xB),
                             repair_radius_mm=b.get("repair_radius_mm", 8.0),
                             initial_dice=tuple(b.get("initial_dice", (0.6, 0.85))))
    if kind == "region_grow":
        return RegionGrowBackend(intensity_tolerance=b.get("intensity_tolerance", 0.25),
                                 max_geodesic_mm=b.get("max_geodesic_mm", 30.0),
                                 barrier_radius_mm=b.get("barrier_radius_mm", 2.0))
    if kind == "replay":
        return ReplayBackend(b["directory"])
    if kind == "dilation":
        return DilationBackend(radius_mm=b.get("radius_mm", 4.0))
    if kind == "bridge":
        if "command" in b:
            return BridgeBackend.from_command(b["command"])
        host, _, port = str(b["address"]).rpartition(":")
        return BridgeBackend.connect_tcp(host, int(port))
    raise ConfigError(f"unknown backend kind {kind!r}")


# ---------------------------------------------------------------------------
# Aggregation (always from serialized records)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _mean_ci(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    sem = float(arr.std(ddof=1)) / np.sqrt(arr.size)
    return mean, 1.96 * sem


def read_records(ndjson_path) -> list[SessionRecord]:
    records = []
    with open(ndjson_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SessionRecord.from_dict(json.loads(line)))
    return records


def _entry_at(record: SessionRecord, k: int):
    """Carry the last entry forward for sessions that stopped early."""
    return record.entries[min(k, len(record.entries) - 1)]


def aggregate_records(records: list[SessionRecord], iterations: int,
                      scope: str = "volume") -> list[dict]:
    """Per-iteration means and 95% normal-approximation CIs.

    ``scope`` is ``volume`` for whole-volume metrics or ``annotated`` for the
    annotated-slice restriction.
    """
    live = [r for r in records if not r.failed and r.entries]
    rows = []
    for k in range(iterations):
        cols = {"dice": [], "nsd": [], "asd": [], "hd95": []}
        ratios = []
        for r in live:
            entry = _entry_at(r, k)
            m = entry.metrics
            if scope == "annotated":
                m = m.annotated_slices_only
                if m is None:
                    continue
            cols["dice"].append(m.dice)
            cols["nsd"].append(m.nsd)
            cols["asd"].append(m.asd_mm)
            cols["hd95"].append(m.hd95_mm)
            voxels = (r.entries[k].prompts["scribble_voxels"]
                      if k < len(r.entries) else 0)
            ratios.append(voxels / r.gt_voxels)
        if not cols["dice"]:
            continue
        row = {"iteration": k, "n": len(cols["dice"])}
        for name, key in (("dice", "dice"), ("nsd", "nsd"), ("asd", "asd"), ("hd95", "hd95")):
            mean, ci = _mean_ci(cols[key])
            row[f"{name}_mean"] = mean
            row[f"{name}_ci"] = ci
        row["ratio_mean"] = float(np.mean(ratios))
        rows.append(row)
    return rows


def summarize_records(records: list[SessionRecord], iterations: int) -> dict:
    live = [r for r in records if not r.failed and r.entries]
    failures = sum(1 for r in records if r.failed)
    if not live:
        return {"n": 0, "failures": failures, "dice_mean": float("nan"),
                "nsd_mean": float("nan"), "asd_mean": float("nan"),
                "hd95_mean": float("nan"), "success_rate": 0.0}
    finals = [_entry_at(r, iterations - 1).metrics for r in live]
    return {
        "n": len(live),
        "failures": failures,
        "dice_mean": float(np.mean([m.dice for m in finals])),
        "nsd_mean": float(np.mean([m.nsd for m in finals])),
        "asd_mean": float(np.mean([m.asd_mm for m in finals])),
        "hd95_mean": float(np.mean([m.hd95_mm for m in finals])),
        "success_rate": float(np.mean([r.success for r in live])),
    }


def _write_csv(path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for c in columns:
                v = row[c]
                cells.append(str(v) if isinstance(v, int) else _fmt(float(v)))
            fh.write(",".join(cells) + "\n")


@dataclass
class ExperimentResult:
    output_dir: str
    records_path: str
    summary: dict
    failures: int
    files: list[str] = field(default_factory=list)


def run_experiment(cfg: ExperimentConfig, output_dir: str | None = None) -> ExperimentResult:
    out_dir = output_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    subjects = load_subjects(cfg)
    chash = cfg.config_hash()

    def run_one(item):
        index, (subject_id, image, gt) = item
        backend = make_backend(cfg, gt, index)
        try:
            return run_session(image, gt, backend, cfg, subject_id=subject_id,
                               session_rng=Rng(cfg.seed).spawn(index),
                               config_hash=chash)
        finally:
            backend.close()

    items = list(enumerate(subjects))
    if cfg.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(run_one, items))
    else:
        records = [run_one(item) for item in items]

    records_path = os.path.join(out_dir, "sessions.ndjson")
    with open(records_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")

    saved = read_records(records_path)
    files = [records_path]
    agg_path = os.path.join(out_dir, "aggregate.csv")
    _write_csv(agg_path, AGGREGATE_COLUMNS, aggregate_records(saved, cfg.iterations))
    files.append(agg_path)
    if cfg.prompts.slice_frequency > 1:
        ann_path = os.path.join(out_dir, "annotated.csv")
        _write_csv(ann_path, AGGREGATE_COLUMNS,
                   aggregate_records(saved, cfg.iterations, scope="annotated"))
        files.append(ann_path)
    summary = summarize_records(saved, cfg.iterations)
    summary_path = os.path.join(out_dir, "summary.csv")
    _write_csv(summary_path, SUMMARY_COLUMNS, [summary])
    files.append(summary_path)
    return ExperimentResult(output_dir=out_dir, records_path=records_path,
                            summary=summary, failures=summary["failures"], files=files)
