"""Visual-prompt synthesis from segmentation error regions.

Positive prompts come from false-negative regions, negative prompts from
false-positive regions.  Scribbles are drawn slice-by-slice per 3D error
component: centerline style thins the in-slice region, boundary style blurs,
thresholds at a random level and takes the outline; both are then broken by
a random coverage mask and, for the warped styles, deformed and re-thickened
to mimic imprecise hand strokes.

Containment guarantees (checked by the validity suite): unwarped scribbles
are clipped to the source region; warped scribbles stay within
``ceil(warp_amplitude_px + 3 * thicken_sigma_px)`` pixels (Euclidean,
in-plane) of it.

Serialized form: one line per prompt element,
``kind polarity axis slice voxels`` with voxels as ``;``-joined ``i,j,k``
triples and ``-`` for fields that do not apply.  Identical inputs, config
and seed produce byte-identical serializations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError, PromptError
from .morph import (boundary_2d, gaussian_blur, random_break_mask,
                    random_deformation_2d, skeletonize_2d, threshold, warp_2d)
from .rng import Rng
from .volume import (BinaryMask, SliceAxis, connected_components, extract_slice,
                     plane_to_voxels)


class Polarity(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class ScribbleStyle(enum.Enum):
    CENTERLINE = "centerline"
    WARPED_CENTERLINE = "warped_centerline"
    BOUNDARY = "boundary"
    WARPED_BOUNDARY = "warped_boundary"

    @property
    def warped(self) -> bool:
        return self in (ScribbleStyle.WARPED_CENTERLINE, ScribbleStyle.WARPED_BOUNDARY)

    @property
    def from_boundary(self) -> bool:
        return self in (ScribbleStyle.BOUNDARY, ScribbleStyle.WARPED_BOUNDARY)


@dataclass(frozen=True)
class PointPrompt:
    voxel: tuple[int, int, int]
    polarity: Polarity


@dataclass(frozen=True)
class BoxPrompt:
    corner_min: tuple[int, int, int]
    corner_max: tuple[int, int, int]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.corner_min, self.corner_max)):
            raise PromptError(f"box corners out of order: {self.corner_min} > {self.corner_max}")

    def contains(self, voxel) -> bool:
        return all(lo <= v <= hi for lo, v, hi in
                   zip(self.corner_min, voxel, self.corner_max))


@dataclass(frozen=True)
class Scribble:
    voxels: tuple[tuple[int, int, int], ...]
    polarity: Polarity
    slice_axis: SliceAxis
    slice_index: int
    style: ScribbleStyle

    def __post_init__(self):
        if not self.voxels:
            raise PromptError("scribble must contain at least one voxel")
        plane = 2 if self.slice_axis is SliceAxis.TRANSVERSE else 0
        if any(v[plane] != self.slice_index for v in self.voxels):
            raise PromptError("scribble voxels must lie in the stated slice")


@dataclass
class PromptSet:
    points: list[PointPrompt]
    box: BoxPrompt | None
    scribbles: list[Scribble]
    iteration: int

    def __post_init__(self):
        if self.iteration < 0:
            raise PromptError(f"iteration must be >= 0, got {self.iteration}")
        if self.box is not None and self.iteration != 0:
            raise PromptError("a box prompt is only allowed at iteration 0")
        if self.iteration == 0 and any(p.polarity is Polarity.NEGATIVE
                                       for p in self.points + self.scribbles):
            raise PromptError("iteration 0 must not contain negative prompts")

    def voxels_with_polarity(self, polarity: Polarity) -> list[tuple[int, int, int]]:
        out = [p.voxel for p in self.points if p.polarity is polarity]
        for s in self.scribbles:
            if s.polarity is polarity:
                out.extend(s.voxels)
        return out

    @property
    def scribble_voxel_count(self) -> int:
        return sum(len(s.voxels) for s in self.scribbles)

    def summary(self) -> dict:
        return {
            "points_positive": sum(p.polarity is Polarity.POSITIVE for p in self.points),
            "points_negative": sum(p.polarity is Polarity.NEGATIVE for p in self.points),
            "box": int(self.box is not None),
            "scribbles_positive": sum(s.polarity is Polarity.POSITIVE for s in self.scribbles),
            "scribbles_negative": sum(s.polarity is Polarity.NEGATIVE for s in self.scribbles),
            "scribble_voxels": self.scribble_voxel_count,
        }


@dataclass
class PromptConfig:
    """Declarative description of which prompts to synthesize."""

    use_points: bool = True
    points_per_iteration: int = 1
    use_box: bool = False
    scribble_style: ScribbleStyle | None = None
    slice_axis: SliceAxis = SliceAxis.TRANSVERSE
    slice_frequency: int = 1
    min_region_voxels: int = 100
    warp_amplitude_px: float = 2.5
    warp_sigma_px: float = 6.0
    break_coverage: float = 0.5
    break_scale_px: float = 8.0
    # 0.5 keeps 1px strokes alive at the 0.5 threshold (line peak 0.787);
    # sigma >= 0.8 would erase them (peak 0.499)
    thicken_sigma_px: float = 0.5
    boundary_blur_px: float = 2.0
    seed: int | None = None

    def __post_init__(self):
        if self.slice_frequency < 1:
            raise PromptError(f"slice_frequency must be >= 1, got {self.slice_frequency}")
        if self.points_per_iteration < 0:
            raise PromptError("points_per_iteration must be >= 0")

    def to_dict(self) -> dict:
        return {
            "use_points": self.use_points,
            "points_per_iteration": self.points_per_iteration,
            "use_box": self.use_box,
            "scribble_style": self.scribble_style.value if self.scribble_style else None,
            "slice_axis": self.slice_axis.value,
            "slice_frequency": self.slice_frequency,
            "min_region_voxels": self.min_region_voxels,
            "warp_amplitude_px": self.warp_amplitude_px,
            "warp_sigma_px": self.warp_sigma_px,
            "break_coverage": self.break_coverage,
            "break_scale_px": self.break_scale_px,
            "thicken_sigma_px": self.thicken_sigma_px,
            "boundary_blur_px": self.boundary_blur_px,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptConfig":
        d = dict(d)
        style = d.get("scribble_style")
        d["scribble_style"] = ScribbleStyle(style) if style else None
        if "slice_axis" in d:
            d["slice_axis"] = SliceAxis.parse(d["slice_axis"])
        return cls(**d)


def warp_dilation_bound_px(cfg: PromptConfig) -> int:
    """In-plane Euclidean bound (px) on how far warped scribbles may stray
    from their source region."""
    return math.ceil(cfg.warp_amplitude_px + 3.0 * cfg.thicken_sigma_px)


# ---------------------------------------------------------------------------
# Elementary prompt ops
# ---------------------------------------------------------------------------

def sample_points(fn_mask: BinaryMask, fp_mask: BinaryMask, n_pos: int, n_neg: int,
                  rng: Rng) -> list[PointPrompt]:
    """Uniform without-replacement samples: positives from the FN region,
    negatives from the FP region; counts clamp to the region sizes."""
    fn_mask.require_same_geometry(fp_mask)
    out: list[PointPrompt] = []
    for mask, n, polarity in ((fn_mask, n_pos, Polarity.POSITIVE),
                              (fp_mask, n_neg, Polarity.NEGATIVE)):
        flat = np.flatnonzero(mask.flat())
        take = min(int(n), flat.size)
        if take == 0:
            continue
        chosen = rng.gen.choice(flat, size=take, replace=False)
        nx, ny, _ = mask.dims
        for f in chosen:
            f = int(f)
            out.append(PointPrompt((f % nx, (f // nx) % ny, f // (nx * ny)), polarity))
    return out


def ground_truth_box(gt: BinaryMask) -> BoxPrompt:
    """Tight axis-aligned bounding box of the foreground."""
    if gt.is_empty():
        raise EmptyMaskError("bounding box of an empty mask is undefined")
    idx = np.argwhere(gt.bool())
    return BoxPrompt(tuple(int(v) for v in idx.min(axis=0)),
                     tuple(int(v) for v in idx.max(axis=0)))


def filter_small_regions(error_mask: BinaryMask, min_voxels: int = 100) -> BinaryMask:
    """Remove 26-connected components with fewer than ``min_voxels`` voxels."""
    labels, sizes = connected_components(error_mask, connectivity=26)
    if not sizes:
        return error_mask
    keep = np.array([False] + [s >= min_voxels for s in sizes])
    return BinaryMask.from_bool(keep[labels], error_mask.spacing)


def select_slices(region: BinaryMask, axis: SliceAxis, frequency: int) -> list[int]:
    """Nonempty slice indices spaced ``frequency`` apart, anchored at the
    first nonempty slice."""
    if frequency < 1:
        raise ValueError(f"frequency must be >= 1, got {frequency}")
    data = np.asarray(region.data)
    axes = (0, 1) if axis is SliceAxis.TRANSVERSE else (1, 2)
    nonempty = np.flatnonzero(data.any(axis=axes))
    if nonempty.size == 0:
        return []
    i0 = int(nonempty[0])
    return [int(i) for i in nonempty if (int(i) - i0) % frequency == 0]


def prompt_volume_ratio(prompt_sets, gt: BinaryMask) -> float:
    """Total scribble voxels across the given prompt sets over |gt|."""
    if gt.is_empty():
        raise EmptyMaskError("prompt-to-volume ratio needs a nonempty ground truth")
    total = sum(ps.scribble_voxel_count for ps in prompt_sets)
    return total / gt.voxel_count


# ---------------------------------------------------------------------------
# Scribble generation
# ---------------------------------------------------------------------------

def _scribble_pixels_for_slice(plane: np.ndarray, style: ScribbleStyle,
                               cfg: PromptConfig, rng: Rng) -> np.ndarray:
    """Run the per-slice pipeline; returns a 2D uint8 image (may be empty)."""
    if style.from_boundary:
        blurred = gaussian_blur(plane.astype(np.float64), cfg.boundary_blur_px)
        lo, hi = float(blurred.min()), float(blurred.max())
        if not hi > lo:
            return np.zeros_like(plane, dtype=np.uint8)
        t = lo + float(rng.gen.uniform()) * (hi - lo)
        modified = threshold(blurred, t)
        base = boundary_2d(modified) & plane.astype(np.uint8)
    else:
        base = skeletonize_2d(plane)
    if not base.any():
        return base
    breaks = random_break_mask(base.shape, rng, cfg.break_coverage, cfg.break_scale_px)
    broken = base & breaks
    if not style.warped or not broken.any():
        return broken
    fld = random_deformation_2d(base.shape, rng, cfg.warp_amplitude_px, cfg.warp_sigma_px)
    warped = warp_2d(broken, fld)
    if not warped.any():
        return warped
    return threshold(gaussian_blur(warped.astype(np.float64), cfg.thicken_sigma_px), 0.5)


def _gen_scribbles(region: BinaryMask, cfg: PromptConfig, polarity: Polarity,
                   rng: Rng, style: ScribbleStyle) -> list[Scribble]:
    out: list[Scribble] = []
    for idx in select_slices(region, cfg.slice_axis, cfg.slice_frequency):
        plane = extract_slice(region, cfg.slice_axis, idx)
        pixels = _scribble_pixels_for_slice(plane, style, cfg, rng.spawn(idx))
        if not pixels.any():
            continue
        coords = plane_to_voxels(np.argwhere(pixels), cfg.slice_axis, idx)
        voxels = tuple(sorted(tuple(int(v) for v in row) for row in coords))
        out.append(Scribble(voxels, polarity, cfg.slice_axis, idx, style))
    return out


def gen_centerline_scribbles(region: BinaryMask, cfg: PromptConfig, polarity: Polarity,
                             rng: Rng) -> list[Scribble]:
    """Centerline scribbles: per selected slice, thin, break, and (for the
    warped style) deform and re-thicken.  ``region`` should already be
    size-filtered.  The warped/plain choice follows ``cfg.scribble_style``."""
    style = cfg.scribble_style
    if style is None or style.from_boundary:
        style = ScribbleStyle.CENTERLINE
    return _gen_scribbles(region, cfg, polarity, rng, style)


def gen_boundary_scribbles(region: BinaryMask, cfg: PromptConfig, polarity: Polarity,
                           rng: Rng) -> list[Scribble]:
    """Boundary scribbles: blur the slice, threshold at a random level
    between its min and max, outline, then break/warp as for centerlines."""
    style = cfg.scribble_style
    if style is None or not style.from_boundary:
        style = ScribbleStyle.BOUNDARY
    return _gen_scribbles(region, cfg, polarity, rng, style)


# ---------------------------------------------------------------------------
# Per-iteration prompt assembly
# ---------------------------------------------------------------------------

def _filtered_error_mask(mask: BinaryMask, min_voxels: int) -> BinaryMask:
    """Size filter with the largest-component fallback: a nonempty error mask
    never filters to nothing (the simulated user keeps correcting)."""
    if mask.is_empty():
        return mask
    filtered = filter_small_regions(mask, min_voxels)
    if not filtered.is_empty():
        return filtered
    labels, sizes = connected_components(mask, connectivity=26)
    best = 1 + int(np.argmax(sizes))
    return BinaryMask.from_bool(labels == best, mask.spacing)


def _components(mask: BinaryMask) -> list[BinaryMask]:
    labels, sizes = connected_components(mask, connectivity=26)
    return [BinaryMask.from_bool(labels == k, mask.spacing)
            for k in range(1, len(sizes) + 1)]


def build_prompt_set(gt: BinaryMask, pred: BinaryMask | None, cfg: PromptConfig,
                     iteration: int, rng: Rng) -> PromptSet:
    """Assemble one iteration's prompts from the current error regions.

    Iteration 0 treats the prediction as empty, so FN is the whole ground
    truth and no negative prompts exist; the box (if configured) appears only
    there.  Error masks are size-filtered with the largest-component
    fallback.  Scribble generation runs once per error component with a
    deterministic rng substream per (iteration, polarity, component, slice).
    """
    if gt.is_empty():
        raise EmptyMaskError("build_prompt_set requires a nonempty ground truth")
    if iteration == 0 or pred is None:
        fn = gt
        fp = BinaryMask(np.zeros(gt.dims, dtype=np.uint8), gt.spacing)
    else:
        gt.require_same_geometry(pred)
        fn = BinaryMask.from_bool(gt.bool() & ~pred.bool(), gt.spacing)
        fp = BinaryMask.from_bool(pred.bool() & ~gt.bool(), gt.spacing)
    fn = _filtered_error_mask(fn, cfg.min_region_voxels)
    fp = _filtered_error_mask(fp, cfg.min_region_voxels)

    points: list[PointPrompt] = []
    if cfg.use_points and cfg.points_per_iteration > 0:
        n = cfg.points_per_iteration
        points = sample_points(fn, fp, n, 0 if iteration == 0 else n, rng.spawn(iteration, 0))

    box = ground_truth_box(gt) if (iteration == 0 and cfg.use_box) else None

    scribbles: list[Scribble] = []
    if cfg.scribble_style is not None:
        gen = (gen_boundary_scribbles if cfg.scribble_style.from_boundary
               else gen_centerline_scribbles)
        for polarity, mask in ((Polarity.POSITIVE, fn), (Polarity.NEGATIVE, fp)):
            if iteration == 0 and polarity is Polarity.NEGATIVE:
                continue
            pol_code = 1 if polarity is Polarity.POSITIVE else 2
            for comp_idx, comp in enumerate(_components(mask)):
                scribbles.extend(gen(comp, cfg, polarity,
                                     rng.spawn(iteration, pol_code, comp_idx)))
    return PromptSet(points=points, box=box, scribbles=scribbles, iteration=iteration)


# ---------------------------------------------------------------------------
# Serialization (consumed by the wire protocol and the CLI)
# ---------------------------------------------------------------------------

def _fmt_voxel(v) -> str:
    return f"{v[0]},{v[1]},{v[2]}"


def serialize_prompt_set(ps: PromptSet) -> str:
    """Newline-delimited records: ``kind polarity axis slice voxels``."""
    lines = []
    for p in ps.points:
        lines.append(f"point {p.polarity.value} - - {_fmt_voxel(p.voxel)}")
    if ps.box is not None:
        lines.append(f"box positive - - {_fmt_voxel(ps.box.corner_min)};"
                     f"{_fmt_voxel(ps.box.corner_max)}")
    for s in ps.scribbles:
        voxels = ";".join(_fmt_voxel(v) for v in s.voxels)
        lines.append(f"scribble {s.polarity.value} {s.slice_axis.value} {s.slice_index} {voxels}")
    return "".join(line + "\n" for line in lines)


def _parse_voxel(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise PromptError(f"bad voxel triple {text!r}")
    return (int(parts[0]), int(parts[1]), int(parts[2]))


def parse_prompt_set(text: str, iteration: int) -> PromptSet:
    """Inverse of :func:`serialize_prompt_set` (style of parsed scribbles is
    not recoverable and defaults to centerline)."""
    points: list[PointPrompt] = []
    box: BoxPrompt | None = None
    scribbles: list[Scribble] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 5:
            raise PromptError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        kind, polarity, axis, slice_idx, voxels = parts
        if kind == "point":
            points.append(PointPrompt(_parse_voxel(voxels), Polarity(polarity)))
        elif kind == "box":
            lo, _, hi = voxels.partition(";")
            if box is not None:
                raise PromptError(f"line {lineno}: multiple boxes")
            box = BoxPrompt(_parse_voxel(lo), _parse_voxel(hi))
        elif kind == "scribble":
            vox = tuple(_parse_voxel(v) for v in voxels.split(";"))
            scribbles.append(Scribble(vox, Polarity(polarity), SliceAxis.parse(axis),
                                      int(slice_idx), ScribbleStyle.CENTERLINE))
        else:
            raise PromptError(f"line {lineno}: unknown prompt kind {kind!r}")
    return PromptSet(points=points, box=box, scribbles=scribbles, iteration=iteration)
