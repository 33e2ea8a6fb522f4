"""2D/3D morphology and filtering primitives.

Everything here is a pure function; randomized operations take an
:class:`~segloop.rng.Rng` and are bit-reproducible for a given (seed,
parameters).  2D images are numpy arrays indexed ``[a, b]`` matching the
in-plane axis order of :func:`segloop.volume.extract_slice`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import EmptyMaskError, GeometryError
from .rng import Rng
from .volume import BinaryMask

__all__ = [
    "DeformationField2D", "skeletonize_2d", "gaussian_blur", "threshold",
    "boundary_2d", "surface_voxels_3d", "surface_bool_3d", "edt_3d",
    "random_deformation_2d", "warp_2d", "random_break_mask",
]


@dataclass
class DeformationField2D:
    """Per-pixel displacement field in pixel units."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dy = np.asarray(self.dy, dtype=np.float64)
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise GeometryError(f"dx/dy shapes differ: {self.dx.shape} vs {self.dy.shape}")
        if not (np.isfinite(self.dx).all() and np.isfinite(self.dy).all()):
            raise ValueError("displacements must be finite")

    @property
    def shape(self):
        return self.dx.shape


# ---------------------------------------------------------------------------
# Thinning
# ---------------------------------------------------------------------------

def skeletonize_2d(img: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a 1-pixel-wide skeleton.

    The result is a subset of the input and preserves the number of
    8-connected components.  The parallel passes of the published algorithm
    erase 2x2-scale blobs entirely; such components keep their first
    scan-order pixel instead so the component count survives.
    """
    original = np.asarray(img, dtype=bool)
    if not original.any():
        return np.zeros_like(original, dtype=np.uint8)
    thinned = _zhang_suen(original)
    comp, n = ndimage.label(original, structure=np.ones((3, 3), dtype=int))
    for c in range(1, n + 1):
        member = comp == c
        if not (thinned & member).any():
            a, b = np.argwhere(member)[0]
            thinned[a, b] = True
    return thinned.astype(np.uint8)


def _zhang_suen(img: np.ndarray) -> np.ndarray:
    cur = img.copy()
    while True:
        changed = False
        for step in (0, 1):
            p = np.pad(cur, 1)
            # 8-neighborhood clockwise from north (north = first axis - 1)
            p2 = p[:-2, 1:-1]
            p3 = p[:-2, 2:]
            p4 = p[1:-1, 2:]
            p5 = p[2:, 2:]
            p6 = p[2:, 1:-1]
            p7 = p[2:, :-2]
            p8 = p[1:-1, :-2]
            p9 = p[:-2, :-2]
            ring = [p2, p3, p4, p5, p6, p7, p8, p9]
            b = sum(n.astype(np.uint8) for n in ring)
            a = sum(((~ring[i]) & ring[(i + 1) % 8]).astype(np.uint8) for i in range(8))
            cond = cur & (b >= 2) & (b <= 6) & (a == 1)
            if step == 0:
                cond &= ~(p2 & p4 & p6)
                cond &= ~(p4 & p6 & p8)
            else:
                cond &= ~(p2 & p4 & p8)
                cond &= ~(p2 & p6 & p8)
            if cond.any():
                cur &= ~cond
                changed = True
        if not changed:
            return cur


# ---------------------------------------------------------------------------
# Filtering and thresholds
# ---------------------------------------------------------------------------

def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma) -> np.ndarray:
    """Separable Gaussian blur; kernel truncated at ceil(3*sigma), reflect
    padding (edge sample included), kernel normalized to sum 1."""
    arr = np.asarray(img, dtype=np.float64)
    sigmas = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (arr.ndim,))
    if not (sigmas > 0).all():
        raise ValueError(f"sigma must be positive, got {sigma}")
    out = arr
    for axis, s in enumerate(sigmas):
        out = ndimage.correlate1d(out, _gaussian_kernel(float(s)), axis=axis, mode="reflect")
    return out


def threshold(img: np.ndarray, t: float) -> np.ndarray:
    """Binary image: 1 where img > t."""
    return (np.asarray(img) > t).astype(np.uint8)


def boundary_2d(img: np.ndarray) -> np.ndarray:
    """Pixels of img with at least one 4-neighbor equal to 0 (borders count
    as background)."""
    cur = np.asarray(img, dtype=bool)
    p = np.pad(cur, 1)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return (cur & ~interior).astype(np.uint8)


# ---------------------------------------------------------------------------
# 3D surfaces and distances
# ---------------------------------------------------------------------------

def surface_bool_3d(mask: BinaryMask) -> np.ndarray:
    """Boolean grid of foreground voxels with a 6-neighbor background voxel
    (the volume border counts as background)."""
    cur = mask.bool()
    if not cur.any():
        raise EmptyMaskError("surface of an empty mask is undefined")
    p = np.pad(cur, 1)
    interior = (p[:-2, 1:-1, 1:-1] & p[2:, 1:-1, 1:-1]
                & p[1:-1, :-2, 1:-1] & p[1:-1, 2:, 1:-1]
                & p[1:-1, 1:-1, :-2] & p[1:-1, 1:-1, 2:])
    return cur & ~interior


def surface_voxels_3d(mask: BinaryMask) -> np.ndarray:
    """Surface voxel indices as an (N, 3) array in x-fastest scan order."""
    surf = surface_bool_3d(mask)
    idx = np.argwhere(surf.ravel(order="F")).ravel()
    nx, ny, _ = mask.dims
    out = np.empty((idx.size, 3), dtype=np.int64)
    out[:, 0] = idx % nx
    out[:, 1] = (idx // nx) % ny
    out[:, 2] = idx // (nx * ny)
    return out


@njit(cache=True)
def _edt_pass(rows: np.ndarray, step: float) -> None:
    # 1D lower-envelope transform of squared distances, one row at a time:
    # rows[r, i] <- min_j rows[r, j] + (step*(i-j))**2
    n = rows.shape[1]
    v = np.empty(n, np.int64)
    z = np.empty(n + 1, np.float64)
    f = np.empty(n, np.float64)
    for r in range(rows.shape[0]):
        for i in range(n):
            f[i] = rows[r, i]
        k = -1
        for q in range(n):
            fq = f[q]
            if fq == np.inf:
                continue
            xq = q * step
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            while True:
                p = v[k]
                xp = p * step
                s = ((fq + xq * xq) - (f[p] + xp * xp)) / (2.0 * xq - 2.0 * xp)
                if s <= z[k]:
                    k -= 1
                    if k < 0:
                        break
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s if k > 0 else -np.inf
            z[k + 1] = np.inf
        if k < 0:
            continue
        j = 0
        for i in range(n):
            xi = i * step
            while z[j + 1] < xi:
                j += 1
            d = xi - v[j] * step
            rows[r, i] = f[v[j]] + d * d
    return None


def _edt_squared(fg: np.ndarray, spacing) -> np.ndarray:
    d2 = np.where(fg, 0.0, np.inf)
    for ax in range(fg.ndim):
        moved = np.moveaxis(d2, ax, -1)
        shape = moved.shape
        rows = np.ascontiguousarray(moved).reshape(-1, shape[-1])
        _edt_pass(rows, float(spacing[ax]))
        d2 = np.moveaxis(rows.reshape(shape), -1, ax)
    return np.ascontiguousarray(d2)


def edt_3d(mask: BinaryMask) -> np.ndarray:
    """Exact Euclidean distance (mm) from every voxel center to the nearest
    foreground voxel center.

    Dimension-wise lower-envelope transform honoring anisotropic spacing;
    zero on foreground.  Returns a float64 grid of the mask's dims.
    """
    fg = mask.bool()
    if not fg.any():
        raise EmptyMaskError("distance to an empty mask is undefined")
    return np.sqrt(_edt_squared(fg, mask.spacing))


def edt_2d(img: np.ndarray, spacing=(1.0, 1.0)) -> np.ndarray:
    """2D variant of :func:`edt_3d` in pixel units (used for in-plane
    containment checks)."""
    fg = np.asarray(img, dtype=bool)
    if not fg.any():
        raise EmptyMaskError("distance to an empty image is undefined")
    return np.sqrt(_edt_squared(fg, spacing))


# ---------------------------------------------------------------------------
# Random deformation, warping, break masks
# ---------------------------------------------------------------------------

def random_deformation_2d(shape, rng: Rng, amplitude_px: float,
                          smooth_sigma_px: float) -> DeformationField2D:
    """Smooth random displacement field rescaled so the maximum displacement
    magnitude equals ``amplitude_px`` (zero field when amplitude is 0)."""
    if amplitude_px < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude_px}")
    if not smooth_sigma_px > 0:
        raise ValueError(f"smoothing sigma must be positive, got {smooth_sigma_px}")
    shape = tuple(int(s) for s in shape)
    if amplitude_px == 0:
        zero = np.zeros(shape, dtype=np.float64)
        return DeformationField2D(zero, zero.copy())
    dx = gaussian_blur(rng.gen.standard_normal(shape), smooth_sigma_px)
    dy = gaussian_blur(rng.gen.standard_normal(shape), smooth_sigma_px)
    mag = np.sqrt(dx * dx + dy * dy)
    peak = float(mag.max())
    if peak > 0:
        dx = dx * (amplitude_px / peak)
        dy = dy * (amplitude_px / peak)
    return DeformationField2D(dx, dy)


def warp_2d(img: np.ndarray, field: DeformationField2D) -> np.ndarray:
    """Backward warp with nearest-neighbor sampling; out-of-bounds reads 0.

    ``out[a, b] = img[round(a + dx[a, b]), round(b + dy[a, b])]`` with
    round-half-up.
    """
    arr = np.asarray(img, dtype=np.uint8)
    if arr.shape != field.shape:
        raise GeometryError(f"image shape {arr.shape} != field shape {field.shape}")
    na, nb = arr.shape
    ga, gb = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    sa = np.floor(ga + field.dx + 0.5).astype(np.int64)
    sb = np.floor(gb + field.dy + 0.5).astype(np.int64)
    inside = (sa >= 0) & (sa < na) & (sb >= 0) & (sb < nb)
    out = np.zeros_like(arr)
    out[inside] = arr[sa[inside], sb[inside]]
    return out


def random_break_mask(shape, rng: Rng, coverage: float, scale_px: float) -> np.ndarray:
    """Smooth random binary mask keeping roughly ``coverage`` of the pixels.

    White noise blurred at ``scale_px`` and thresholded at its empirical
    (1 - coverage)-quantile.
    """
    if not 0.0 < coverage < 1.0:
        raise ValueError(f"coverage must be in (0, 1), got {coverage}")
    noise = gaussian_blur(rng.gen.standard_normal(tuple(int(s) for s in shape)), scale_px)
    q = np.quantile(noise, 1.0 - coverage, method="linear")
    return (noise > q).astype(np.uint8)
