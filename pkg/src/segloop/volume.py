"""3D voxel grids, file I/O, preprocessing, connected components and slicing.

Grids are stored as numpy arrays of shape ``(nx, ny, nz)`` so that
``data[i, j, k]`` addresses voxel ``(i, j, k)``.  The canonical flat layout
is x-fastest (flat index ``i + nx*(j + ny*k)``), which corresponds to
``ravel(order="F")`` on that array and matches the NIfTI-1 payload order.
All grids are immutable after construction (the underlying array is marked
read-only) and therefore safe to share across threads.
"""

from __future__ import annotations

import enum
import io
import os
import struct
import warnings

import numpy as np
from scipy import ndimage

from .errors import EmptyMaskError, GeometryError, NativeFormatError, NiftiError

DTYPE_TAGS = {"uint8": np.uint8, "int16": np.int16, "float32": np.float32}
_NP_TO_TAG = {np.dtype(v): k for k, v in DTYPE_TAGS.items()}

# NIfTI-1 datatype codes for the supported subset
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_NIFTI_CODES = {np.dtype(np.uint8): (2, 8), np.dtype(np.int16): (4, 16),
                np.dtype(np.float32): (16, 32)}


class SliceAxis(enum.Enum):
    """Orthogonal slicing families.

    Transverse selects planes of constant z-index (in-plane axes (x, y));
    Longitudinal selects planes of constant x-index (in-plane axes (y, z)).
    The anatomical meaning of the array axes is a convention of the data
    source; these defaults match axial-is-z storage.
    """

    TRANSVERSE = "transverse"
    LONGITUDINAL = "longitudinal"

    @classmethod
    def parse(cls, name: str) -> "SliceAxis":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown slice axis {name!r}") from None


class VoxelGrid:
    """A 3D scalar field with physical voxel spacing in mm."""

    def __init__(self, data: np.ndarray, spacing):
        arr = np.asarray(data)
        if arr.ndim != 3:
            raise ValueError(f"expected 3D data, got shape {arr.shape}")
        if arr.dtype not in _NP_TO_TAG:
            raise ValueError(f"unsupported dtype {arr.dtype}; use one of {sorted(DTYPE_TAGS)}")
        if min(arr.shape) < 1:
            raise ValueError(f"dims must be positive, got {arr.shape}")
        sp = tuple(float(s) for s in spacing)
        if len(sp) != 3 or not all(np.isfinite(s) and s > 0 for s in sp):
            raise ValueError(f"spacing must be three finite positive values, got {spacing}")
        if arr.flags.writeable:
            arr = arr.copy(order="C")
        arr.setflags(write=False)
        self.data = arr
        self.spacing = sp

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def dtype_tag(self) -> str:
        return _NP_TO_TAG[self.data.dtype]

    def flat(self) -> np.ndarray:
        """Flat view in the canonical x-fastest order."""
        return self.data.ravel(order="F")

    def same_geometry(self, other: "VoxelGrid") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing

    def require_same_geometry(self, other: "VoxelGrid") -> None:
        if not self.same_geometry(other):
            raise GeometryError(
                f"geometry mismatch: {self.dims}@{self.spacing} vs {other.dims}@{other.spacing}")

    def __eq__(self, other) -> bool:
        return (isinstance(other, VoxelGrid) and self.same_geometry(other)
                and self.data.dtype == other.data.dtype
                and np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dims={self.dims}, spacing={self.spacing}, dtype={self.dtype_tag})"


class BinaryMask(VoxelGrid):
    """A VoxelGrid restricted to values {0, 1}, stored as uint8."""

    def __init__(self, data: np.ndarray, spacing):
        arr = np.asarray(data)
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
        super().__init__(arr, spacing)
        if self.data.dtype != np.uint8 or not self._is_binary(self.data):
            raise ValueError("mask voxels must be exactly 0 or 1 (uint8)")

    @staticmethod
    def _is_binary(arr: np.ndarray) -> bool:
        return arr.dtype == np.uint8 and bool((arr <= 1).all())

    @classmethod
    def from_bool(cls, arr: np.ndarray, spacing) -> "BinaryMask":
        return cls(np.asarray(arr, dtype=bool).astype(np.uint8), spacing)

    @property
    def voxel_count(self) -> int:
        return int(self.data.sum(dtype=np.int64))

    def is_empty(self) -> bool:
        return not self.data.any()

    def bool(self) -> np.ndarray:
        return self.data.astype(bool)


def foreground_mask(grid: VoxelGrid) -> BinaryMask:
    """Default preprocessing foreground: voxels with intensity > 0."""
    return BinaryMask.from_bool(np.asarray(grid.data) > 0, grid.spacing)


# ---------------------------------------------------------------------------
# NIfTI-1 I/O (single-file .nii, little-endian, uncompressed)
# ---------------------------------------------------------------------------

def read_nifti(path) -> VoxelGrid:
    """Read an uncompressed single-file NIfTI-1 volume.

    Honors dim, datatype, bitpix, pixdim, vox_offset, scl_slope/scl_inter and
    magic; qform/sform are ignored with a warning.  Raises :class:`NiftiError`
    naming the offending field on malformed input.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 348:
        raise NiftiError("sizeof_hdr", f"file is {len(raw)} bytes, header needs 348")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != 348:
        raise NiftiError("sizeof_hdr", f"expected 348 (little-endian), got {sizeof_hdr}")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise NiftiError("magic", f"expected b'n+1\\x00', got {magic!r}")
    dim = struct.unpack_from("<8h", raw, 40)
    if not (dim[0] == 3 or (dim[0] == 4 and dim[4] == 1)):
        raise NiftiError("dim", f"unsupported dim[0]={dim[0]} (dim={dim[:5]})")
    nx, ny, nz = (int(d) for d in dim[1:4])
    if min(nx, ny, nz) < 1:
        raise NiftiError("dim", f"non-positive dims {(nx, ny, nz)}")
    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype not in _NIFTI_DTYPES:
        raise NiftiError("datatype", f"unsupported datatype code {datatype}")
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder("<")
    (bitpix,) = struct.unpack_from("<h", raw, 72)
    if bitpix != dtype.itemsize * 8:
        raise NiftiError("bitpix", f"bitpix {bitpix} inconsistent with datatype {datatype}")
    pixdim = struct.unpack_from("<8f", raw, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise NiftiError("pixdim", f"non-positive spacing {spacing}")
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    offset = int(vox_offset)
    if offset < 348 or offset != vox_offset:
        raise NiftiError("vox_offset", f"invalid payload offset {vox_offset}")
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
    qform_code, sform_code = struct.unpack_from("<2h", raw, 252)
    if qform_code > 0 or sform_code > 0:
        warnings.warn("qform/sform orientation present but ignored; only pixdim spacing is used",
                      stacklevel=2)
    nvox = nx * ny * nz
    nbytes = nvox * dtype.itemsize
    payload = raw[offset:offset + nbytes]
    if len(payload) != nbytes:
        raise NiftiError("vox_offset", f"truncated payload: need {nbytes} bytes at offset "
                         f"{offset}, file has {len(raw) - offset}")
    arr = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz), order="F")
    arr = arr.astype(arr.dtype.newbyteorder("="))
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        arr = (arr.astype(np.float64) * scl_slope + scl_inter).astype(np.float32)
    return VoxelGrid(arr, spacing)


def write_nifti(grid: VoxelGrid, path) -> None:
    """Write a grid as an uncompressed single-file NIfTI-1 volume.

    Emits the 348-byte header, the 4-byte extension flag, then the payload at
    vox_offset 352; xyzt_units marks mm, scl_slope 0 means unscaled.
    """
    datatype, bitpix = _NIFTI_CODES[grid.data.dtype]
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    hdr[38:39] = b"r"
    struct.pack_into("<8h", hdr, 40, 3, *grid.dims, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *grid.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 0.0, 0.0)
    hdr[123:124] = bytes([2])  # spatial units: mm
    hdr[344:348] = b"n+1\x00"
    payload = np.ascontiguousarray(grid.data, dtype=grid.data.dtype).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00\x00\x00\x00")
        fh.write(payload)


# ---------------------------------------------------------------------------
# Native format: <name>.vgh text header + <name>.vgd raw payload
# ---------------------------------------------------------------------------

def write_native(grid: VoxelGrid, path) -> None:
    """Write a grid in the native format (``.vgh`` header + ``.vgd`` payload).

    The header is UTF-8 ``key = value`` lines (dims, spacing, dtype,
    data_file); the payload is raw little-endian bytes in x-fastest order.
    """
    base, ext = os.path.splitext(os.fspath(path))
    if ext not in ("", ".vgh"):
        raise NativeFormatError(f"native header path must end in .vgh, got {path!r}")
    data_name = os.path.basename(base) + ".vgd"
    header = io.StringIO()
    header.write(f"dims = {grid.dims[0]} {grid.dims[1]} {grid.dims[2]}\n")
    header.write(f"spacing = {grid.spacing[0]!r} {grid.spacing[1]!r} {grid.spacing[2]!r}\n")
    header.write(f"dtype = {grid.dtype_tag}\n")
    header.write(f"data_file = {data_name}\n")
    with open(base + ".vgh", "w", encoding="utf-8") as fh:
        fh.write(header.getvalue())
    le = grid.data.astype(grid.data.dtype.newbyteorder("<"), copy=False)
    with open(base + ".vgd", "wb") as fh:
        fh.write(le.tobytes(order="F"))


def read_native(path, as_mask: bool = False) -> VoxelGrid:
    """Read a native-format volume from its ``.vgh`` header path."""
    base, ext = os.path.splitext(os.fspath(path))
    header_path = base + ".vgh"
    fields = {}
    try:
        with open(header_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise NativeFormatError(f"{header_path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
    except OSError as exc:
        raise NativeFormatError(f"cannot read header {header_path}: {exc}") from exc
    for key in ("dims", "spacing", "dtype", "data_file"):
        if key not in fields:
            raise NativeFormatError(f"{header_path}: missing key {key!r}")
    try:
        dims = tuple(int(v) for v in fields["dims"].split())
        spacing = tuple(float(v) for v in fields["spacing"].split())
    except ValueError as exc:
        raise NativeFormatError(f"{header_path}: bad dims/spacing: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3:
        raise NativeFormatError(f"{header_path}: dims and spacing need three values")
    if fields["dtype"] not in DTYPE_TAGS:
        raise NativeFormatError(f"{header_path}: unsupported dtype {fields['dtype']!r}")
    dtype = np.dtype(DTYPE_TAGS[fields["dtype"]]).newbyteorder("<")
    data_path = os.path.join(os.path.dirname(header_path), fields["data_file"])
    try:
        with open(data_path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise NativeFormatError(f"cannot read payload {data_path}: {exc}") from exc
    nbytes = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) != nbytes:
        raise NativeFormatError(f"{data_path}: expected {nbytes} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    arr = arr.astype(arr.dtype.newbyteorder("="))
    return BinaryMask(arr, spacing) if as_mask else VoxelGrid(arr, spacing)


def read_volume(path, as_mask: bool = False) -> VoxelGrid:
    """Dispatch on extension: .nii -> NIfTI, .vgh -> native."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".nii":
        grid = read_nifti(path)
        return as_binary_mask(grid) if as_mask else grid
    if ext == ".vgh":
        return read_native(path, as_mask=as_mask)
    raise NativeFormatError(f"unknown volume extension {ext!r} (expected .nii or .vgh)")


def write_volume(grid: VoxelGrid, path) -> None:
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".nii":
        write_nifti(grid, path)
    elif ext == ".vgh":
        write_native(grid, path)
    else:
        raise NativeFormatError(f"unknown volume extension {ext!r} (expected .nii or .vgh)")


def as_binary_mask(grid: VoxelGrid) -> BinaryMask:
    """Reinterpret a grid with values in {0,1} as a BinaryMask."""
    if isinstance(grid, BinaryMask):
        return grid
    arr = np.asarray(grid.data)
    binary = arr.astype(np.uint8)
    if not np.array_equal(binary, arr):
        raise ValueError("grid values are not all 0 or 1")
    return BinaryMask(binary, grid.spacing)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def resample_isotropic(grid: VoxelGrid, target_mm: float, mode: str = "trilinear") -> VoxelGrid:
    """Resample to isotropic spacing ``target_mm``.

    Output dims are ``round(dims * spacing / target)`` (half-up), clamped to
    >= 1.  Samples are taken at voxel centers with clamp-to-edge outside the
    input extent; ``trilinear`` emits float32, ``nearest`` keeps the dtype
    (and maps masks to masks).
    """
    if not target_mm > 0:
        raise ValueError(f"target_mm must be positive, got {target_mm}")
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown resample mode {mode!r}")
    out_dims = tuple(max(1, int(np.floor(n * s / target_mm + 0.5)))
                     for n, s in zip(grid.dims, grid.spacing))
    # continuous input index of each output voxel center, clamped to the edge
    coords = []
    for ax in range(3):
        centers_mm = (np.arange(out_dims[ax], dtype=np.float64) + 0.5) * target_mm
        x = centers_mm / grid.spacing[ax] - 0.5
        coords.append(np.clip(x, 0.0, grid.dims[ax] - 1))
    data = np.asarray(grid.data)
    if mode == "nearest":
        idx = [np.floor(c + 0.5).astype(np.intp) for c in coords]
        out = data[np.ix_(idx[0], idx[1], idx[2])]
        result = out.copy()
    else:
        lo = [np.floor(c).astype(np.intp) for c in coords]
        hi = [np.minimum(l + 1, n - 1) for l, n in zip(lo, grid.dims)]
        w = [c - l for c, l in zip(coords, lo)]
        src = data.astype(np.float64)
        acc = np.zeros(out_dims, dtype=np.float64)
        for bx in (0, 1):
            wx = (w[0] if bx else 1.0 - w[0])[:, None, None]
            ix = hi[0] if bx else lo[0]
            for by in (0, 1):
                wy = (w[1] if by else 1.0 - w[1])[None, :, None]
                iy = hi[1] if by else lo[1]
                for bz in (0, 1):
                    wz = (w[2] if bz else 1.0 - w[2])[None, None, :]
                    iz = hi[2] if bz else lo[2]
                    acc += wx * wy * wz * src[np.ix_(ix, iy, iz)]
        result = acc.astype(np.float32)
    spacing = (target_mm, target_mm, target_mm)
    if isinstance(grid, BinaryMask) and mode == "nearest":
        return BinaryMask(result, spacing)
    return VoxelGrid(result, spacing)


def clip_percentiles(grid: VoxelGrid, fg: BinaryMask, lo_pct: float = 0.5,
                     hi_pct: float = 99.5) -> VoxelGrid:
    """Clamp intensities into the [lo_pct, hi_pct] foreground percentiles.

    Percentiles use the linear-interpolation convention (rank
    ``pct/100 * (n-1)``).  Output is float32.
    """
    grid.require_same_geometry(fg)
    vals = np.asarray(grid.data)[fg.bool()]
    if vals.size == 0:
        raise EmptyMaskError("clip_percentiles requires a nonempty foreground")
    p_lo, p_hi = np.percentile(vals.astype(np.float64), [lo_pct, hi_pct], method="linear")
    out = np.clip(np.asarray(grid.data, dtype=np.float64), p_lo, p_hi).astype(np.float32)
    return VoxelGrid(out, grid.spacing)


def zscore_normalize(grid: VoxelGrid, fg: BinaryMask) -> VoxelGrid:
    """Subtract the foreground mean and divide by its population std."""
    grid.require_same_geometry(fg)
    vals = np.asarray(grid.data, dtype=np.float64)[fg.bool()]
    if vals.size < 2:
        raise EmptyMaskError("zscore_normalize requires at least two foreground voxels")
    mu = float(vals.mean())
    sigma = float(vals.std())  # population std (ddof=0)
    if sigma == 0.0:
        raise ValueError("zscore_normalize: foreground has zero variance")
    out = ((np.asarray(grid.data, dtype=np.float64) - mu) / sigma).astype(np.float32)
    return VoxelGrid(out, grid.spacing)


# ---------------------------------------------------------------------------
# Connected components and slicing
# ---------------------------------------------------------------------------

def connected_components(mask: BinaryMask, connectivity: int = 26):
    """Label foreground components; returns ``(labels, sizes)``.

    Labels are 1..K assigned by first encounter in the canonical x-fastest
    scan order (background 0); ``sizes[k-1]`` is the voxel count of
    component k.
    """
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    structure = ndimage.generate_binary_structure(3, 1 if connectivity == 6 else 3)
    raw_labels, n = ndimage.label(mask.bool(), structure=structure)
    if n == 0:
        return np.zeros(mask.dims, dtype=np.int32), []
    # renumber by first encounter in x-fastest order, independent of how
    # scipy happened to order its labels
    flat = raw_labels.ravel(order="F")
    nz = flat != 0
    uniq, first = np.unique(flat[nz], return_index=True)
    order = np.argsort(first)
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[uniq[order]] = np.arange(1, n + 1, dtype=np.int32)
    labels = remap[raw_labels]
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    return labels, [int(c) for c in counts[1:]]


def extract_slice(mask: VoxelGrid, axis: SliceAxis, index: int) -> np.ndarray:
    """Return one 2D plane; (x, y) for Transverse, (y, z) for Longitudinal."""
    nx, ny, nz = mask.dims
    data = np.asarray(mask.data)
    if axis is SliceAxis.TRANSVERSE:
        if not 0 <= index < nz:
            raise IndexError(f"transverse index {index} out of range [0, {nz})")
        return data[:, :, index].copy()
    if not 0 <= index < nx:
        raise IndexError(f"longitudinal index {index} out of range [0, {nx})")
    return data[index, :, :].copy()


def insert_slice(mask: BinaryMask, plane: np.ndarray, axis: SliceAxis, index: int) -> BinaryMask:
    """Return a new mask with one plane replaced."""
    nx, ny, nz = mask.dims
    out = np.array(mask.data)
    plane = np.asarray(plane, dtype=np.uint8)
    if axis is SliceAxis.TRANSVERSE:
        if not 0 <= index < nz:
            raise IndexError(f"transverse index {index} out of range [0, {nz})")
        if plane.shape != (nx, ny):
            raise GeometryError(f"plane shape {plane.shape} != {(nx, ny)}")
        out[:, :, index] = plane
    else:
        if not 0 <= index < nx:
            raise IndexError(f"longitudinal index {index} out of range [0, {nx})")
        if plane.shape != (ny, nz):
            raise GeometryError(f"plane shape {plane.shape} != {(ny, nz)}")
        out[index, :, :] = plane
    return BinaryMask(out, mask.spacing)


def plane_to_voxels(pixels: np.ndarray, axis: SliceAxis, index: int) -> np.ndarray:
    """Map (N, 2) in-plane pixel coordinates to (N, 3) voxel indices."""
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    out = np.empty((pixels.shape[0], 3), dtype=np.int64)
    if axis is SliceAxis.TRANSVERSE:
        out[:, 0] = pixels[:, 0]
        out[:, 1] = pixels[:, 1]
        out[:, 2] = index
    else:
        out[:, 0] = index
        out[:, 1] = pixels[:, 0]
        out[:, 2] = pixels[:, 1]
    return out
