#!/usr/bin/env python3
"""Generate tests/fixtures/reference_third_party.nii.

The header is assembled field by field from the published NIfTI-1 C struct
layout, independently of segloop's writer, and the result is cross-checked
with the nifti-reader-js package (see scripts/validate_nifti_node.js).  The
voxel values are the documented pattern

    v(i, j, k) = 100*i - 7*j + 3*k - 20   (int16)

on a 3x4x5 grid with spacing (0.8, 1.25, 2.0) mm.  The file deliberately
carries fields a full-featured writer would set (sform code, descrip,
xyzt_units) so the reader's ignore-with-warning path is exercised.
"""

import struct
import sys

NX, NY, NZ = 3, 4, 5
SPACING = (0.8, 1.25, 2.0)


def voxel_value(i: int, j: int, k: int) -> int:
    return 100 * i - 7 * j + 3 * k - 20


def build() -> bytes:
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)                      # sizeof_hdr
    hdr[38:39] = b"r"                                        # regular
    struct.pack_into("<8h", hdr, 40, 3, NX, NY, NZ, 1, 1, 1, 1)  # dim
    struct.pack_into("<h", hdr, 70, 4)                       # datatype int16
    struct.pack_into("<h", hdr, 72, 16)                      # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, *SPACING, 0, 0, 0, 0)  # pixdim
    struct.pack_into("<f", hdr, 108, 352.0)                  # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)              # scl slope/inter
    hdr[123:124] = bytes([10])                               # xyzt: mm | sec
    hdr[148:148 + 17] = b"reference fixture"                 # descrip
    struct.pack_into("<2h", hdr, 252, 0, 2)                  # qform 0, sform 2
    struct.pack_into("<4f", hdr, 280, SPACING[0], 0, 0, 0)   # srow_x
    struct.pack_into("<4f", hdr, 296, 0, SPACING[1], 0, 0)   # srow_y
    struct.pack_into("<4f", hdr, 312, 0, 0, SPACING[2], 0)   # srow_z
    hdr[344:348] = b"n+1\x00"
    payload = bytearray()
    for k in range(NZ):          # x-fastest payload order
        for j in range(NY):
            for i in range(NX):
                payload += struct.pack("<h", voxel_value(i, j, k))
    return bytes(hdr) + b"\x00\x00\x00\x00" + bytes(payload)


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/reference_third_party.nii"
    with open(out, "wb") as fh:
        fh.write(build())
    print(f"wrote {out} ({348 + 4 + 2 * NX * NY * NZ} bytes)")
