#!/usr/bin/env python3
"""Generate the golden wire-protocol transcripts in tests/fixtures/bridge/.

Frames are assembled here with explicit struct/json calls, independent of
the client/server implementations that are tested against these bytes.

Scenario (client_frames.bin / server_frames.bin): one session on a 2x2x2
float32 image, two iterations against the dummy dilation model
(radius 1 mm):

  iteration 0: positive point (0,0,0)  -> mask {(0,0,0),(1,0,0),(0,1,0),(0,0,1)}
  iteration 1: negative point (0,0,1), previous mask attached
               -> mask {(1,0,0),(0,1,0)}

The bad-version pair pins the ERROR reply for a HELLO with version 2.
"""

import json
import os
import struct

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "bridge")

DIMS = (2, 2, 2)
SPACING = (1.0, 1.0, 1.0)


def frame(header: dict, payload: bytes = b"") -> bytes:
    header = dict(header)
    header["payload_bytes"] = len(payload)
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    return struct.pack("<Q", len(line) + len(payload)) + line + payload


def flat_index(i, j, k):
    return i + DIMS[0] * (j + DIMS[1] * k)


def mask_bytes(voxels) -> bytes:
    out = bytearray(DIMS[0] * DIMS[1] * DIMS[2])
    for v in voxels:
        out[flat_index(*v)] = 1
    return bytes(out)


def image_bytes() -> bytes:
    vals = [0.1 * flat_index(i, j, k)
            for k in range(DIMS[2]) for j in range(DIMS[1]) for i in range(DIMS[0])]
    return struct.pack(f"<{len(vals)}f", *vals)


MASK_ITER0 = mask_bytes([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)])
MASK_ITER1 = mask_bytes([(1, 0, 0), (0, 1, 0)])


def client_frames() -> bytes:
    return b"".join([
        frame({"kind": "HELLO", "version": 1,
               "capabilities": ["points", "box", "scribbles"]}),
        frame({"kind": "SESSION_START", "session_id": "golden-1",
               "dims": list(DIMS), "spacing": list(SPACING), "dtype": "float32"},
              image_bytes()),
        frame({"kind": "PROMPTS", "iteration": 0,
               "prompts": "point positive - - 0,0,0\n"}),
        frame({"kind": "PROMPTS", "iteration": 1,
               "prompts": "point negative - - 0,0,1\n"}, MASK_ITER0),
        frame({"kind": "SESSION_END"}),
    ])


def server_frames() -> bytes:
    return b"".join([
        frame({"kind": "HELLO", "version": 1, "capabilities": ["dummy-dilation"]}),
        frame({"kind": "SEGMENT_RESULT", "iteration": 0}, MASK_ITER0),
        frame({"kind": "SEGMENT_RESULT", "iteration": 1}, MASK_ITER1),
    ])


def client_bad_version() -> bytes:
    return frame({"kind": "HELLO", "version": 2, "capabilities": []})


def server_bad_version() -> bytes:
    return frame({"kind": "ERROR", "code": "version",
                  "message": "unsupported protocol version 2"})


if __name__ == "__main__":
    os.makedirs(OUT_DIR, exist_ok=True)
    for name, blob in [("client_frames.bin", client_frames()),
                       ("server_frames.bin", server_frames()),
                       ("client_bad_version.bin", client_bad_version()),
                       ("server_bad_version.bin", server_bad_version())]:
        path = os.path.join(OUT_DIR, name)
        with open(path, "wb") as fh:
            fh.write(blob)
        print(f"wrote {path} ({len(blob)} bytes)")
