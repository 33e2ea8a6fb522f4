"""Framed wire protocol for driving external segmentation processes.

Transport: a byte stream (stdio pipe or TCP socket).  Each frame is an
8-byte little-endian unsigned length N followed by N body bytes.  The body
is one UTF-8 JSON object on a single line terminated by ``\\n`` (canonical
form: sorted keys, no spaces), optionally followed by a raw binary payload
of exactly ``header["payload_bytes"]`` bytes.  ``payload_bytes`` is always
present.

Message kinds and payloads:

==============  =====================================================  ==========================
kind            header fields                                          payload
==============  =====================================================  ==========================
HELLO           version=1, capabilities: [str]                         none
SESSION_START   session_id, dims [nx,ny,nz], spacing [sx,sy,sz],       image, float32 LE,
                dtype="float32"                                        x-fastest order
PROMPTS         iteration, prompts (serialized prompt records)         previous mask, uint8,
                                                                       x-fastest (absent at
                                                                       iteration 0)
SEGMENT_RESULT  iteration                                              mask, uint8, x-fastest
ERROR           code, message                                          none
SESSION_END     (none)                                                 none
==============  =====================================================  ==========================

Sequence: client sends HELLO, server answers HELLO (or ERROR code
``version`` on mismatch).  Per session: SESSION_START with the image sent
once, then one PROMPTS/SEGMENT_RESULT exchange per iteration, then
SESSION_END.  Further sessions may follow on the same connection.  Protocol
violations are answered with an ERROR frame, then the connection closes.
"""

from __future__ import annotations

import json
import socket
import struct
import subprocess

import numpy as np

from ..errors import (BridgeClosedError, BridgeGeometryError, BridgeProtocolError,
                      BridgeRemoteError)
from ..prompts import parse_prompt_set, serialize_prompt_set
from ..volume import BinaryMask, VoxelGrid
from .base import SegmentationRequest, Segmenter, check_result_geometry

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 1 << 32
_LEN = struct.Struct("<Q")


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    header = dict(header)
    header["payload_bytes"] = len(payload)
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    body = line + payload
    return _LEN.pack(len(body)) + body


class FrameStream:
    """Reads and writes frames over a pair of binary file objects.

    ``owned`` resources (e.g. the underlying socket) are closed along with
    the stream.
    """

    def __init__(self, rfile, wfile, owned=()):
        self._rfile = rfile
        self._wfile = wfile
        self._owned = list(owned)

    def send(self, header: dict, payload: bytes = b"") -> None:
        self._wfile.write(encode_frame(header, payload))
        self._wfile.flush()

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            chunk = self._rfile.read(remaining)
            if not chunk:
                raise BridgeClosedError(f"connection closed with {remaining} of {n} bytes pending")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv(self) -> tuple[dict, bytes]:
        head = self._rfile.read(_LEN.size)
        if not head:
            raise BridgeClosedError("connection closed between frames")
        if len(head) < _LEN.size:
            raise BridgeClosedError("connection closed inside a frame length")
        (n,) = _LEN.unpack(head)
        if n == 0 or n > MAX_FRAME_BYTES:
            raise BridgeProtocolError(f"implausible frame length {n}")
        body = self._read_exact(n)
        line, sep, payload = body.partition(b"\n")
        if not sep:
            raise BridgeProtocolError("frame body has no header line terminator")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BridgeProtocolError(f"undecodable frame header: {exc}") from exc
        if not isinstance(header, dict) or "kind" not in header:
            raise BridgeProtocolError("frame header must be an object with a 'kind'")
        declared = header.get("payload_bytes", 0)
        if declared != len(payload):
            raise BridgeProtocolError(
                f"declared payload_bytes {declared} != actual {len(payload)}")
        return header, payload

    def close(self) -> None:
        for f in (self._wfile, self._rfile, *self._owned):
            try:
                f.close()
            except OSError:
                pass


def mask_payload(mask: BinaryMask) -> bytes:
    return np.asarray(mask.data, dtype="<u1").tobytes(order="F")


def image_payload(image: VoxelGrid) -> bytes:
    return np.asarray(image.data, dtype="<f4").tobytes(order="F")


def decode_mask(payload: bytes, dims, spacing) -> BinaryMask:
    nvox = dims[0] * dims[1] * dims[2]
    if len(payload) != nvox:
        raise BridgeGeometryError(f"mask payload is {len(payload)} bytes, expected {nvox}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(tuple(dims), order="F")
    if arr.max(initial=0) > 1:
        raise BridgeProtocolError("mask payload contains values other than 0/1")
    return BinaryMask(arr, spacing)


def decode_image(payload: bytes, dims, spacing) -> VoxelGrid:
    nvox = dims[0] * dims[1] * dims[2]
    if len(payload) != 4 * nvox:
        raise BridgeGeometryError(f"image payload is {len(payload)} bytes, expected {4 * nvox}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(tuple(dims), order="F")
    return VoxelGrid(arr.astype(np.float32), spacing)


class BridgeBackend(Segmenter):
    """Drives a remote segmentation process over the framed protocol."""

    def __init__(self, stream: FrameStream, process: subprocess.Popen | None = None,
                 capabilities=("points", "box", "scribbles")):
        self._stream = stream
        self._process = process
        self._session_id: str | None = None
        self._geometry = None
        try:
            self._stream.send({"kind": "HELLO", "version": PROTOCOL_VERSION,
                               "capabilities": list(capabilities)})
            header, _ = self._stream.recv()
            if header["kind"] == "ERROR":
                raise BridgeRemoteError(str(header.get("code", "?")),
                                        str(header.get("message", "")))
            if header["kind"] != "HELLO":
                raise BridgeProtocolError(f"expected HELLO reply, got {header['kind']}")
            if header.get("version") != PROTOCOL_VERSION:
                raise BridgeProtocolError(f"peer speaks protocol version "
                                          f"{header.get('version')}, need {PROTOCOL_VERSION}")
        except Exception:
            self._stream.close()
            if self._process is not None:
                self._process.kill()
                self._process.wait()
            raise

    @classmethod
    def from_command(cls, argv, **kwargs) -> "BridgeBackend":
        """Spawn a server subprocess and talk to it over stdio."""
        proc = subprocess.Popen(list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return cls(FrameStream(proc.stdout, proc.stdin), process=proc, **kwargs)

    @classmethod
    def connect_tcp(cls, host: str, port: int, **kwargs) -> "BridgeBackend":
        sock = socket.create_connection((host, port))
        stream = FrameStream(sock.makefile("rb"), sock.makefile("wb"), owned=(sock,))
        return cls(stream, **kwargs)

    def segment(self, request: SegmentationRequest) -> BinaryMask:
        if self._session_id != request.session_id:
            if self._session_id is not None:
                self._stream.send({"kind": "SESSION_END"})
            image = request.image
            self._stream.send(
                {"kind": "SESSION_START", "session_id": request.session_id,
                 "dims": list(image.dims), "spacing": list(image.spacing),
                 "dtype": "float32"},
                image_payload(image))
            self._session_id = request.session_id
            self._geometry = (image.dims, image.spacing)
        payload = mask_payload(request.previous_mask) if request.previous_mask is not None else b""
        self._stream.send(
            {"kind": "PROMPTS", "iteration": request.iteration,
             "prompts": serialize_prompt_set(request.prompts)},
            payload)
        header, result = self._stream.recv()
        if header["kind"] == "ERROR":
            raise BridgeRemoteError(str(header.get("code", "?")), str(header.get("message", "")))
        if header["kind"] != "SEGMENT_RESULT":
            raise BridgeProtocolError(f"expected SEGMENT_RESULT, got {header['kind']}")
        dims, spacing = self._geometry
        mask = decode_mask(result, dims, spacing)
        return check_result_geometry(request, mask)

    def close(self) -> None:
        try:
            if self._session_id is not None:
                self._stream.send({"kind": "SESSION_END"})
                self._session_id = None
        except (OSError, ValueError, BridgeClosedError):
            pass
        self._stream.close()
        if self._process is not None:
            try:
                self._process.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._process.kill()
                self._process.wait()


def serve_backend(stream: FrameStream, backend_factory, capabilities=("in-process",)) -> None:
    """Expose in-process backends behind the protocol (one session at a time).

    ``backend_factory(image, start_header)`` builds a fresh Segmenter for
    each SESSION_START.  Returns when the peer disconnects; protocol
    violations are answered with an ERROR frame before closing.
    """
    def fail(code: str, message: str) -> None:
        stream.send({"kind": "ERROR", "code": code, "message": message})

    try:
        header, _ = stream.recv()
        if header["kind"] != "HELLO":
            fail("protocol", f"expected HELLO, got {header['kind']}")
            return
        if header.get("version") != PROTOCOL_VERSION:
            fail("version", f"unsupported protocol version {header.get('version')}")
            return
        stream.send({"kind": "HELLO", "version": PROTOCOL_VERSION,
                     "capabilities": list(capabilities)})
        while True:
            try:
                header, payload = stream.recv()
            except BridgeClosedError:
                return
            if header["kind"] == "SESSION_END":
                continue
            if header["kind"] != "SESSION_START":
                fail("state", f"expected SESSION_START, got {header['kind']}")
                return
            dims = tuple(int(d) for d in header["dims"])
            spacing = tuple(float(s) for s in header["spacing"])
            image = decode_image(payload, dims, spacing)
            backend = backend_factory(image, header)
            session_id = str(header.get("session_id", ""))
            while True:
                header, payload = stream.recv()
                kind = header["kind"]
                if kind == "SESSION_END":
                    backend.close()
                    break
                if kind == "SESSION_START":
                    fail("state", "SESSION_START while a session is open")
                    return
                if kind != "PROMPTS":
                    fail("state", f"expected PROMPTS, got {kind}")
                    return
                iteration = int(header["iteration"])
                prompts = parse_prompt_set(str(header.get("prompts", "")), iteration)
                prev = decode_mask(payload, dims, spacing) if payload else None
                request = SegmentationRequest(image=image, prompts=prompts,
                                              previous_mask=prev, session_id=session_id,
                                              iteration=iteration)
                try:
                    mask = backend.segment(request)
                except Exception as exc:  # surfaced to the peer, not swallowed
                    fail("internal", f"{type(exc).__name__}: {exc}")
                    return
                stream.send({"kind": "SEGMENT_RESULT", "iteration": iteration},
                            mask_payload(mask))
    except BridgeClosedError:
        return
    except BridgeProtocolError as exc:
        try:
            fail("protocol", str(exc))
        except (OSError, BridgeClosedError, ValueError):
            pass
        return
