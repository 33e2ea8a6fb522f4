"""Protocol server: one session at a time over a pair of byte streams.

Sequence: HELLO/HELLO handshake (version 1), then per session
SESSION_START (+float32 image payload), one PROMPTS (+optional uint8
previous-mask payload) / SEGMENT_RESULT (+uint8 mask payload) exchange per
iteration, SESSION_END.  Multiple sessions may follow on one connection.
Violations are answered with an ERROR frame and the connection closes.
"""

from __future__ import annotations

import sys

import numpy as np

from .framing import (PROTOCOL_VERSION, ConnectionClosed, FramingError, read_frame,
                      write_frame)
from .prompts import PromptParseError, parse_prompts


class BridgeServerState:
    """Tracks the negotiated version and the open session's geometry."""

    def __init__(self):
        self.version: int | None = None
        self.dims: tuple[int, int, int] | None = None
        self.spacing: tuple[float, float, float] | None = None
        self.image: np.ndarray | None = None
        self.session_id: str | None = None

    @property
    def session_open(self) -> bool:
        return self.dims is not None

    def start(self, header: dict, payload: bytes) -> None:
        dims = tuple(int(d) for d in header["dims"])
        spacing = tuple(float(s) for s in header["spacing"])
        if header.get("dtype") != "float32":
            raise ValueError(f"unsupported image dtype {header.get('dtype')!r}")
        nvox = dims[0] * dims[1] * dims[2]
        if len(payload) != 4 * nvox:
            raise ValueError(f"image payload is {len(payload)} bytes, expected {4 * nvox}")
        self.image = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F")
        self.dims = dims
        self.spacing = spacing
        self.session_id = str(header.get("session_id", ""))

    def decode_mask(self, payload: bytes) -> np.ndarray:
        nvox = self.dims[0] * self.dims[1] * self.dims[2]
        if len(payload) != nvox:
            raise ValueError(f"mask payload is {len(payload)} bytes, expected {nvox}")
        return np.frombuffer(payload, dtype=np.uint8).reshape(self.dims, order="F")

    def end(self) -> None:
        self.dims = None
        self.spacing = None
        self.image = None
        self.session_id = None


def serve_connection(rfile, wfile, model, capabilities=("dummy-dilation",),
                     log=None) -> None:
    """Serve one connection until EOF; returns normally on disconnect."""
    log = log or (lambda msg: None)

    def fail(code: str, message: str) -> None:
        write_frame(wfile, {"kind": "ERROR", "code": code, "message": message})
        log(f"error [{code}]: {message}")

    state = BridgeServerState()
    try:
        header, _ = read_frame(rfile)
        if header["kind"] != "HELLO":
            fail("protocol", f"expected HELLO, got {header['kind']}")
            return
        if header.get("version") != PROTOCOL_VERSION:
            fail("version", f"unsupported protocol version {header.get('version')}")
            return
        state.version = PROTOCOL_VERSION
        write_frame(wfile, {"kind": "HELLO", "version": PROTOCOL_VERSION,
                            "capabilities": list(capabilities)})
        log("handshake complete")
        while True:
            header, payload = read_frame(rfile)
            kind = header["kind"]
            if kind == "SESSION_END":
                if state.session_open:
                    log(f"session {state.session_id} ended")
                state.end()
                continue
            if kind == "SESSION_START":
                if state.session_open:
                    fail("state", "SESSION_START while a session is open")
                    return
                try:
                    state.start(header, payload)
                except (KeyError, TypeError, ValueError) as exc:
                    fail("geometry", str(exc))
                    return
                log(f"session {state.session_id}: dims {state.dims}")
                continue
            if kind != "PROMPTS":
                fail("protocol", f"unexpected frame kind {kind!r}")
                return
            if not state.session_open:
                fail("state", "PROMPTS before SESSION_START")
                return
            iteration = int(header.get("iteration", 0))
            try:
                prompts = parse_prompts(str(header.get("prompts", "")))
                previous = state.decode_mask(payload) if payload else None
            except (PromptParseError, ValueError) as exc:
                fail("protocol", str(exc))
                return
            try:
                mask = model(state.image, state.spacing, prompts, previous, iteration)
                mask = np.asarray(mask, dtype=np.uint8)
                if mask.shape != state.dims:
                    raise ValueError(f"model returned shape {mask.shape}, "
                                     f"session needs {state.dims}")
                if mask.max(initial=0) > 1:
                    raise ValueError("model returned values other than 0/1")
            except Exception as exc:  # surfaced to the peer
                fail("internal", f"{type(exc).__name__}: {exc}")
                return
            write_frame(wfile, {"kind": "SEGMENT_RESULT", "iteration": iteration},
                        mask.tobytes(order="F"))
            log(f"iteration {iteration}: {int(mask.sum())} voxels")
    except ConnectionClosed:
        return
    except FramingError as exc:
        try:
            fail("protocol", str(exc))
        except (OSError, ValueError, ConnectionClosed):
            pass
        return


def log_to_stderr(msg: str) -> None:
    print(f"[bridge-client] {msg}", file=sys.stderr, flush=True)
