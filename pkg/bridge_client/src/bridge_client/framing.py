"""Frame layer of the wire protocol (independent implementation).

A frame is an 8-byte little-endian unsigned length N followed by N body
bytes: one UTF-8 JSON object line terminated by ``\\n`` (canonical form:
sorted keys, no spaces, ``payload_bytes`` always present), then exactly
``payload_bytes`` raw bytes.
"""

from __future__ import annotations

import json
import struct

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 1 << 32
_LEN = struct.Struct("<Q")


class ConnectionClosed(Exception):
    """Peer closed the stream between or inside frames."""


class FramingError(Exception):
    """A frame could not be decoded."""


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    header = dict(header)
    header["payload_bytes"] = len(payload)
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    body = line + payload
    return _LEN.pack(len(body)) + body


def read_exact(rfile, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = rfile.read(remaining)
        if not chunk:
            raise ConnectionClosed(f"peer closed with {remaining} of {n} bytes pending")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(rfile) -> tuple[dict, bytes]:
    head = rfile.read(_LEN.size)
    if not head:
        raise ConnectionClosed("peer closed between frames")
    if len(head) < _LEN.size:
        raise ConnectionClosed("peer closed inside a frame length")
    (n,) = _LEN.unpack(head)
    if n == 0 or n > MAX_FRAME_BYTES:
        raise FramingError(f"implausible frame length {n}")
    body = read_exact(rfile, n)
    line, sep, payload = body.partition(b"\n")
    if not sep:
        raise FramingError("no header line terminator in frame body")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FramingError(f"undecodable header: {exc}") from exc
    if not isinstance(header, dict) or "kind" not in header:
        raise FramingError("header must be a JSON object with a 'kind'")
    if header.get("payload_bytes", 0) != len(payload):
        raise FramingError(f"payload_bytes {header.get('payload_bytes')} != "
                           f"actual {len(payload)}")
    return header, payload


def write_frame(wfile, header: dict, payload: bytes = b"") -> None:
    wfile.write(encode_frame(header, payload))
    wfile.flush()
