import socket
import struct
import threading

import numpy as np
import pytest

from segloop.backends import (BridgeBackend, DilationBackend, FrameStream,
                              SegmentationRequest, Segmenter, encode_frame,
                              serve_backend)
from segloop.backends.wire import PROTOCOL_VERSION, decode_mask, mask_payload
from segloop.errors import (BridgeClosedError, BridgeProtocolError, BridgeRemoteError)
from segloop.prompts import Polarity, PointPrompt, PromptSet
from segloop.volume import BinaryMask, VoxelGrid

from conftest import make_mask


def _image(dims=(6, 6, 6), spacing=(1.0, 1.0, 1.0)):
    return VoxelGrid(np.full(dims, 0.5, np.float32), spacing)


def _point_set(voxel, iteration=0, polarity=Polarity.POSITIVE):
    return PromptSet([PointPrompt(voxel, polarity)], None, [], iteration)


class _StaticBackend(Segmenter):
    """Always returns the same mask (e.g. a gt loaded from the server's own
    storage)."""

    def __init__(self, mask):
        self.mask = mask

    def segment(self, request):
        return self.mask


class _EchoBackend(Segmenter):
    """Returns the previous mask (empty at iteration 0)."""

    def segment(self, request):
        if request.previous_mask is not None:
            return request.previous_mask
        return BinaryMask(np.zeros(request.image.dims, np.uint8), request.image.spacing)


def _loopback(backend_factory):
    a, b = socket.socketpair()
    server_stream = FrameStream(a.makefile("rb"), a.makefile("wb"), owned=(a,))
    thread = threading.Thread(target=serve_backend, args=(server_stream, backend_factory),
                              daemon=True)
    thread.start()
    client = BridgeBackend(FrameStream(b.makefile("rb"), b.makefile("wb"), owned=(b,)))
    return client, thread, (a, b)


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------

def test_frame_layout_is_pinned():
    frame = encode_frame({"kind": "SESSION_END"})
    (n,) = struct.unpack_from("<Q", frame, 0)
    body = frame[8:]
    assert len(body) == n
    assert body == b'{"kind":"SESSION_END","payload_bytes":0}\n'


def test_frame_round_trip_with_payload():
    payload = bytes(range(7))
    frame = encode_frame({"kind": "SEGMENT_RESULT", "iteration": 3}, payload)
    import io
    stream = FrameStream(io.BytesIO(frame), io.BytesIO())
    header, got = stream.recv()
    assert header["kind"] == "SEGMENT_RESULT"
    assert header["iteration"] == 3
    assert got == payload


def test_recv_eof_and_garbage():
    import io
    stream = FrameStream(io.BytesIO(b""), io.BytesIO())
    with pytest.raises(BridgeClosedError):
        stream.recv()
    bad = struct.pack("<Q", 5) + b"nojsn"
    with pytest.raises(BridgeProtocolError):
        FrameStream(io.BytesIO(bad), io.BytesIO()).recv()
    mismatched = encode_frame({"kind": "X"}, b"abc")[:-1]
    with pytest.raises(BridgeClosedError):
        FrameStream(io.BytesIO(mismatched), io.BytesIO()).recv()


def test_mask_payload_round_trip(gen):
    m = make_mask(gen, dims=(4, 5, 6))
    back = decode_mask(mask_payload(m), m.dims, m.spacing)
    assert np.array_equal(back.data, m.data)


# ---------------------------------------------------------------------------
# Client/server sessions
# ---------------------------------------------------------------------------

def test_bridge_static_gt_server(gen):
    gt = make_mask(gen, dims=(6, 6, 6))
    client, thread, socks = _loopback(lambda image, header: _StaticBackend(gt))
    image = _image()
    out = client.segment(SegmentationRequest(image=image, prompts=_point_set((1, 1, 1)),
                                             previous_mask=None, session_id="s",
                                             iteration=0))
    assert np.array_equal(out.data, gt.data)
    client.close()
    thread.join(timeout=5)


def test_bridge_echo_server_fixed_point(gen):
    client, thread, socks = _loopback(lambda image, header: _EchoBackend())
    image = _image()
    prev = None
    results = []
    for k in range(3):
        out = client.segment(SegmentationRequest(image=image,
                                                 prompts=_point_set((1, 1, 1), k),
                                                 previous_mask=prev, session_id="s",
                                                 iteration=k))
        results.append(out)
        prev = out
    assert results[0].is_empty()
    assert np.array_equal(results[1].data, results[0].data)
    assert np.array_equal(results[2].data, results[1].data)
    client.close()
    thread.join(timeout=5)


def test_bridge_two_sessions_one_connection(gen):
    gt = make_mask(gen, dims=(6, 6, 6))
    client, thread, socks = _loopback(lambda image, header: _StaticBackend(gt))
    image = _image()
    for sid in ("first", "second"):
        out = client.segment(SegmentationRequest(image=image, prompts=_point_set((1, 1, 1)),
                                                 previous_mask=None, session_id=sid,
                                                 iteration=0))
        assert np.array_equal(out.data, gt.data)
    client.close()
    thread.join(timeout=5)


def test_bridge_remote_error_surfaces():
    class Exploding(Segmenter):
        def segment(self, request):
            raise RuntimeError("boom")

    client, thread, socks = _loopback(lambda image, header: Exploding())
    with pytest.raises(BridgeRemoteError) as err:
        client.segment(SegmentationRequest(image=_image(), prompts=_point_set((1, 1, 1)),
                                           previous_mask=None, session_id="s", iteration=0))
    assert err.value.code == "internal"
    client.close()
    thread.join(timeout=5)


def test_bridge_version_mismatch_rejected():
    a, b = socket.socketpair()
    server_stream = FrameStream(a.makefile("rb"), a.makefile("wb"), owned=(a,))
    thread = threading.Thread(target=serve_backend,
                              args=(server_stream, lambda image, header: _EchoBackend()),
                              daemon=True)
    thread.start()
    stream = FrameStream(b.makefile("rb"), b.makefile("wb"), owned=(b,))
    stream.send({"kind": "HELLO", "version": 2, "capabilities": []})
    header, _ = stream.recv()
    assert header["kind"] == "ERROR"
    assert header["code"] == "version"
    stream.close()
    thread.join(timeout=5)


def test_bridge_prompts_before_session_start_rejected():
    a, b = socket.socketpair()
    server_stream = FrameStream(a.makefile("rb"), a.makefile("wb"), owned=(a,))
    thread = threading.Thread(target=serve_backend,
                              args=(server_stream, lambda image, header: _EchoBackend()),
                              daemon=True)
    thread.start()
    stream = FrameStream(b.makefile("rb"), b.makefile("wb"), owned=(b,))
    stream.send({"kind": "HELLO", "version": PROTOCOL_VERSION, "capabilities": []})
    stream.recv()
    stream.send({"kind": "PROMPTS", "iteration": 0, "prompts": ""})
    header, _ = stream.recv()
    assert header["kind"] == "ERROR"
    assert header["code"] == "state"
    stream.close()
    thread.join(timeout=5)


def test_bridge_equivalent_to_in_process_dilation(gen):
    """The same dilation model gives identical masks in-process and behind
    the bridge."""
    image = _image((8, 8, 8))
    local = DilationBackend(radius_mm=2.0)
    client, thread, socks = _loopback(lambda img, header: DilationBackend(radius_mm=2.0))
    prev_local = prev_bridge = None
    for k in range(3):
        ps = _point_set((k + 1, 2, 3), k)
        out_local = local.segment(SegmentationRequest(image=image, prompts=ps,
                                                      previous_mask=prev_local,
                                                      session_id="s", iteration=k))
        ps2 = _point_set((k + 1, 2, 3), k)
        out_bridge = client.segment(SegmentationRequest(image=image, prompts=ps2,
                                                        previous_mask=prev_bridge,
                                                        session_id="s", iteration=k))
        assert np.array_equal(out_local.data, out_bridge.data)
        prev_local, prev_bridge = out_local, out_bridge
    client.close()
    thread.join(timeout=5)


# ---------------------------------------------------------------------------
# Golden transcripts (fixtures generated by scripts/make_golden_transcripts.py)
# ---------------------------------------------------------------------------

import io
import os

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures", "bridge")


def _fixture(name):
    with open(os.path.join(FIXTURES, name), "rb") as fh:
        return fh.read()


def _golden_image():
    dims = (2, 2, 2)
    data = np.zeros(dims, np.float32)
    for i in range(2):
        for j in range(2):
            for k in range(2):
                data[i, j, k] = np.float32(0.1 * (i + 2 * (j + 2 * k)))
    return VoxelGrid(data, (1.0, 1.0, 1.0))


class _KeepOpenBuffer(io.BytesIO):
    def close(self):  # keep bytes readable after the stream closes
        pass


def test_golden_client_byte_conformance():
    """The client encoder reproduces the golden client transcript byte for
    byte when driven through the scripted session."""
    out = _KeepOpenBuffer()
    client = BridgeBackend(FrameStream(io.BytesIO(_fixture("server_frames.bin")), out))
    image = _golden_image()
    first = client.segment(SegmentationRequest(
        image=image, prompts=_point_set((0, 0, 0), 0), previous_mask=None,
        session_id="golden-1", iteration=0))
    second = client.segment(SegmentationRequest(
        image=image, prompts=_point_set((0, 0, 1), 1, Polarity.NEGATIVE),
        previous_mask=first, session_id="golden-1", iteration=1))
    client.close()
    assert out.getvalue() == _fixture("client_frames.bin")
    assert sorted(tuple(v) for v in np.argwhere(second.bool())) == [(0, 1, 0), (1, 0, 0)]


def test_golden_server_byte_conformance():
    """serve_backend around the dilation model reproduces the golden server
    transcript byte for byte."""
    out = io.BytesIO()
    stream = FrameStream(io.BytesIO(_fixture("client_frames.bin")), out)
    serve_backend(stream, lambda image, header: DilationBackend(radius_mm=1.0),
                  capabilities=("dummy-dilation",))
    assert out.getvalue() == _fixture("server_frames.bin")


def test_golden_bad_version_reply():
    out = io.BytesIO()
    stream = FrameStream(io.BytesIO(_fixture("client_bad_version.bin")), out)
    serve_backend(stream, lambda image, header: _EchoBackend())
    assert out.getvalue() == _fixture("server_bad_version.bin")


def test_golden_replay_deterministic():
    """Same frames in, same frames out, twice."""
    outs = []
    for _ in range(2):
        out = io.BytesIO()
        serve_backend(FrameStream(io.BytesIO(_fixture("client_frames.bin")), out),
                      lambda image, header: DilationBackend(radius_mm=1.0),
                      capabilities=("dummy-dilation",))
        outs.append(out.getvalue())
    assert outs[0] == outs[1]


def test_second_session_start_without_end_rejected():
    a, b = socket.socketpair()
    server_stream = FrameStream(a.makefile("rb"), a.makefile("wb"), owned=(a,))
    thread = threading.Thread(target=serve_backend,
                              args=(server_stream, lambda image, header: _EchoBackend()),
                              daemon=True)
    thread.start()
    stream = FrameStream(b.makefile("rb"), b.makefile("wb"), owned=(b,))
    stream.send({"kind": "HELLO", "version": PROTOCOL_VERSION, "capabilities": []})
    stream.recv()
    start = {"kind": "SESSION_START", "session_id": "x", "dims": [2, 2, 2],
             "spacing": [1.0, 1.0, 1.0], "dtype": "float32"}
    stream.send(start, b"\x00" * 32)
    stream.send(start, b"\x00" * 32)
    header, _ = stream.recv()
    assert header["kind"] == "ERROR"
    assert header["code"] == "state"
    stream.close()
    thread.join(timeout=5)
