import io
import os
import struct

import numpy as np
import pytest

from bridge_client import (PROTOCOL_VERSION, encode_frame, parse_prompts, read_frame,
                           serve_connection)
from bridge_client.framing import ConnectionClosed, FramingError
from bridge_client.model import DilationModel
from bridge_client.prompts import PromptParseError

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "..", "tests", "fixtures",
                        "bridge")


def _fixture(name: str) -> bytes:
    with open(os.path.join(FIXTURES, name), "rb") as fh:
        return fh.read()


def _frame_blob(header, payload=b""):
    return encode_frame(header, payload)


def _serve_bytes(blob: bytes, model=None, capabilities=("dummy-dilation",)) -> bytes:
    out = io.BytesIO()
    serve_connection(io.BytesIO(blob), out, model or DilationModel(radius_mm=1.0),
                     capabilities=capabilities)
    return out.getvalue()


def _frames(blob: bytes):
    stream = io.BytesIO(blob)
    frames = []
    while True:
        try:
            frames.append(read_frame(stream))
        except ConnectionClosed:
            return frames


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------

def test_frame_round_trip():
    blob = encode_frame({"kind": "SEGMENT_RESULT", "iteration": 2}, b"\x01\x00")
    header, payload = read_frame(io.BytesIO(blob))
    assert header == {"kind": "SEGMENT_RESULT", "iteration": 2, "payload_bytes": 2}
    assert payload == b"\x01\x00"


def test_frame_canonical_bytes():
    blob = encode_frame({"kind": "SESSION_END"})
    assert blob[8:] == b'{"kind":"SESSION_END","payload_bytes":0}\n'


def test_frame_errors():
    with pytest.raises(ConnectionClosed):
        read_frame(io.BytesIO(b""))
    with pytest.raises(FramingError):
        read_frame(io.BytesIO(struct.pack("<Q", 4) + b"junk"))
    truncated = encode_frame({"kind": "X"}, b"abc")[:-2]
    with pytest.raises(ConnectionClosed):
        read_frame(io.BytesIO(truncated))


# ---------------------------------------------------------------------------
# Prompt records
# ---------------------------------------------------------------------------

def test_parse_prompts_mixed():
    text = ("point positive - - 1,2,3\n"
            "box positive - - 0,0,0;5,6,7\n"
            "scribble negative transverse 4 1,1,4;2,1,4\n")
    parsed = parse_prompts(text)
    assert parsed.positive_voxels == [(1, 2, 3)]
    assert parsed.negative_voxels == [(1, 1, 4), (2, 1, 4)]
    assert parsed.box == ((0, 0, 0), (5, 6, 7))


def test_parse_prompts_errors():
    with pytest.raises(PromptParseError):
        parse_prompts("point positive - -\n")
    with pytest.raises(PromptParseError):
        parse_prompts("blob positive - - 1,2,3\n")
    with pytest.raises(PromptParseError):
        parse_prompts("point sideways - - 1,2,3\n")


# ---------------------------------------------------------------------------
# Dummy model
# ---------------------------------------------------------------------------

def _ball(center, radius, spacing, dims):
    out = set()
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                d2 = (((i - center[0]) * spacing[0]) ** 2
                      + ((j - center[1]) * spacing[1]) ** 2
                      + ((k - center[2]) * spacing[2]) ** 2)
                if d2 <= radius ** 2:
                    out.add((i, j, k))
    return out


def test_dummy_model_ball():
    dims = (7, 7, 7)
    image = np.zeros(dims, np.float32)
    parsed = parse_prompts("point positive - - 3,3,3\n")
    mask = DilationModel(radius_mm=2.0)(image, (1.0, 1.0, 1.0), parsed, None, 0)
    assert {tuple(v) for v in np.argwhere(mask > 0)} == _ball((3, 3, 3), 2.0,
                                                              (1, 1, 1), dims)


def test_dummy_model_negative_and_previous():
    dims = (7, 7, 7)
    image = np.zeros(dims, np.float32)
    prev = np.zeros(dims, np.uint8)
    prev[0, 0, 0] = 1
    parsed = parse_prompts("point positive - - 3,3,3\npoint negative - - 3,3,3\n")
    mask = DilationModel(radius_mm=1.5)(image, (1.0, 1.0, 1.0), parsed, prev, 1)
    # the negative ball erases the positive one; the previous voxel survives
    assert {tuple(v) for v in np.argwhere(mask > 0)} == {(0, 0, 0)}


def test_dummy_model_ignores_box():
    dims = (5, 5, 5)
    parsed = parse_prompts("box positive - - 0,0,0;2,2,2\n")
    mask = DilationModel()(np.zeros(dims, np.float32), (1, 1, 1), parsed, None, 0)
    assert not mask.any()


def test_load_model_hook():
    from bridge_client.model import load_model
    model = load_model("bridge_client.model:DilationModel")
    assert callable(model)
    with pytest.raises(ValueError):
        load_model("not-a-module-path")


# ---------------------------------------------------------------------------
# Server state machine
# ---------------------------------------------------------------------------

def _hello(version=PROTOCOL_VERSION):
    return _frame_blob({"kind": "HELLO", "version": version, "capabilities": []})


def _session_start(dims=(2, 2, 2), spacing=(1.0, 1.0, 1.0), sid="s"):
    nvox = dims[0] * dims[1] * dims[2]
    return _frame_blob({"kind": "SESSION_START", "session_id": sid,
                        "dims": list(dims), "spacing": list(spacing),
                        "dtype": "float32"}, b"\x00" * (4 * nvox))


def test_golden_transcripts():
    assert _serve_bytes(_fixture("client_frames.bin")) == _fixture("server_frames.bin")
    assert _serve_bytes(_fixture("client_bad_version.bin")) == \
        _fixture("server_bad_version.bin")


def test_rejects_prompts_before_session_start():
    blob = _hello() + _frame_blob({"kind": "PROMPTS", "iteration": 0, "prompts": ""})
    frames = _frames(_serve_bytes(blob))
    assert frames[-1][0]["kind"] == "ERROR"
    assert frames[-1][0]["code"] == "state"


def test_rejects_second_session_start():
    blob = _hello() + _session_start() + _session_start()
    frames = _frames(_serve_bytes(blob))
    assert frames[-1][0]["kind"] == "ERROR"
    assert frames[-1][0]["code"] == "state"


def test_session_end_allows_new_session():
    prompts = _frame_blob({"kind": "PROMPTS", "iteration": 0,
                           "prompts": "point positive - - 0,0,0\n"})
    blob = (_hello() + _session_start(sid="a") + prompts
            + _frame_blob({"kind": "SESSION_END"}) + _session_start(sid="b") + prompts)
    frames = _frames(_serve_bytes(blob))
    kinds = [h["kind"] for h, _ in frames]
    assert kinds == ["HELLO", "SEGMENT_RESULT", "SEGMENT_RESULT"]


def test_model_failure_answers_error():
    def exploding(image, spacing, prompts, previous, iteration):
        raise RuntimeError("no weights")

    prompts = _frame_blob({"kind": "PROMPTS", "iteration": 0,
                           "prompts": "point positive - - 0,0,0\n"})
    frames = _frames(_serve_bytes(_hello() + _session_start() + prompts,
                                  model=exploding, capabilities=("custom-model",)))
    assert frames[-1][0]["kind"] == "ERROR"
    assert frames[-1][0]["code"] == "internal"
    assert "no weights" in frames[-1][0]["message"]


def test_geometry_of_results_matches_session():
    dims = (3, 4, 5)
    prompts = _frame_blob({"kind": "PROMPTS", "iteration": 0,
                           "prompts": "point positive - - 1,1,1\n"})
    frames = _frames(_serve_bytes(_hello() + _session_start(dims=dims) + prompts))
    header, payload = frames[-1]
    assert header["kind"] == "SEGMENT_RESULT"
    assert len(payload) == dims[0] * dims[1] * dims[2]


def test_package_never_imports_the_harness():
    import ast

    import bridge_client
    root = os.path.dirname(bridge_client.__file__)
    for name in os.listdir(root):
        if not name.endswith(".py"):
            continue
        with open(os.path.join(root, name), "r", encoding="utf-8") as fh:
            tree = ast.parse(fh.read())
        for node in ast.walk(tree):
            if isinstance(node, ast.Import):
                mods = [a.name for a in node.names]
            elif isinstance(node, ast.ImportFrom):
                mods = [node.module or ""]
            else:
                continue
            for mod in mods:
                assert not mod.startswith("segloop"), f"{name} imports {mod}"


def test_session_end_before_any_session_is_ignored():
    prompts = _frame_blob({"kind": "PROMPTS", "iteration": 0,
                           "prompts": "point positive - - 0,0,0\n"})
    blob = (_hello() + _frame_blob({"kind": "SESSION_END"}) + _session_start()
            + prompts)
    frames = _frames(_serve_bytes(blob))
    assert [h["kind"] for h, _ in frames] == ["HELLO", "SEGMENT_RESULT"]
