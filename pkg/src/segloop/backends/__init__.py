from .base import SegmentationRequest, Segmenter, ball_offsets, paint_balls
from .dilation import DilationBackend
from .oracle import OracleBackend, corrupt_mask
from .region_grow import RegionGrowBackend
from .replay import ReplayBackend
from .wire import (PROTOCOL_VERSION, BridgeBackend, FrameStream, encode_frame,
                   serve_backend)

__all__ = [
    "SegmentationRequest", "Segmenter", "ball_offsets", "paint_balls",
    "DilationBackend", "OracleBackend", "corrupt_mask", "RegionGrowBackend",
    "ReplayBackend", "BridgeBackend", "FrameStream", "encode_frame",
    "serve_backend", "PROTOCOL_VERSION",
]
