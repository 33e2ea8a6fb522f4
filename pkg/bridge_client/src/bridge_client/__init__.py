"""Reference external-backend server for the segloop wire protocol.

Implements the framed protocol independently (this package never imports
the driving harness) and ships a dummy prompt-dilation model plus a mount
point for real models.
"""

from .framing import PROTOCOL_VERSION, encode_frame, read_frame, write_frame
from .model import DilationModel, load_model
from .prompts import ParsedPrompts, parse_prompts
from .server import BridgeServerState, serve_connection

__version__ = "0.1.0"

__all__ = [
    "PROTOCOL_VERSION", "encode_frame", "read_frame", "write_frame",
    "DilationModel", "load_model", "ParsedPrompts", "parse_prompts",
    "BridgeServerState", "serve_connection",
]
