"""Exception types shared across the package."""


class SegloopError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(SegloopError):
    """Two grids that must share dims/spacing do not."""


class EmptyMaskError(SegloopError):
    """An operation that requires a nonempty mask received an empty one."""


class NiftiError(SegloopError):
    """A NIfTI-1 file could not be parsed or written.

    ``field`` names the offending header field so callers can distinguish
    malformed magic, unsupported datatype, truncated payload, etc.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NativeFormatError(SegloopError):
    """A native .vgh/.vgd volume could not be parsed."""


class PromptError(SegloopError):
    """A prompt or prompt set violates its structural invariants."""


class BackendError(SegloopError):
    """Base class for segmentation-backend failures."""


class ReplayError(BackendError):
    """The replay backend is missing the mask for a requested iteration."""


class BridgeError(BackendError):
    """Base class for wire-protocol failures."""


class BridgeClosedError(BridgeError):
    """The peer closed the connection mid-frame or mid-session."""


class BridgeProtocolError(BridgeError):
    """A frame could not be decoded or violated the message sequence."""


class BridgeGeometryError(BridgeError):
    """The peer returned a mask whose geometry does not match the session."""


class BridgeRemoteError(BridgeError):
    """The peer answered with an ERROR frame."""

    def __init__(self, code: str, message: str):
        super().__init__(f"remote error [{code}]: {message}")
        self.code = code
        self.remote_message = message


class ConfigError(SegloopError):
    """An experiment or prompt configuration is invalid."""


class PhantomError(SegloopError):
    """Phantom generation could not satisfy its ground-truth invariants."""
