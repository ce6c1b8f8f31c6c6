"""Exception types shared across the package."""


class BoundsError(ValueError):
    """A viewpoint component lies outside its configured bounds."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class SceneParseError(ValueError):
    """A scene file is malformed.  ``offset`` is the byte offset at which
    parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SceneVersionError(ValueError):
    """A scene file declares an unsupported format version."""

    def __init__(self, found, supported):
        super().__init__(
            f"unsupported scene format version {found} (supported: {supported})"
        )
        self.found = found
        self.supported = supported


class FieldValidationError(ValueError):
    """A voxel field violates an invariant.  ``voxel`` is the offending
    (ix, iy, iz) index when one can be named."""

    def __init__(self, message, voxel=None):
        if voxel is not None:
            voxel = tuple(int(v) for v in voxel)
            message = f"{message} at voxel {voxel}"
        super().__init__(message)
        self.voxel = voxel


class OracleProtocolError(RuntimeError):
    """The external classifier oracle violated the wire protocol."""


class ConfigError(ValueError):
    """A run configuration is invalid (unknown keys, bad values, missing
    files).  CLI maps this to exit code 2."""
