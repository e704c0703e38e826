"""Exception hierarchy shared across the package.

Two branches matter to callers: ``DataCorruption`` means bytes on disk (or in
a payload) cannot be trusted, everything else under ``D123Error`` is a usage
or content problem. The CLI maps these to distinct exit codes.
"""


class D123Error(Exception):
    """Base class for every error raised by this package."""


class DataCorruption(D123Error):
    """On-disk data is malformed, truncated or internally inconsistent."""


# -- geometry ---------------------------------------------------------------

class UnknownOrigin(D123Error):
    """A pose origin cannot be resolved (e.g. imu without calibration offset)."""


# -- log model / storage ----------------------------------------------------

class UnsortedTimestamps(DataCorruption):
    """A stream's timestamp column is not strictly increasing."""


class DuplicateModalityFile(D123Error):
    """Two streams claim the same modality within one log."""


class IoFailure(D123Error):
    """An OS-level read/write failed (missing file, lock contention, ...)."""


class CorruptFile(DataCorruption):
    """A container file cannot be parsed."""


class MetadataMismatch(DataCorruption):
    """Per-stream copies of the log metadata disagree."""


class SchemaViolation(D123Error):
    """A record or source line does not match the declared schema."""


# -- payloads ---------------------------------------------------------------

class MissingPayload(IoFailure):
    """An externally stored payload file is absent."""


class CodecUnsupportedForDecode(D123Error):
    """The payload codec cannot be decoded to the requested representation."""


class PayloadCorrupt(DataCorruption):
    """Payload bytes do not match their codec (bad length, bad deflate, ...)."""


# -- sync -------------------------------------------------------------------

class MissingModality(D123Error):
    """A referenced modality does not exist in the log."""


class EmptyReferenceStream(D123Error):
    """The sync reference stream has no events."""


# -- map --------------------------------------------------------------------

class MalformedWkb(DataCorruption):
    """A WKB blob is truncated or uses an unsupported type code."""


class UnknownLayer(D123Error):
    """A layer name is not one of the known map layers."""


class LayerEmpty(D123Error):
    """A nearest-object query ran against a layer with no objects."""


class UnknownId(D123Error):
    """No map object with the given id exists."""


class DanglingReference(D123Error):
    """A map object references an id that cannot be resolved."""


class MapUnavailable(D123Error):
    """The log carries no map reference, or the referenced file is absent."""


# -- scene access -----------------------------------------------------------

class UnknownSplit(D123Error):
    """A requested split directory does not exist under the data root."""


class IterationOutOfRange(D123Error):
    """A scene iteration index falls outside [-history, future]."""


class UnknownSensorId(D123Error):
    """A camera/lidar id is not present in the log's calibration set."""


# -- ingest -----------------------------------------------------------------

class NonMonotonicTimestamps(D123Error):
    """Source events are out of order where order is required."""


class UnknownFrameTag(D123Error):
    """A source declares a coordinate frame this parser does not know."""


# -- analytics --------------------------------------------------------------

class UnmappedLabel(D123Error):
    """A raw label has no taxonomy entry and the policy forbids fallback."""


class EmptyTrack(D123Error):
    """Kinematics were requested for a track with no records."""
