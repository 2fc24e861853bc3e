"""Exception hierarchy shared by every engine component."""


class EngineError(Exception):
    """Base class for all engine errors."""


class ValidationError(EngineError):
    """Input rejected before any state changed (CLI exit code 1)."""


class MalformedDocument(ValidationError):
    pass


class MissingField(ValidationError):
    def __init__(self, path: str):
        super().__init__(f"missing field: {path}")
        self.path = path


class InvalidValue(ValidationError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"invalid value at {path}: {reason}")
        self.path = path
        self.reason = reason


class UnresolvableNode(EngineError):
    def __init__(self, ref: str, device: str | None = None):
        where = f" on device {device!r}" if device else ""
        super().__init__(f"node {ref} not found{where}")
        self.ref = ref
        self.device = device


class NotAVariable(EngineError):
    pass


class DuplicateDevice(ValidationError):
    pass


class UnknownDevice(EngineError):
    pass


class UnknownMetadataKey(EngineError):
    pass


class SourceUnavailable(EngineError):
    pass


class UnknownCodec(EngineError):
    pass


class CorruptPayload(EngineError):
    pass


class UnknownTopic(EngineError):
    pass


class RetentionViolation(EngineError):
    pass


class IncompatibleDataType(EngineError):
    pass


class EmptySeries(ValidationError):
    pass


class UnsortedSeries(ValidationError):
    pass


class EmptyIntersection(EngineError):
    pass


class IoFailure(EngineError):
    pass
