"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FlowcommError(Exception):
    exit_code = 4


class ConfigError(FlowcommError):
    exit_code = 2


class DataError(FlowcommError):
    exit_code = 3


class SchemaError(DataError):
    pass


class IntegrityError(DataError):
    pass


class CorruptStoreError(DataError):
    pass


class ConsistencyError(FlowcommError):
    """Internal invariant broken between two artifacts (e.g. a T-edge with no weight)."""

    exit_code = 4


class StageError(FlowcommError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4)
