"""Exception types shared across the pipeline."""


class RoadspeedError(Exception):
    """Base class for every error raised deliberately by this package."""


class ContractError(RoadspeedError, ValueError):
    """An operation was called with arguments violating its precondition."""


class ConfigError(RoadspeedError, ValueError):
    """Invalid or missing pipeline configuration."""


class SpecError(RoadspeedError, ValueError):
    """Invalid synthetic scene specification."""


class PNMDecodeError(RoadspeedError, ValueError):
    """Malformed PNM bytes. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
