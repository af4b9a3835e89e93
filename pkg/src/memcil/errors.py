"""Exception types shared across the package."""


class ConfigError(Exception):
    """Raised when a config file cannot be parsed or fails validation.

    Carries the offending key in ``key`` when one is known, so the CLI
    can point at the exact line.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class FormatError(Exception):
    """Raised when a binary artifact is malformed.

    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(Exception):
    """Raised when an operation is invoked against an invalid model state,

    for example writing memory for a task twice or evaluating an empty
    classifier.
    """
