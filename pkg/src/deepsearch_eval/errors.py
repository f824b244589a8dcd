class DeepSearchError(Exception):
    """Base class for all package errors."""


class UnknownEntityError(DeepSearchError, KeyError):
    def __init__(self, entity):
        super().__init__(f"unknown entity: {entity!r}")
        self.entity = entity

    def __str__(self):
        return self.args[0]


class NoLinkingSentenceError(DeepSearchError):
    pass


class DegenerateQueryError(DeepSearchError):
    pass


class DegenerateProbeError(DeepSearchError):
    pass


class ChainError(DeepSearchError):
    """A chain hop has no backing edge; ``hop`` is the failing index."""

    def __init__(self, message: str, hop: int):
        super().__init__(message)
        self.hop = hop


class InvalidRecordError(DeepSearchError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class VerificationIncomplete(DeepSearchError):
    pass


class EndpointError(DeepSearchError):
    """Chat endpoint unreachable after the retry policy was exhausted."""


class UnknownEIDError(DeepSearchError, KeyError):
    def __init__(self, eid):
        super().__init__(f"unknown EID: {eid}")
        self.eid = eid

    def __str__(self):
        return self.args[0]


class SandboxError(DeepSearchError):
    """Tool-API error carrying a machine-readable code."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


class NoInstancesError(DeepSearchError):
    pass
