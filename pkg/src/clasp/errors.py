"""Exception hierarchy shared across the pipeline."""


class ClaspError(Exception):
    """Base class for every error raised by this package."""


# geometry
class InvalidDepth(ClaspError):
    pass


class OutOfImage(ClaspError):
    pass


class BehindCamera(ClaspError):
    pass


class NoContact(ClaspError):
    pass


class NoFeasibleGrasp(ClaspError):
    pass


# scene
class Penetration(ClaspError):
    pass


class OutOfBounds(ClaspError):
    pass


class PlacementExhausted(ClaspError):
    pass


class UnknownObject(ClaspError):
    pass


class SceneFormatError(ClaspError):
    """Scene file could not be loaded; ``line`` points into the source text."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# reasoner
class ReasonerError(ClaspError):
    """Carries the raw response body (if any) for diagnostics."""

    def __init__(self, message, body=None):
        super().__init__(message)
        self.body = body


class MalformedJson(ReasonerError):
    pass


class UnexpectedField(MalformedJson):
    pass


class MissingField(ReasonerError):
    def __init__(self, field, body=None):
        super().__init__(f"missing field {field!r}", body)
        self.field = field


class NonFinite(ReasonerError):
    pass


class ActionOutOfBounds(ReasonerError):
    pass


class UnknownCategory(ReasonerError):
    pass


class Transport(ReasonerError):
    pass


class Timeout(ReasonerError):
    pass


class TargetNotVisible(ClaspError):
    pass


# judger
class TargetMissingInPre(ClaspError):
    pass


# dataforge
class NoOverlap(ClaspError):
    pass


class FullyOccluded(ClaspError):
    pass


# orchestrator / harness
class DependencyCycle(ClaspError):
    pass


class ZeroAttempts(ClaspError):
    pass


class EmptyUnion(ClaspError):
    pass


class EmptyList(ClaspError):
    pass
