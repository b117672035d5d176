"""Exception hierarchy shared by every module."""


class BilliardError(Exception):
    """Base class for all package errors."""


class InvalidParams(BilliardError, ValueError):
    pass


class GeometryInvalid(BilliardError):
    pass


class OutOfRange(BilliardError, ValueError):
    pass


class SingularHit(BilliardError):
    """Trajectory hit the cusp vertex, a corner, or grazed a wall."""


class NoIntersection(BilliardError):
    """Ray left the table without a boundary hit (geometry bug guard)."""


class RunawayOrbit(BilliardError):
    pass


class DegenerateSeries(BilliardError):
    pass


class InsufficientData(BilliardError):
    pass


class QuadratureFailure(BilliardError):
    pass


class NotApplicable(BilliardError):
    pass


class ConfigError(BilliardError):
    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
