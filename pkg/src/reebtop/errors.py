"""Exception hierarchy. The CLI maps these onto its exit codes."""


class ReebtopError(Exception):
    pass


class InvalidSpecError(ReebtopError, ValueError):
    """A body, metric or config violates a stated invariant."""


class GeometryError(ReebtopError):
    pass


class DomainError(GeometryError, ValueError):
    pass


class StarshapedError(GeometryError):
    pass


class ConstructionError(GeometryError):
    pass


class PreconditionError(GeometryError, ValueError):
    pass


class DegeneratePointError(GeometryError):
    pass


class UnsupportedOperationError(ReebtopError):
    pass


class ResolutionError(ReebtopError):
    pass


class IntegrationError(ReebtopError):
    def __init__(self, message, last_time=None, last_state=None):
        super().__init__(message)
        self.last_time = last_time
        self.last_state = last_state
