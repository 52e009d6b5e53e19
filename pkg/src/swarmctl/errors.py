"""Exception hierarchy shared by every module."""


class SwarmError(Exception):
    pass


class DimensionError(SwarmError, ValueError):
    """Arrays do not match the declared (N, d) layout."""


class DomainError(SwarmError, ValueError):
    pass


class ConfigError(SwarmError, ValueError):
    """Invalid model/control/simulation parameters.

    ``path`` is the dotted location of the offending field when known.
    """

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class SingularConfigurationError(SwarmError):
    """Two agents coincide where the repulsion force is singular."""


class NumericalBlowupError(SwarmError, FloatingPointError):
    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state
