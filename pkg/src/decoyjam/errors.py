class DecoyJamError(Exception):
    pass


class ConfigurationError(DecoyJamError, ValueError):
    """Invalid scenario parameters or mismatched array shapes."""


class DomainError(DecoyJamError, ValueError):
    """Arguments outside the range where a formula is defined."""


class DegenerateChannelError(DecoyJamError, ValueError):
    """Channel gains make a linear system singular."""


class NumericalError(DecoyJamError, RuntimeError):
    """A numerical routine failed to converge."""
