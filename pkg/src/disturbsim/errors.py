"""Exception types shared across the simulator."""


class DisturbSimError(Exception):
    """Base class for all simulator errors."""


class AddressError(DisturbSimError):
    """Physical address outside the configured capacity, or bad field map."""


class ProtocolError(DisturbSimError):
    """A DRAM command was issued in an illegal phase or too early.

    This always indicates a simulator bug, not a workload problem.
    """


class ConfigError(DisturbSimError):
    """Configuration values that cannot be satisfied (bad derivations, schema)."""


class DomainError(DisturbSimError):
    """Argument outside a function's mathematical domain."""


class SolverError(DisturbSimError):
    """The requested target is not achievable by the solver."""


class PairingError(DisturbSimError):
    """Two rows cannot be opened concurrently (not subarray-isolated)."""


class ProfileError(DisturbSimError):
    """Malformed or incomplete vulnerability profile."""


class ParseError(DisturbSimError):
    """Malformed trace or config file."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:" + (str(line) if line is not None else "?") + ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line
