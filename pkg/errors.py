"""Exceptions shared by the scheduling library, the CLI and the HTTP service."""


class GreedySchedError(Exception):
    """Base class for every error raised on purpose by this project."""


class InputError(GreedySchedError, ValueError):
    """Bad user input: graphs, rates, priorities, specifiers or parameters."""


class CapacityError(InputError):
    """A graph is larger than a configured size cap."""


class InfeasibleError(InputError):
    """A rate vector lies outside the region a construction requires."""


class InvariantViolation(GreedySchedError, RuntimeError):
    """An internal invariant broke. Always a bug, never bad input."""
