"""Exception hierarchy.

Each class carries the process exit code the command line maps it to.
"""


class HPOMDPError(Exception):
    exit_code = 1


class ContractError(HPOMDPError, ValueError):
    """A caller violated a documented precondition."""

    exit_code = 2


class StructuralError(ContractError):
    """A concept graph or state space is malformed (cycle, empty, unknown node)."""


class DataError(HPOMDPError):
    """Input data or a model document could not be used."""

    exit_code = 3


class ImpossibleEvidenceError(DataError):
    """An observation has probability zero under every pattern."""


class ModelFileError(DataError):
    """A model document failed version, schema or stochasticity checks."""


class CapacityError(HPOMDPError):
    """A computation was refused because it would exceed a size guard."""

    exit_code = 4
