"""Exception hierarchy for the solver."""


class FPMError(Exception):
    """Base class for all solver errors."""


class GeometryError(FPMError):
    """Invalid domain geometry (point outside boundary, bad polygon, ...)."""


class DegenerateCellError(GeometryError):
    """A partition cell collapsed (duplicate points, empty clip result)."""


class DegenerateGeometryError(GeometryError):
    """A support domain stays rank-deficient after ring escalation."""


class DegenerateSupportError(FPMError):
    """The least-squares system of a shape function is numerically singular."""


class ConfigError(FPMError):
    """Invalid run configuration or input file."""


class ContractError(FPMError):
    """An API precondition was violated by the caller."""


class NumericError(FPMError):
    """Non-finite values encountered during integration."""


class AssemblyError(FPMError):
    """Inconsistent inputs while scattering local matrices."""


class SolverError(FPMError):
    """The iterative linear solver failed to converge."""
