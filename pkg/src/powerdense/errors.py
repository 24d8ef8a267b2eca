"""Exception hierarchy.

The CLI maps these onto process exit codes: ConfigError -> 2, identity
failures -> 1, everything else numerical -> 3.
"""


class PowerDenseError(Exception):
    """Base class for all package errors."""


class ConfigError(PowerDenseError):
    """Invalid configuration, missing field, or malformed input file."""


class DataFormatError(ConfigError):
    """A field file, manifest, or covering file does not parse."""


class DomainError(PowerDenseError):
    """A point or segment leaves the computational domain."""


class SolverError(PowerDenseError):
    """Linear solve failed to converge.

    Attributes
    ----------
    residual : float
        Relative residual at the final iterate.
    iterations : int
        Iterations performed.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularityError(PowerDenseError):
    """Determinant of the power-density matrix fell below its floor.

    Attributes
    ----------
    min_det : float
        Smallest determinant encountered.
    num_nodes : int
        Number of offending nodes.
    """

    def __init__(self, message, min_det=None, num_nodes=0):
        super().__init__(message)
        self.min_det = min_det
        self.num_nodes = num_nodes


class CoveringError(PowerDenseError):
    """No admissible subdomain covering at the requested determinant bound.

    Attributes
    ----------
    best_c0 : float
        Largest bound a covering of the candidate family could achieve.
    """

    def __init__(self, message, best_c0=None):
        super().__init__(message)
        self.best_c0 = best_c0


class NumericalError(PowerDenseError):
    """Runtime numerical failure (drift, projection, non-finite state)."""


class AnchorError(NumericalError):
    """Boundary anchor could not be placed on a face node."""


class IdentityFailure(PowerDenseError):
    """An identity check exceeded its tolerance."""
