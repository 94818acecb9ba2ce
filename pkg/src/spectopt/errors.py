"""Exception hierarchy shared across the package."""


class SpectoptError(Exception):
    """Base class for all package-specific failures."""


class ParameterError(SpectoptError, ValueError):
    """Material or numerical parameters outside their admissible range."""


class ConfigError(SpectoptError, ValueError):
    """Invalid run configuration (bad file, bad value, inconsistent blocks)."""


class DegenerateSystemError(SpectoptError, RuntimeError):
    """The identification normal matrix is singular or indefinite.

    Usually the signature of a disconnected topology: no stiffness path
    between the loaded boundaries leaves the system without information.
    """


class SolverError(SpectoptError, RuntimeError):
    """A linear solve failed or did not reach the required residual."""


class RunError(SpectoptError, RuntimeError):
    """An optimisation or benchmark run could not be completed."""
