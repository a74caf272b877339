"""Exception hierarchy shared by all chadapt modules."""


class ChadaptError(Exception):
    """Base class for all errors raised by this package."""


class MeshError(ChadaptError):
    """Invalid mesh input or a mesh invariant violation."""


class AssemblyError(ChadaptError):
    """Assembly failed (e.g. degenerate triangle)."""


class LinearSolverError(ChadaptError):
    """A linear solve did not reach the required residual."""


class StaleFunctionError(ChadaptError):
    """A finite element function was used with a mesh generation it does not belong to."""


class StepFailureError(ChadaptError):
    """Newton iteration for a time step did not converge; the caller may retry with a smaller step."""


class RecoveryError(ChadaptError):
    """Gradient recovery could not form a well-posed local fit."""


class AdaptationError(ChadaptError):
    """The adaptive driver exhausted its retry or refinement budget."""


class ConfigError(ChadaptError):
    """Invalid run configuration."""
