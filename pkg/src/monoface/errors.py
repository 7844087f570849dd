"""Exception hierarchy shared across the package.

``InputError`` and its subclasses signal problems with user-supplied data
(files, dimensions, degenerate inputs) and map to CLI exit code 2 / HTTP 400.
``SolverError`` signals numerical failure and maps to exit code 1 / HTTP 500.
"""


class MonofaceError(Exception):
    """Base class for all package errors."""


class InputError(MonofaceError):
    """Malformed or inconsistent user input (file, flag, or request)."""


class DimensionError(InputError):
    """Array or weight-vector dimensions do not match the model."""


class TopologyError(InputError):
    """Mesh connectivity violates a structural requirement."""


class SingularConfigurationError(InputError):
    """Input geometry is degenerate (coplanar, coincident, zero-area)."""


class BasisError(InputError):
    """A deformation basis cannot be built from the given regions."""


class SolverError(MonofaceError):
    """A numerical solver failed to produce a usable answer."""
