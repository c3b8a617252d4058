"""Exception types shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
configuration and validation problems exit with 2, numerical failures with 3,
and file/integrity problems with 4.
"""


class GrainFieldError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GrainFieldError):
    """Invalid or inconsistent configuration input."""


class MeshFormatError(GrainFieldError):
    """Mesh file cannot be parsed."""


class MeshValidationError(GrainFieldError):
    """Mesh parsed but violates a structural requirement."""


class NonConformalMeshError(MeshValidationError):
    """Geometrically coincident faces with distinct node indices."""


class NumericError(GrainFieldError):
    """Numerical failure outside the sampler's recoverable path."""


class BoundViolationError(NumericError):
    """Hyperparameters outside the admissible region of the precision model.

    The sampler treats this as an automatic proposal rejection.
    """


class NotPositiveDefiniteError(NumericError):
    """Cholesky factorization hit a non-positive pivot.

    The sampler treats this as an automatic proposal rejection.
    """


class TraceIntegrityError(GrainFieldError):
    """Stored run artifacts do not match their manifest."""
