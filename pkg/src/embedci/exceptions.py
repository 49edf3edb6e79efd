"""Exception hierarchy shared across the package.

Errors are grouped so the CLI can map them onto distinct exit codes:
input/format problems, physics validation failures, solver non-convergence,
and capacity limits.
"""


class EmbedciError(Exception):
    """Base class for all package errors."""


class FormatError(EmbedciError, ValueError):
    """Malformed on-disk input (FCIDUMP, sample file, bundle, manifest)."""


class ValidationError(EmbedciError, ValueError):
    """Data that parsed but violates a physical or structural invariant."""


class CapacityError(EmbedciError, RuntimeError):
    """Problem size exceeds a configured memory or representation budget."""


class ConvergenceError(EmbedciError, RuntimeError):
    """Iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegeneracyError(EmbedciError, RuntimeError):
    """Near-zero orbital-energy denominator in a perturbative amplitude."""
