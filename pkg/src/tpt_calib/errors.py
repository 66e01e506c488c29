"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: usage errors exit 2
(argparse), :class:`ValidationError` / :class:`FormatError` exit 3, and
:class:`DegenerateInputError` / :class:`NumericDomainError` exit 4.
"""


class TptCalibError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TptCalibError):
    """Incompatible shapes or option combinations (e.g. prompt length vs. jacobians)."""


class ValidationError(TptCalibError):
    """Input data violates a documented invariant (norms, labels, counts)."""


class FormatError(TptCalibError):
    """Malformed file contents; carries the byte offset or line of the defect."""

    def __init__(self, message, *, offset=None, line=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class DegenerateInputError(TptCalibError):
    """An operation produced a degenerate object, e.g. masking zeroed a feature."""


class NumericDomainError(TptCalibError):
    """Numeric domain violation, e.g. KL divergence with unsupported q."""
