"""Exception types shared across the package.

Two failure families matter at the CLI boundary: problems with user-supplied
data or configuration (exit code 2) and everything else (exit code 1).
"""

from __future__ import annotations

__all__ = ["DataError", "FitError"]


class DataError(ValueError):
    """Invalid input data or configuration supplied by the caller."""


class FitError(RuntimeError):
    """A numerical fit failed (singular system, divergence, ...)."""
