"""Exception hierarchy shared across the package.

Each error class carries the process exit code the command line interface
maps it to, so library callers and the CLI agree on failure semantics.
"""

from __future__ import annotations


class WordAlignError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputValidationError(WordAlignError):
    """Malformed or inconsistent input: bad boxes, schemas, parameters."""

    exit_code = 2


class UnembeddableTokenError(InputValidationError):
    """A token is empty after alphabet normalization."""

    def __init__(self, token: str):
        self.token = token
        super().__init__(f"token {token!r} has no embeddable characters")


class EmptyStateSpaceError(InputValidationError):
    """Every proposal was filtered out before alignment could start."""


class NumericError(WordAlignError):
    """A numeric invariant broke (non-finite values). Should be unreachable."""

    exit_code = 3
