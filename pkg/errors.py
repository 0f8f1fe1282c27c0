"""
Errors raised by the election forensics pipeline.

Every error carries a stable machine-readable ``code`` and the process exit
status the CLI uses for it.
"""

from typing import Any, Dict, Optional


class ElectionForensicsError(Exception):
    code = "error"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, "details": self.details}


class InvalidConfig(ElectionForensicsError):
    code = "invalid-config"
    exit_code = 2


class FileUnreadable(ElectionForensicsError):
    code = "file-unreadable"
    exit_code = 3


class SchemaMismatch(ElectionForensicsError):
    code = "schema-mismatch"
    exit_code = 4


class RecordMalformed(ElectionForensicsError):
    """One or more records could not be parsed; ``lines`` holds 1-based file line numbers."""

    code = "record-malformed"
    exit_code = 5

    def __init__(self, message: str, lines, details: Optional[Dict[str, Any]] = None):
        self.lines = list(lines)
        merged = {"lines": self.lines}
        merged.update(details or {})
        super().__init__(message, merged)


class ElectionRejected(ElectionForensicsError):
    code = "election-rejected"
    exit_code = 6


class DegenerateStratum(ElectionForensicsError):
    # reported through logging by compute_zscores, never propagated
    code = "degenerate-stratum"
    exit_code = 7


class SingularCovariance(ElectionForensicsError):
    code = "singular-covariance"
    exit_code = 8


class GridTooSmall(ElectionForensicsError):
    code = "grid-too-small"
    exit_code = 9


class EmptyInput(ElectionForensicsError):
    code = "empty-input"
    exit_code = 10


class TooFewObservations(ElectionForensicsError):
    code = "too-few-observations"
    exit_code = 11


class EmptyReferenceSet(ElectionForensicsError):
    code = "empty-reference-set"
    exit_code = 12


class ZeroReferenceSpread(ElectionForensicsError):
    code = "zero-reference-spread"
    exit_code = 13


class InvalidSpec(ElectionForensicsError):
    code = "invalid-spec"
    exit_code = 14


class TooFewElections(ElectionForensicsError):
    code = "too-few-elections"
    exit_code = 15
