# Path: subtrack/errors.py
# Purpose: Exception hierarchy shared by the library and the CLI.

from __future__ import annotations

from typing import Optional


class SubtrackError(Exception):
    """Base class for every error raised by subtrack."""


class InvalidArgumentError(SubtrackError, ValueError):
    pass


class DimensionMismatchError(InvalidArgumentError):
    def __init__(self, what: str, expected: object, got: object):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected {expected}, got {got}")


class RankDeficiencyError(SubtrackError):
    def __init__(self, sigma_min: float, sigma_max: float, rank_tol: float):
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.rank_tol = float(rank_tol)
        super().__init__(
            f"basis is rank deficient: smallest singular value {self.sigma_min:.3e} "
            f"<= {self.rank_tol:.1e} * largest ({self.sigma_max:.3e})"
        )


class ParseError(SubtrackError):
    def __init__(self, path: str, line: Optional[int], msg: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {msg}")


class SchemaVersionError(SubtrackError):
    def __init__(self, path: str, found: str, expected: str):
        self.path = str(path)
        self.found = found
        self.expected = expected
        super().__init__(f"{self.path}: unsupported schema version {found} (reader supports {expected})")


class InvariantViolationError(SubtrackError):
    def __init__(self, frame_index: int, msg: str):
        self.frame_index = int(frame_index)
        super().__init__(f"frame {self.frame_index}: {msg}")


