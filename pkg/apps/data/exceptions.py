from __future__ import annotations


class MalformedRowError(ValueError):
    """A corpus CSV row that cannot be parsed."""

    def __init__(self, row: int, reason: str):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class EmptyRecordError(ValueError):
    """An ECG record with no non-zero samples."""
