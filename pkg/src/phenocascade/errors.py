"""Exception hierarchy shared across the package.

CLI exit codes map onto these: usage errors exit 1, `DataFormatError` and
`ConfigError` exit 2, `InternalError` exit 3.
"""


class PhenocascadeError(Exception):
    """Base class for all package errors."""


class DataFormatError(PhenocascadeError):
    """Malformed input data (XML, JSONL, lexicon, embedding, or dictionary files)."""

    def __init__(self, message: str, *, source: str | None = None, line: int | None = None):
        parts = []
        if source:
            parts.append(source)
        if line is not None:
            parts.append(f"line {line}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.source = source
        self.line = line


class ConfigError(PhenocascadeError):
    """Invalid run configuration: missing paths, unknown model kind, bad overrides."""


class InternalError(PhenocascadeError):
    """An internal invariant was violated; indicates a bug, not bad input."""
