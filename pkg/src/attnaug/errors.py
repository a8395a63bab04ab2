"""Exception types shared across the package."""

from __future__ import annotations


class AttnaugError(Exception):
    """Base class for all errors raised by this package."""


class IngestError(AttnaugError):
    """A document or corpus could not be ingested."""


class JsonlError(AttnaugError):
    """A JSONL file is malformed; carries the path and 1-based line number."""

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class ConfigError(AttnaugError):
    """Configuration validation failed; lists every violation found."""

    def __init__(self, violations: list[str]):
        super().__init__(
            "invalid configuration:\n" + "\n".join(f"  - {v}" for v in violations)
        )
        self.violations = violations


class ProtocolError(AttnaugError):
    """An external line-JSON backend violated the protocol."""

    def __init__(self, message: str, line: str | None = None):
        if line is not None:
            snippet = line if len(line) <= 200 else line[:200] + "..."
            message = f"{message} (offending line: {snippet!r})"
        super().__init__(message)
        self.offending_line = line


class TrainingError(AttnaugError):
    """Training produced a non-finite loss or an otherwise invalid state."""


class GenerationError(AttnaugError):
    """Question generation was asked to do something impossible."""


class EvalError(AttnaugError):
    """The evaluation harness received inconsistent inputs."""


class PipelineError(AttnaugError):
    """A pipeline stage could not run (missing inputs, lock conflicts, ...)."""
