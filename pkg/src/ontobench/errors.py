"""Exception hierarchy shared by all ontobench modules.

Exit-code mapping used by the CLI: configuration and validation problems
(ParseError, ValidationError, ConfigError) exit 2, oracle and transport
failures (OracleError subtree) exit 3, empty results (EmptyResultError)
exit 4.
"""


class OntobenchError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(OntobenchError):
    """A file did not conform to its record format."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)


class ValidationError(OntobenchError):
    """A loaded structure violates an invariant (cycle, dangling ref, ...)."""


class ConfigError(OntobenchError):
    """The pipeline configuration is missing or inconsistent."""


class OracleError(OntobenchError):
    """Base class for failures of model-backed endpoints."""


class FixtureMissError(OracleError):
    """A scripted oracle had no fixture entry for the prompt."""

    def __init__(self, prompt_hash: str):
        self.prompt_hash = prompt_hash
        super().__init__(f"no fixture reply for prompt hash {prompt_hash}")


class TransportError(OracleError):
    """A remote endpoint failed after exhausting its retry budget."""

    def __init__(self, message: str, attempts: int = 0):
        self.attempts = attempts
        super().__init__(f"{message} (after {attempts} attempt(s))")


class ReplyParseError(OracleError):
    """An oracle reply could not be parsed into the expected shape."""

    def __init__(self, message: str, reply: str = ""):
        self.reply = reply
        super().__init__(message)


class ResolutionError(OracleError):
    """Every ranker in the ensemble failed; the requirement cannot be resolved."""


class CutoffError(OracleError):
    """The judge ensemble failed persistently during the relevance cutoff."""

    def __init__(self, message: str, probe_trace: list | None = None):
        self.probe_trace = probe_trace or []
        super().__init__(message)


class BenchmarkBuildError(OntobenchError):
    """Every proxy-subset instance was skipped during MCQ generation."""

    def __init__(self, message: str, skips: list | None = None):
        self.skips = skips or []
        super().__init__(message)


class EmptyResultError(OntobenchError):
    """A pipeline stage produced an empty result where data was required."""
