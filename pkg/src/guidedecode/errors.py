"""Exception hierarchy shared by every backend and the harness."""

from __future__ import annotations


class GuidedDecodeError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(GuidedDecodeError):
    """A vocabulary, dataset or config file could not be parsed."""


class ValidationError(GuidedDecodeError):
    """Input parsed but violates a structural invariant."""


class LengthMismatch(GuidedDecodeError):
    """Two token masks of different widths were combined."""


class RegexSyntaxError(GuidedDecodeError):
    def __init__(self, message: str, pattern: str, pos: int) -> None:
        super().__init__(f"{message} at position {pos} in {pattern!r}")
        self.pattern = pattern
        self.pos = pos


class UnsupportedFeature(GuidedDecodeError):
    """The regex uses a construct outside the supported subset."""


class IllegalToken(GuidedDecodeError):
    """A token was fed to a constraint state whose mask excludes it."""

    def __init__(self, token_id: int, detail: str = "") -> None:
        msg = f"token {token_id} is not allowed in the current state"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.token_id = token_id


class GrammarSyntaxError(GuidedDecodeError):
    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UndefinedRule(GuidedDecodeError):
    def __init__(self, name: str, referenced_from: str) -> None:
        super().__init__(f"rule {name!r} referenced from {referenced_from!r} is not defined")
        self.name = name


class LeftRecursionUnsupported(GuidedDecodeError):
    def __init__(self, cycle: list[str]) -> None:
        super().__init__(
            "left recursion is not supported (rewrite as right recursion): "
            + " -> ".join(cycle)
        )
        self.cycle = cycle


class GrammarTooAmbiguous(GuidedDecodeError):
    def __init__(self, live: int, limit: int) -> None:
        super().__init__(f"{live} live parser configurations exceed the limit of {limit}")
        self.live = live
        self.limit = limit


class UnsupportedSchemaFeature(GuidedDecodeError):
    def __init__(self, feature: str, path: str = "$") -> None:
        super().__init__(f"unsupported JSON-schema feature {feature!r} at {path}")
        self.feature = feature
        self.path = path


class DeadEnd(GuidedDecodeError):
    """No token (and not EOS) is admissible; the constraint cannot be completed."""

    def __init__(self, prefix_ids: list[int], prefix_bytes: bytes) -> None:
        super().__init__(
            f"dead end after {len(prefix_ids)} tokens; prefix={prefix_bytes!r}"
        )
        self.prefix_ids = prefix_ids
        self.prefix_bytes = prefix_bytes


class ClientError(GuidedDecodeError):
    """Base class for chat-completions client failures."""


class Timeout(ClientError):
    pass


class HttpError(ClientError):
    def __init__(self, status: int, body: str) -> None:
        super().__init__(f"HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class SchemaRejected(HttpError):
    """The server refused the guided-decoding payload (e.g. an unsupported schema)."""


class DatasetError(GuidedDecodeError):
    pass


class NotEnoughExemplars(GuidedDecodeError):
    def __init__(self, needed: int, available: int) -> None:
        super().__init__(f"{needed} exemplar turns requested, only {available} available")
        self.needed = needed
        self.available = available
