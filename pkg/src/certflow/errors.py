"""Error types shared across the toolkit."""
from __future__ import annotations

from typing import Optional


class CfError(Exception):
    """Base for all toolkit errors."""


class ParseError(CfError):
    def __init__(self, message: str, span=None, expected: Optional[set[str]] = None):
        self.message = message
        self.span = span
        self.expected = set(expected) if expected else set()
        loc = f" at line {span.line}, col {span.col}" if span is not None else ""
        exp = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"parse error{loc}: {message}{exp}")


class TypeError_(CfError):
    """Static typing failure; carries the violated rule name."""

    def __init__(self, rule: str, message: str, span=None, types=()):
        self.rule = rule
        self.span = span
        self.types = tuple(types)
        loc = f" at line {span.line}, col {span.col}" if span is not None else ""
        super().__init__(f"type error [{rule}]{loc}: {message}")


class SchemaError(CfError):
    pass


class CycleError(CfError):
    pass


class ArityError(CfError):
    pass


class RuntimeFault(CfError):
    """Concrete-evaluation failure (division by zero, unset shape, ...)."""


class UnsetShapeRead(RuntimeFault):
    pass


class DivisionByZero(RuntimeFault):
    pass


class SolverUnsat(CfError):
    pass


class SolverTimeout(CfError):
    pass


class UnboundedObjective(CfError):
    pass


class SolverCrashed(CfError):
    def __init__(self, message: str, exit_code=None, stderr: str = ""):
        self.exit_code = exit_code
        self.stderr = stderr
        super().__init__(message)


class ModelParseError(CfError):
    pass


class SortError(CfError):
    pass


class UnsupportedTheory(CfError):
    """Raised for operations whose verification leaves the decidable fragment."""


class NotExpanded(CfError):
    """Internal sentinel: symbolic map over a non-expanded value."""


class MissingExpansion(CfError):
    pass


class NonExpandableMember(CfError):
    pass


class NonTerminatingExpansion(CfError):
    pass


class InvariantNotVerified(CfError):
    def __init__(self, stage: str, message: str = ""):
        self.stage = stage  # "base" | "induction" | "timeout"
        super().__init__(f"traverse invariant not verified ({stage}){': ' + message if message else ''}")


class UnsatSolverConstraint(CfError):
    pass


class ReplayMismatch(CfError):
    pass


class NoMutationSite(CfError):
    pass
