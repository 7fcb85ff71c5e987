"""Static race detection for interrupt-driven IDA programs, with an
explicit-state interpreter used as a ground-truth oracle."""

from .frontend import ParseError, Program, StmtId, parse, statements, validate

__all__ = ["ParseError", "Program", "StmtId", "parse", "statements", "validate"]
