"""JSON reading with located error messages."""

from __future__ import annotations

import json
from pathlib import Path

from invmono.errors import InputError


class MalformedJSON(InputError):
    """A JSON document failed to parse; ``line`` and ``column`` locate the fault."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


def read_json(path):
    """Parse the JSON document at ``path``.

    Empty files and syntax errors raise :class:`MalformedJSON` carrying the
    1-based line and column of the fault.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise MalformedJSON(f"{path}: empty document at line 1 column 1", 1, 1)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJSON(f"{path}: {exc.msg} at line {exc.lineno} column {exc.colno}",
                            exc.lineno, exc.colno) from exc


def write_json(path, obj):
    """Write ``obj`` as sorted, indented JSON with a trailing newline."""
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise InputError(f"{where}: missing field {key!r}")
    return obj[key]
