"""Canonical JSON used for every hash in the system.

Canonical form: keys sorted, no whitespace, strings escaped by :mod:`json`,
integers bare, non-integral numbers carried as :class:`~decimal.Decimal` and
printed verbatim.  Floats are refused so nothing hashed depends on binary
rounding.  The same writer with ``canonical=False`` preserves key order and
indents, which is the human-facing listing format.
"""
from __future__ import annotations

import json
from decimal import Decimal
from typing import Any


def _enc(obj: Any, canonical: bool, indent: int | None, level: int, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, Decimal):
        if not obj.is_finite():
            raise ValueError("non-finite Decimal")
        out.append(format(obj, "f"))
    elif isinstance(obj, float):
        raise TypeError("floats are not allowed in canonical JSON; use Decimal")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=True))
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _nl(indent, level + 1, out)
            _enc(item, canonical, indent, level + 1, out)
        _nl(indent, level, out)
        out.append("]")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        keys = sorted(obj) if canonical else list(obj)
        out.append("{")
        for i, k in enumerate(keys):
            if not isinstance(k, str):
                raise TypeError(f"non-string key {k!r}")
            if i:
                out.append(",")
            _nl(indent, level + 1, out)
            out.append(json.dumps(k, ensure_ascii=True))
            out.append(": " if indent is not None else ":")
            _enc(obj[k], canonical, indent, level + 1, out)
        _nl(indent, level, out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _nl(indent: int | None, level: int, out: list[str]) -> None:
    if indent is not None:
        out.append("\n" + " " * (indent * level))


def dumps(obj: Any, *, canonical: bool = True, indent: int | None = None) -> str:
    out: list[str] = []
    _enc(obj, canonical, indent, 0, out)
    return "".join(out)


def canonical_bytes(obj: Any) -> bytes:
    return dumps(obj).encode("ascii")


def loads(text: str | bytes) -> Any:
    """Parse JSON keeping non-integral numbers exact."""
    return json.loads(text, parse_float=Decimal)


def ftod(x: float, places: int = 9) -> Decimal:
    """Round a float half-even to ``places`` decimals for serialization."""
    d = Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-places))
    return d.copy_abs() if d.is_zero() else d
