"""Flat ``key = value`` text files with exact float round-trip."""

from __future__ import annotations

import math
from pathlib import Path


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    text = str(value)
    if "\n" in text:
        raise ValueError("values must be single-line")
    return text


def _parse(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        return text
    if math.isfinite(value) or text.lower().lstrip("+-") in ("inf", "nan"):
        return value
    return text


def dumps(items: dict, header: str | None = None) -> str:
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    for key, value in items.items():
        if "=" in key or key != key.strip():
            raise ValueError(f"bad key {key!r}")
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        out[key] = _parse(value)
    return out


def dump(items: dict, path, header: str | None = None) -> None:
    Path(path).write_text(dumps(items, header))


def load(path) -> dict:
    return loads(Path(path).read_text())
