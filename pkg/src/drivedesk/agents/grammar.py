"""Structured command grammar: ``verb [--key value]*``.

This is the deterministic intent layer: every task an agent receives is a
command in this grammar, parsed into a flat task dict and printable back
to an equivalent command string.  There is no natural-language parsing
anywhere — free text enters the system only after a human (or the
workbench) has turned it into one of these commands.

Value typing is by key: a fixed table maps known keys to int, float,
comma-separated lists, or category codes; unknown keys stay strings.
Long category names (``estateback``) normalize to their short codes
(``E``) so tasks always carry canonical categories.
"""
from __future__ import annotations

from ..errors import CommandError

VERBS = (
    "sketch",
    "render",
    "retrieve",
    "interpolate",
    "reconstruct",
    "mesh",
    "checkmesh",
    "refine",
    "predict-drag",
    "report",
)

CATEGORY_NAMES = {
    "estateback": "E",
    "notchback": "N",
    "fastback": "FS",
    "fastback-smooth": "FS",
    "fastback-detailed": "FD",
    "E": "E",
    "N": "N",
    "FS": "FS",
    "FD": "FD",
}

_INT_KEYS = frozenset({"k", "level", "resolution", "size", "per-category", "seed", "steps"})
_FLOAT_KEYS = frozenset({"alpha"})
_FLOAT_LIST_KEYS = frozenset({"weights", "box"})
_STR_LIST_KEYS = frozenset({"ids"})
_BOOL_KEYS = frozenset({"castellate"})


def _parse_int(key: str, raw: str, pos: int) -> int:
    try:
        return int(raw)
    except ValueError:
        raise CommandError(f"value for --{key} must be an integer, got {raw!r}", pos)


def _parse_float(key: str, raw: str, pos: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise CommandError(f"value for --{key} must be a number, got {raw!r}", pos)


def _parse_value(key: str, raw: str, pos: int):
    if key in _INT_KEYS:
        return _parse_int(key, raw, pos)
    if key in _FLOAT_KEYS:
        return _parse_float(key, raw, pos)
    if key in _FLOAT_LIST_KEYS:
        return [_parse_float(key, part, pos) for part in raw.split(",")]
    if key in _STR_LIST_KEYS:
        parts = raw.split(",")
        if any(not p for p in parts):
            raise CommandError(f"empty item in list for --{key}", pos)
        return parts
    if key in _BOOL_KEYS:
        if raw not in ("true", "false"):
            raise CommandError(f"value for --{key} must be true or false, got {raw!r}", pos)
        return raw == "true"
    if key == "category":
        if raw not in CATEGORY_NAMES:
            raise CommandError(f"unknown category {raw!r}", pos)
        return CATEGORY_NAMES[raw]
    return raw


def _format_value(key: str, value) -> str:
    if key in _FLOAT_LIST_KEYS or key in _STR_LIST_KEYS:
        if not isinstance(value, (list, tuple)) or not value:
            raise CommandError(f"--{key} needs a non-empty list, got {value!r}")
        return ",".join(_format_scalar(v) for v in value)
    if key in _BOOL_KEYS:
        return "true" if value else "false"
    return _format_scalar(value)


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        text = repr(value)
        return text
    text = str(value)
    if not text or any(ch.isspace() for ch in text):
        raise CommandError(f"value {value!r} cannot appear in a command")
    return text


def _tokenize(text: str) -> list[tuple[str, int]]:
    """Split on whitespace, tracking each token's character position."""
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        start = i
        while i < n and not text[i].isspace():
            i += 1
        tokens.append((text[start:i], start))
    return tokens


def parse_command(text: str) -> dict:
    """Parse command text into a flat task dict ``{"verb": ..., key: value}``."""
    if not isinstance(text, str):
        raise CommandError(f"command must be a string, got {type(text).__name__}")
    tokens = _tokenize(text)
    if not tokens:
        raise CommandError("empty command", 0)
    verb, verb_pos = tokens[0]
    if verb not in VERBS:
        raise CommandError(f"unknown verb {verb!r}", verb_pos)
    task: dict = {"verb": verb}
    i = 1
    while i < len(tokens):
        flag, flag_pos = tokens[i]
        if not flag.startswith("--") or len(flag) <= 2:
            raise CommandError(f"expected --key, got {flag!r}", flag_pos)
        key = flag[2:]
        if key == "verb":
            raise CommandError("'verb' is not a valid option name", flag_pos)
        if key in task:
            raise CommandError(f"duplicate option --{key}", flag_pos)
        if i + 1 >= len(tokens):
            raise CommandError(f"missing value for --{key}", flag_pos)
        raw, raw_pos = tokens[i + 1]
        if raw.startswith("--"):
            raise CommandError(f"missing value for --{key}", raw_pos)
        task[key] = _parse_value(key, raw, raw_pos)
        i += 2
    return task


def format_command(task: dict) -> str:
    """Print a task dict back as command text (inverse of parse_command).

    Options are emitted in sorted key order, which is the canonical form;
    parse_command(format_command(t)) == t for any representable task.
    """
    if not isinstance(task, dict) or "verb" not in task:
        raise CommandError("task must be a dict with a 'verb' entry")
    verb = task["verb"]
    if verb not in VERBS:
        raise CommandError(f"unknown verb {verb!r}")
    parts = [verb]
    for key in sorted(k for k in task if k != "verb"):
        parts.append(f"--{key}")
        parts.append(_format_value(key, task[key]))
    return " ".join(parts)
