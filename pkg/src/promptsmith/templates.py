"""Shipped prompt templates and placeholder substitution."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

ERROR_ANALYSIS = "error_analysis"
ERROR_SUMMARY = "error_summary"
FORMAT_REMINDER = "format_reminder"
SIMILARITY_JUDGE = "similarity_judge"

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    text = resources.files("promptsmith.resources.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return text.rstrip("\n")


def placeholders(template: str) -> list[str]:
    """Names of ``{snake_case}`` placeholders, in order of first appearance."""
    seen: dict[str, None] = {}
    for m in _PLACEHOLDER.finditer(template):
        seen.setdefault(m.group(1), None)
    return list(seen)


def fill_template(template: str, **values: str) -> str:
    """Substitute the given placeholders in a single pass.

    Other braces (the JSON answer format in the analysis template, say) are
    left alone, and substituted text is never re-scanned.
    """
    def repl(m: re.Match) -> str:
        name = m.group(1)
        return str(values[name]) if name in values else m.group(0)

    return _PLACEHOLDER.sub(repl, template)
