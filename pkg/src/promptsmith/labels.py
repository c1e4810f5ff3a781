"""Answer normalization shared by data ingestion and scoring.

Both paths go through :func:`normalize_text`, so a gold label accepted at load
time is always reachable by a model answer at scoring time.
"""

from __future__ import annotations

import re
from typing import Sequence

UNPARSED = "<unparsed>"

# sentence-final punctuation only; hyphens, slashes and brackets belong to labels
_TERMINAL = set(".,;:!?\"'`" + "。，；：！？、．…」』”’")
_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Trim, drop terminal punctuation (ASCII and full-width), collapse spaces, casefold."""
    s = text.strip()
    while s and (s[-1] in _TERMINAL or s[-1].isspace()):
        s = s[:-1]
    return _WS.sub(" ", s).casefold()


def match_label(text: str, label_set: Sequence[str]) -> str | None:
    """Exact match after normalization; returns the canonical label or None."""
    key = normalize_text(text)
    for label in label_set:
        if normalize_text(label) == key:
            return label
    return None


def normalize_answer(raw: str, label_set: Sequence[str]) -> str:
    """Map free-text model output to a label, or ``UNPARSED``.

    Exact match wins. Otherwise the output is accepted only when exactly one
    label occurs inside it; two or more candidates are ambiguous and score as
    unparsed rather than being guessed.
    """
    exact = match_label(raw, label_set)
    if exact is not None:
        return exact
    text = normalize_text(raw)
    hits = [label for label in label_set if normalize_text(label) and normalize_text(label) in text]
    if len(hits) == 1:
        return hits[0]
    return UNPARSED
