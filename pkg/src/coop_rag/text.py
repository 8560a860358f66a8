"""Shared tokenizer.

Queries and indexed chunks must agree on token boundaries, so both sides
import this one function. Deliberately simple: lowercase, split on anything
that is not alphanumeric (underscore counts as a separator), drop empties.
No stemming, no stopwords.
"""

import re

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and return its alphanumeric runs in order."""
    return _TOKEN_RE.findall(text.lower())
