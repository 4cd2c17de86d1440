"""
String utilities for question normalization and tokenization.
"""

import re
from typing import List


def normalize_question(text: str) -> str:
    """
    Normalize a question to its comparable surface form.

    Rules:
    - Lowercase
    - Trim leading/trailing spaces
    - Strip terminal question marks
    - Collapse multiple spaces

    Args:
        text: Raw question text.

    Returns:
        Normalized question, possibly empty.
    """
    s = (text or "").strip().lower()
    s = s.rstrip("?").strip()
    return re.sub(r"\s+", " ", s)


def tokenize(text: str) -> List[str]:
    """Whitespace tokens of the normalized question."""
    s = normalize_question(text)
    return s.split(" ") if s else []
