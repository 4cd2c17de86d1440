"""
Template grammar for yes/no questions about a scene.

Maps question text to QuestionSemantics and back. The grammar is closed:
whatever matches no template is Unparseable.
"""

import re
from typing import Pattern

from gwlab.models.schemas import (
    CATEGORIES,
    COLORS,
    LOCATIONS,
    SIZE_CLASSES,
    QuestionKind,
    QuestionSemantics,
)
from gwlab.utils.strings import normalize_question


def _alternation(words) -> str:
    return "|".join(re.escape(w) for w in words)


_CATEGORY_REGEX: Pattern[str] = re.compile(rf"^is it an? (?P<value>{_alternation(CATEGORIES)})$")
_COLOR_REGEX: Pattern[str] = re.compile(rf"^is it (?P<value>{_alternation(COLORS)})$")
_SIZE_REGEX: Pattern[str] = re.compile(rf"^is it (?P<value>{_alternation(SIZE_CLASSES)})$")
_LOCATION_REGEX: Pattern[str] = re.compile(rf"^is it on the (?P<value>{_alternation(LOCATIONS)})$")
_COMPOUND_REGEX: Pattern[str] = re.compile(
    rf"^is it the (?P<qualifier>{_alternation(CATEGORIES)}) on the (?P<value>left|right)$"
)

UNPARSEABLE = QuestionSemantics(kind=QuestionKind.UNPARSEABLE)


def parse_question(text: str) -> QuestionSemantics:
    """
    Parse a question against the template grammar.

    Lowercases, strips the terminal '?', then tries each template.

    Args:
        text: Question text.

    Returns:
        Parsed semantics, or the Unparseable value.
    """
    s = normalize_question(text)

    match = _CATEGORY_REGEX.match(s)
    if match:
        return QuestionSemantics(kind=QuestionKind.CATEGORY, value=match.group("value"))
    match = _COLOR_REGEX.match(s)
    if match:
        return QuestionSemantics(kind=QuestionKind.COLOR, value=match.group("value"))
    match = _SIZE_REGEX.match(s)
    if match:
        return QuestionSemantics(kind=QuestionKind.SIZE, value=match.group("value"))
    match = _LOCATION_REGEX.match(s)
    if match:
        return QuestionSemantics(kind=QuestionKind.LOCATION, value=match.group("value"))
    match = _COMPOUND_REGEX.match(s)
    if match:
        return QuestionSemantics(
            kind=QuestionKind.LOCATION,
            value=match.group("value"),
            qualifier=match.group("qualifier"),
        )
    return UNPARSEABLE


def render_question(semantics: QuestionSemantics) -> str:
    """
    Render semantics back to canonical question text.

    Raises:
        ValueError: For Unparseable semantics, which have no surface form.
    """
    kind = semantics.kind
    if kind is QuestionKind.CATEGORY:
        article = "an" if semantics.value[0] in "aeiou" else "a"
        return f"is it {article} {semantics.value}?"
    if kind in (QuestionKind.COLOR, QuestionKind.SIZE):
        return f"is it {semantics.value}?"
    if kind is QuestionKind.LOCATION and semantics.qualifier:
        return f"is it the {semantics.qualifier} on the {semantics.value}?"
    if kind is QuestionKind.LOCATION:
        return f"is it on the {semantics.value}?"
    raise ValueError("unparseable questions have no canonical text")
