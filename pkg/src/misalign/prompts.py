"""Subgroup-steering prompts and single-letter answer parsing."""

from __future__ import annotations

import re
import string
from typing import Callable

from .errors import ConfigError
from .survey import QuestionSpec, Subgroup

INSTRUCTION = (
    "Please read the following multiple-choice question carefully and select ONE of the "
    "listed option's letters ONLY. Do NOT write anything else except the listed option's letter."
)
LETTERS = string.ascii_uppercase


def _age(value: str) -> str:
    value = value.strip()
    if value.endswith("+"):
        return f"a person aged {value[:-1]} or older"
    return f"a person aged {value}"


# dimension -> phrase completing "as if you were ..."
STEERING: dict[str, Callable[[str], str]] = {
    "region": lambda v: f"from the region {v}",
    "age": _age,
    "sex": lambda v: f"a person of sex {v}",
    "gender": lambda v: f"a person of gender {v}",
    "race": lambda v: f"a person of race {v}",
    "education": lambda v: f"a person whose highest level of education is {v}",
    "income": lambda v: f"a person with an annual household income of {v}",
    "religion": lambda v: f"a person whose religion is {v}",
    "religious_attendance": lambda v: f"a person who attends religious services {v}",
    "political_ideology": lambda v: f"a person with the political ideology {v}",
    "political_party": lambda v: f"a person with the political party affiliation {v}",
    "marital_status": lambda v: f"a person whose marital status is {v}",
    "citizenship": lambda v: f"a person whose US citizenship status is {v}",
}


def register_dimension(dimension: str, phrase: Callable[[str], str]) -> None:
    STEERING[dimension] = phrase


def option_letters(k: int) -> str:
    if k > len(LETTERS):
        raise ConfigError(f"at most {len(LETTERS)} options can be lettered, got {k}")
    return LETTERS[:k]


def build_prompt(question: QuestionSpec, subgroup: Subgroup) -> str:
    """Steering sentence, fixed instruction, question text, lettered options."""
    phrase = STEERING.get(subgroup.dimension)
    if phrase is None:
        raise ConfigError(
            f"no steering template for dimension {subgroup.dimension!r}; "
            f"registered: {sorted(STEERING)}"
        )
    lines = [
        f"Answer the following question as if you were {phrase(subgroup.value)}",
        INSTRUCTION,
        question.prompt_text,
    ]
    lines += [f"{letter}: {label}" for letter, label in zip(option_letters(question.k), question.options)]
    return "\n".join(lines)


_SINGLE_LETTER = re.compile(r"^[\s\W_]*([A-Za-z])[\s\W_]*$")


def parse_choice(raw: str | None, question: QuestionSpec) -> int | None:
    """Option index for a bare letter reply such as ``"B"``, ``"b."`` or ``" (c) "``.

    Anything else, including prose that mentions a letter, gives ``None``.
    """
    if not raw:
        return None
    m = _SINGLE_LETTER.match(raw)
    if m is None:
        return None
    idx = LETTERS.index(m.group(1).upper())
    return idx if idx < question.k else None
