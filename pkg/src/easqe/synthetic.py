"""Template-generated review corpus with known gold quadruples.

Every sentence comes from one of ten templates whose slots are filled from
small lexicons, so the generating template is an exact oracle for the gold
annotations.  Within a sentence all opinions share the same targets: the
built-in encoder conditions on the trigger only through a pooled vector that
shifts every position equally, so trigger-specific target selection inside
one sentence is outside what it can represent.
"""

from __future__ import annotations

import random
from typing import Optional

from .core import Polarity, Quadruple, Sentence, TaskKind
from .data import Dataset, make_record

ENTITIES = ["sushi", "pizza", "pasta", "burger", "salad", "restaurant", "wait staff",
            "dessert menu"]
ASPECTS = ["price", "service", "taste", "portion size", "decor", "quality", "battery life",
           "delivery time"]
OPINIONS = {
    Polarity.POSITIVE: ["great", "reasonable", "impeccable", "well made", "excellent"],
    Polarity.NEGATIVE: ["cramped", "slow", "could have been better", "terrible", "overpriced"],
    Polarity.NEUTRAL: ["average", "okay", "so so"],
}
DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]

# Slot syntax: {E} {E2} entity, {A} {A2} aspect, {O} {O2} opinion, {D} day.
# Each quad is (entity slot or None, aspect slot or None, opinion slot).
TEMPLATES: list[tuple[str, list[tuple[Optional[str], Optional[str], str]]]] = [
    ("the {E} 's {A} was {O} .", [("E", "A", "O")]),
    ("i found the {A} of the {E} {O} .", [("E", "A", "O")]),
    ("i think the {E} is {O} .", [("E", None, "O")]),
    ("the {A} was {O} overall .", [(None, "A", "O")]),
    ("the {E} was {O} and {O2} .", [("E", None, "O"), ("E", None, "O2")]),
    ("what a {O} and {O2} {E} !", [("E", None, "O"), ("E", None, "O2")]),
    ("both the {A} and the {A2} were {O} .", [(None, "A", "O"), (None, "A2", "O")]),
    ("the {E} and the {E2} were {O} .", [("E", None, "O"), ("E2", None, "O")]),
    ("we went there on a {D} with friends .", []),
    ("{O} {A} at this place .", [(None, "A", "O")]),
]

_ALL_OPINIONS = [(w, p) for p, ws in OPINIONS.items() for w in ws]


def _fill(template: str, rng: random.Random):
    slots: dict[str, tuple[str, Optional[Polarity]]] = {}
    ents = rng.sample(ENTITIES, 2)
    asps = rng.sample(ASPECTS, 2)
    ops = rng.sample(_ALL_OPINIONS, 2)
    slots["E"], slots["E2"] = (ents[0], None), (ents[1], None)
    slots["A"], slots["A2"] = (asps[0], None), (asps[1], None)
    slots["O"], slots["O2"] = ops[0], ops[1]
    slots["D"] = (rng.choice(DAYS), None)

    tokens: list[str] = []
    where: dict[str, tuple[int, int]] = {}
    for piece in template.split():
        if piece.startswith("{") and piece.endswith("}"):
            name = piece[1:-1]
            words = slots[name][0].split()
            where[name] = (len(tokens), len(tokens) + len(words))
            tokens.extend(words)
        else:
            tokens.append(piece)
    return tokens, where, slots


def generate_sentence(sid: str, rng: random.Random, template_index: Optional[int] = None):
    if template_index is None:
        template_index = rng.randrange(len(TEMPLATES))
    template, quads = TEMPLATES[template_index]
    tokens, where, slots = _fill(template, rng)
    s = Sentence(sid, tokens)
    span = lambda name: None if name is None else s.span(*where[name])  # noqa: E731
    gold = [Quadruple(span(e), span(a), span(o), slots[o][1]) for e, a, o in quads]
    return make_record(s, gold)


def generate_dataset(n: int, seed: int = 0, prefix: str = "syn") -> Dataset:
    rng = random.Random(seed)
    records = [generate_sentence(f"{prefix}-{i}", rng) for i in range(n)]
    return Dataset(TaskKind.EASQE, records, name=prefix)


def synthetic_corpus(seed: int = 0, n_train: int = 200, n_dev: int = 50, n_test: int = 50):
    """Return ``(train, dev, test)`` EASQE datasets drawn from disjoint seeds."""
    return (generate_dataset(n_train, seed * 3, "train"),
            generate_dataset(n_dev, seed * 3 + 1, "dev"),
            generate_dataset(n_test, seed * 3 + 2, "test"))
