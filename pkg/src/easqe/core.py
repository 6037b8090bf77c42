"""Domain types: sentences, spans, opinion records, tag schemes and BIO coding."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .errors import CategoryError, InvalidBIO, OverlapError, SpanOutOfBounds

MAX_RAW_TOKENS = 62


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError(f"sentence {self.id!r} has no tokens")
        if any(not t for t in self.tokens):
            raise ValueError(f"sentence {self.id!r} contains an empty token")

    def __len__(self) -> int:
        return len(self.tokens)

    def span(self, start: int, end: int) -> "Span":
        return Span(start, end, " ".join(self.tokens[start:end]))


@dataclass(frozen=True, order=True)
class Span:
    """Half-open token range ``[start, end)``.

    ``text`` is carried for integrity checks and display; it does not take
    part in equality, hashing or ordering.
    """

    start: int
    end: int
    text: str = field(default="", compare=False)

    def within(self, length: int) -> bool:
        return 0 <= self.start < self.end <= length

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def __len__(self) -> int:
        return self.end - self.start


class Polarity(str, enum.Enum):
    POSITIVE = "POS"
    NEUTRAL = "NEU"
    NEGATIVE = "NEG"


class TaskKind(str, enum.Enum):
    EASQE = "easqe"
    ASTE = "aste"
    OPE = "ope"


@dataclass(frozen=True)
class Quadruple:
    entity: Optional[Span]
    aspect: Optional[Span]
    opinion: Span
    polarity: Polarity

    def spans(self) -> list[Span]:
        return [s for s in (self.entity, self.aspect, self.opinion) if s is not None]


@dataclass(frozen=True)
class Triple:
    target: Span
    opinion: Span
    polarity: Polarity

    def spans(self) -> list[Span]:
        return [self.target, self.opinion]


@dataclass(frozen=True)
class Pair:
    target: Span
    opinion: Span

    def spans(self) -> list[Span]:
        return [self.target, self.opinion]


Annotation = Union[Quadruple, Triple, Pair]


def _sort_key(span: Optional[Span]) -> tuple[int, int]:
    return (-1, -1) if span is None else (span.start, span.end)


def annotation_sort_key(a: Annotation) -> tuple:
    """Deterministic ordering used whenever annotation sets are written out."""
    if isinstance(a, Quadruple):
        return (_sort_key(a.opinion), _sort_key(a.entity), _sort_key(a.aspect), a.polarity.value)
    if isinstance(a, Triple):
        return (_sort_key(a.opinion), _sort_key(a.target), a.polarity.value)
    return (_sort_key(a.opinion), _sort_key(a.target))


class TagScheme(enum.Enum):
    STAGE1_EASQE = ("O", "B-POS", "I-POS", "B-NEU", "I-NEU", "B-NEG", "I-NEG")
    STAGE1_SPAN = ("O", "B", "I")
    STAGE2_EASQE = ("O", "B-ENT", "I-ENT", "B-ASP", "I-ASP")
    STAGE2_ASPECT = ("O", "B-ASP", "I-ASP")

    @property
    def labels(self) -> tuple[str, ...]:
        return self.value

    @property
    def size(self) -> int:
        return len(self.value)

    @property
    def stage(self) -> int:
        return 1 if self.name.startswith("STAGE1") else 2

    @property
    def categories(self) -> tuple[Optional[str], ...]:
        seen: list[Optional[str]] = []
        for i in range(1, self.size):
            c = label_category(self, i)
            if c not in seen:
                seen.append(c)
        return tuple(seen)

    def index(self, label: str) -> int:
        return self.value.index(label)

    def begin(self, category: Optional[str]) -> int:
        return self.index("B" if category is None else f"B-{category}")

    def inside(self, category: Optional[str]) -> int:
        return self.index("I" if category is None else f"I-{category}")


def label_prefix(scheme: TagScheme, index: int) -> str:
    return scheme.labels[index][0]


def label_category(scheme: TagScheme, index: int) -> Optional[str]:
    """Category of a B/I label, ``None`` for plain B/I and for O."""
    label = scheme.labels[index]
    return label[2:] if len(label) > 2 else None


@dataclass(frozen=True)
class TagSequence:
    scheme: TagScheme
    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def names(self) -> list[str]:
        return [self.scheme.labels[i] for i in self.labels]

    @classmethod
    def from_names(cls, scheme: TagScheme, names: Iterable[str]) -> "TagSequence":
        return cls(scheme, tuple(scheme.index(n) for n in names))


def bio_allowed(scheme: TagScheme, prev: Optional[int], cur: int) -> bool:
    """Whether label ``cur`` may follow ``prev`` (``None`` = sequence start)."""
    if label_prefix(scheme, cur) != "I":
        return True
    if prev is None or label_prefix(scheme, prev) == "O":
        return False
    return label_category(scheme, prev) == label_category(scheme, cur)


def is_valid_bio(tags: TagSequence) -> bool:
    prev = None
    for cur in tags.labels:
        if not bio_allowed(tags.scheme, prev, cur):
            return False
        prev = cur
    return True


def spans_from_tags(
    tags: TagSequence, tokens: Optional[Sequence[str]] = None
) -> list[tuple[Span, Optional[str]]]:
    """Collect maximal ``B-x (I-x)*`` runs, left to right."""
    scheme = tags.scheme
    out: list[tuple[Span, Optional[str]]] = []
    start = None
    category = None
    prev = None

    def close(end: int):
        text = " ".join(tokens[start:end]) if tokens is not None else ""
        out.append((Span(start, end, text), category))

    for i, cur in enumerate(tags.labels):
        if not bio_allowed(scheme, prev, cur):
            raise InvalidBIO(f"{scheme.labels[cur]} at position {i} follows "
                             f"{'start' if prev is None else scheme.labels[prev]}")
        prefix = label_prefix(scheme, cur)
        if prefix != "I" and start is not None:
            close(i)
            start = None
        if prefix == "B":
            start, category = i, label_category(scheme, cur)
        prev = cur
    if start is not None:
        close(len(tags.labels))
    return out


def tags_from_spans(
    spans: Iterable[tuple[Span, Optional[str]]], length: int, scheme: TagScheme
) -> TagSequence:
    labels = [0] * length
    taken: list[Span] = []
    for span, category in sorted(spans, key=lambda sc: (sc[0].start, sc[0].end)):
        if category not in scheme.categories:
            raise CategoryError(f"category {category!r} not in {scheme.name}")
        if not span.within(length):
            raise SpanOutOfBounds(f"span {span.start}..{span.end} outside length {length}")
        for other in taken:
            if span.overlaps(other):
                raise OverlapError(f"spans {other.start}..{other.end} and "
                                   f"{span.start}..{span.end} overlap")
        taken.append(span)
        labels[span.start] = scheme.begin(category)
        for i in range(span.start + 1, span.end):
            labels[i] = scheme.inside(category)
    return TagSequence(scheme, tuple(labels))


def _span_violations(span: Span, sentence: Sentence, role: str) -> list[str]:
    if not span.within(len(sentence)):
        return [f"SpanOutOfBounds({role})"]
    expected = " ".join(sentence.tokens[span.start:span.end])
    if span.text and span.text != expected:
        return [f"TextMismatch({role})"]
    return []


def validate_quadruple(q: Quadruple, s: Sentence) -> list[str]:
    """Return every invariant violated by ``q``; an empty list means ok."""
    violations = []
    if q.entity is None and q.aspect is None:
        violations.append("BothTargetsNull")
    for role, span in (("entity", q.entity), ("aspect", q.aspect), ("opinion", q.opinion)):
        if span is not None:
            violations.extend(_span_violations(span, s, role))
    return violations


def validate_annotation(a: Annotation, s: Sentence) -> list[str]:
    if isinstance(a, Quadruple):
        return validate_quadruple(a, s)
    return (_span_violations(a.target, s, "target")
            + _span_violations(a.opinion, s, "opinion"))
