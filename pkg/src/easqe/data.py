"""Dataset files, granularity conversion, corpus statistics and diffing.

One JSON object per line::

    {"id": "s1", "tokens": ["the", "sushi", ...],
     "quads": [{"entity": {"start": 1, "end": 2, "text": "sushi"} | null,
                "aspect": ... | null,
                "opinion": {...}, "polarity": "POS"}]}

ASTE and OPE files use ``"triples"`` (target/opinion/polarity) and
``"pairs"`` (target/opinion) instead of ``"quads"``.
"""

from __future__ import annotations

import ast
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .core import (Annotation, Pair, Polarity, Quadruple, Sentence, Span, TaskKind,
                   Triple, annotation_sort_key, validate_annotation)
from .errors import EmptyDataset, IdMismatch, ParseError, TaskError, ValidationError

log = logging.getLogger(__name__)

RECORD_KEY = {TaskKind.EASQE: "quads", TaskKind.ASTE: "triples", TaskKind.OPE: "pairs"}


@dataclass(frozen=True)
class Record:
    sentence: Sentence
    annotations: frozenset

    def sorted_annotations(self) -> list[Annotation]:
        return sorted(self.annotations, key=annotation_sort_key)


@dataclass(frozen=True)
class Dataset:
    task: TaskKind
    records: tuple[Record, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.sentence.id in seen:
                raise ValidationError(0, [f"DuplicateId({r.sentence.id})"])
            seen.add(r.sentence.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def sentences(self) -> list[Sentence]:
        return [r.sentence for r in self.records]

    def annotation_count(self) -> int:
        return sum(len(r.annotations) for r in self.records)

    def by_id(self) -> dict[str, Record]:
        return {r.sentence.id: r for r in self.records}


# -- (de)serialization --------------------------------------------------------


def _span_to_json(span: Optional[Span]):
    if span is None:
        return None
    return {"start": span.start, "end": span.end, "text": span.text}


def annotation_to_json(a: Annotation) -> dict:
    if isinstance(a, Quadruple):
        return {"entity": _span_to_json(a.entity), "aspect": _span_to_json(a.aspect),
                "opinion": _span_to_json(a.opinion), "polarity": a.polarity.value}
    if isinstance(a, Triple):
        return {"target": _span_to_json(a.target), "opinion": _span_to_json(a.opinion),
                "polarity": a.polarity.value}
    return {"target": _span_to_json(a.target), "opinion": _span_to_json(a.opinion)}


def record_to_json(record: Record, task: TaskKind) -> dict:
    return {"id": record.sentence.id, "tokens": list(record.sentence.tokens),
            RECORD_KEY[task]: [annotation_to_json(a) for a in record.sorted_annotations()]}


def _span(obj, nullable: bool = False) -> Optional[Span]:
    if obj is None:
        if nullable:
            return None
        raise ValueError("span must not be null")
    start, end = obj["start"], obj["end"]
    if not isinstance(start, int) or not isinstance(end, int):
        raise ValueError("span offsets must be integers")
    text = obj.get("text", "")
    if not isinstance(text, str):
        raise ValueError("span text must be a string")
    return Span(start, end, text)


def annotation_from_json(obj: dict, task: TaskKind) -> Annotation:
    if task is TaskKind.EASQE:
        return Quadruple(_span(obj["entity"], True), _span(obj["aspect"], True),
                         _span(obj["opinion"]), Polarity(obj["polarity"]))
    if task is TaskKind.ASTE:
        return Triple(_span(obj["target"]), _span(obj["opinion"]), Polarity(obj["polarity"]))
    return Pair(_span(obj["target"]), _span(obj["opinion"]))


def _with_text(a: Annotation, s: Sentence) -> Annotation:
    """Replace span texts by the canonical text taken from ``s``."""
    fix = lambda sp: None if sp is None else s.span(sp.start, sp.end)  # noqa: E731
    if isinstance(a, Quadruple):
        return Quadruple(fix(a.entity), fix(a.aspect), fix(a.opinion), a.polarity)
    if isinstance(a, Triple):
        return Triple(fix(a.target), fix(a.opinion), a.polarity)
    return Pair(fix(a.target), fix(a.opinion))


def make_record(sentence: Sentence, annotations: Iterable[Annotation],
                line: int = 0) -> Record:
    """Validate ``annotations`` against ``sentence`` and build a record."""
    kept: list[Annotation] = []
    violations: list[str] = []
    for a in annotations:
        v = validate_annotation(a, sentence)
        if v:
            violations.extend(v)
            continue
        a = _with_text(a, sentence)
        if a in kept:
            log.warning("sentence %s: duplicate annotation dropped", sentence.id)
            continue
        kept.append(a)
    if violations:
        raise ValidationError(line, violations)
    return Record(sentence, frozenset(kept))


def parse_line(text: str, task: TaskKind, line: int = 0) -> Record:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(line, str(e)) from None
    try:
        sid = obj["id"]
        tokens = obj["tokens"]
        raw = obj[RECORD_KEY[task]]
        if not isinstance(sid, str) or not isinstance(tokens, list) or not isinstance(raw, list):
            raise ValueError("id/tokens/annotations have wrong types")
        if not all(isinstance(t, str) for t in tokens):
            raise ValueError("tokens must be strings")
        annotations = [annotation_from_json(a, task) for a in raw]
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ParseError(line, f"bad record structure ({e!r})") from None
    try:
        sentence = Sentence(sid, tokens)
    except ValueError as e:
        raise ValidationError(line, [str(e)]) from None
    return make_record(sentence, annotations, line)


def read_dataset(path, task, name: Optional[str] = None, legacy: bool = False) -> Dataset:
    task = TaskKind(task)
    if legacy:
        if task is not TaskKind.ASTE:
            raise TaskError("legacy triplet files hold ASTE annotations")
        return read_legacy_aste(path, name)
    records = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            rec = parse_line(text, task, lineno)
            if rec.sentence.id in seen:
                raise ValidationError(lineno, [f"DuplicateId({rec.sentence.id})"])
            seen.add(rec.sentence.id)
            records.append(rec)
    return Dataset(task, records, name=name if name is not None else Path(path).stem)


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in dataset.records:
            fh.write(json.dumps(record_to_json(rec, dataset.task), ensure_ascii=False))
            fh.write("\n")


_LEGACY_POLARITY = {"POS": Polarity.POSITIVE, "NEU": Polarity.NEUTRAL, "NEG": Polarity.NEGATIVE}


def _index_span(indices, s: Sentence) -> Span:
    idx = sorted(int(i) for i in indices)
    if not idx or idx != list(range(idx[0], idx[-1] + 1)):
        raise ValueError(f"non-contiguous token indices {indices}")
    return Span(idx[0], idx[-1] + 1)


def read_legacy_aste(path, name: Optional[str] = None) -> Dataset:
    """Read ``sentence####[([a-idx], [o-idx], 'POL'), ...]`` triplet lines.

    Sentence ids are the zero-based line indices, as strings.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                sent_text, sep, triples_text = text.rstrip("\n").partition("####")
                if not sep:
                    raise ValueError("missing '####' separator")
                sentence = Sentence(str(lineno - 1), sent_text.split())
                triples = [Triple(_index_span(a, sentence), _index_span(o, sentence),
                                  _LEGACY_POLARITY[p])
                           for a, o, p in ast.literal_eval(triples_text.strip())]
            except (ValueError, SyntaxError, KeyError, TypeError) as e:
                raise ParseError(lineno, str(e)) from None
            records.append(make_record(sentence, triples, lineno))
    return Dataset(TaskKind.ASTE, records, name=name if name is not None else Path(path).stem)


# -- conversion --------------------------------------------------------------


def quad_to_triple(q: Quadruple) -> Triple:
    """Entity wins when both targets are present, else the non-null one."""
    target = q.entity if q.entity is not None else q.aspect
    return Triple(target, q.opinion, q.polarity)


def triple_to_pair(t: Triple) -> Pair:
    return Pair(t.target, t.opinion)


def convert_easqe_to_aste(d: Dataset) -> Dataset:
    if d.task is not TaskKind.EASQE:
        raise TaskError(f"expected an EASQE dataset, got {d.task.value}")
    records = [Record(r.sentence, frozenset(quad_to_triple(q) for q in r.annotations))
               for r in d.records]
    return Dataset(TaskKind.ASTE, records, name=d.name)


def convert_aste_to_ope(d: Dataset) -> Dataset:
    if d.task is not TaskKind.ASTE:
        raise TaskError(f"expected an ASTE dataset, got {d.task.value}")
    records = [Record(r.sentence, frozenset(triple_to_pair(t) for t in r.annotations))
               for r in d.records]
    return Dataset(TaskKind.OPE, records, name=d.name)


def convert(d: Dataset, target) -> Dataset:
    target = TaskKind(target)
    if d.task is target:
        return d
    if d.task is TaskKind.EASQE:
        d = convert_easqe_to_aste(d)
        return d if target is TaskKind.ASTE else convert_aste_to_ope(d)
    if d.task is TaskKind.ASTE and target is TaskKind.OPE:
        return convert_aste_to_ope(d)
    raise TaskError(f"cannot convert {d.task.value} to {target.value}")


# -- statistics --------------------------------------------------------------


@dataclass(frozen=True)
class StatsReport:
    sentence_count: int
    quad_count: int
    co_occurrence_pct: float

    def as_tuple(self) -> tuple:
        return (self.sentence_count, self.quad_count, self.co_occurrence_pct)


def dataset_stats(d: Dataset) -> StatsReport:
    if d.task is not TaskKind.EASQE:
        raise TaskError("statistics are defined on EASQE datasets")
    if not d.records:
        raise EmptyDataset("dataset has no sentences")
    co = sum(1 for r in d.records
             if any(q.entity is not None and q.aspect is not None for q in r.annotations))
    return StatsReport(len(d.records), d.annotation_count(), round(100.0 * co / len(d.records), 2))


def dataset_diff(new: Dataset, old: Dataset) -> float:
    """Percentage of ``new``'s annotations that do not occur in ``old``.

    Annotations are compared by sentence id plus exact spans and polarity.
    When ``old`` has a coarser granularity, ``new`` is projected down first.
    The denominator is every annotation in ``new``.
    """
    if old.task is not new.task:
        new = convert(new, old.task)
    old_by_id = old.by_id()
    if not any(r.sentence.id in old_by_id for r in new.records):
        raise IdMismatch("the datasets share no sentence ids")
    total = missing = 0
    for r in new.records:
        ref = old_by_id.get(r.sentence.id)
        ref_set = ref.annotations if ref is not None else frozenset()
        for a in r.annotations:
            total += 1
            missing += a not in ref_set
    if total == 0:
        return 0.0
    return round(100.0 * missing / total, 2)
