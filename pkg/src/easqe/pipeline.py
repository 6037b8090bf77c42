"""Two-stage extraction: opinions first, then trigger-conditioned targets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .core import (Pair, Polarity, Quadruple, Sentence, Span, TagScheme, TaskKind, Triple,
                   spans_from_tags)
from .encoder import frame_stage1, frame_stage2
from .errors import SchemeMismatch
from .tagger import TaggerModel


@dataclass(frozen=True)
class OpinionHit:
    opinion: Span
    polarity: Optional[Polarity] = None


@dataclass(frozen=True)
class TargetSet:
    entities: tuple[Span, ...] = ()
    aspects: tuple[Span, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.entities or self.aspects)


# Which (stage-one, stage-two) scheme pairs each task accepts.
COMPATIBLE = {
    TaskKind.EASQE: {(TagScheme.STAGE1_EASQE, TagScheme.STAGE2_EASQE)},
    TaskKind.ASTE: {(TagScheme.STAGE1_EASQE, TagScheme.STAGE2_ASPECT),
                    (TagScheme.STAGE1_EASQE, TagScheme.STAGE2_EASQE)},
    TaskKind.OPE: {(TagScheme.STAGE1_SPAN, TagScheme.STAGE2_ASPECT)},
}


def check_compatible(model1: TaggerModel, model2: TaggerModel, task) -> None:
    task = TaskKind(task)
    pair = (model1.scheme, model2.scheme)
    if pair not in COMPATIBLE[task]:
        raise SchemeMismatch(f"schemes {pair[0].name}/{pair[1].name} cannot serve "
                             f"the {task.value} task")


def extract_opinions(model1: TaggerModel, s: Sentence) -> list[OpinionHit]:
    if model1.scheme.stage != 1:
        raise SchemeMismatch(f"{model1.scheme.name} is not a stage-one scheme")
    tags = model1.tag(frame_stage1(s))
    hits = []
    for span, cat in spans_from_tags(tags, s.tokens):
        hits.append(OpinionHit(span, Polarity(cat) if cat is not None else None))
    return hits


def extract_targets(model2: TaggerModel, s: Sentence, opinion: Span) -> TargetSet:
    if model2.scheme.stage != 2:
        raise SchemeMismatch(f"{model2.scheme.name} is not a stage-two scheme")
    tags = model2.tag(frame_stage2(s, opinion))
    spans = spans_from_tags(tags, s.tokens)
    return TargetSet(entities=tuple(sp for sp, c in spans if c == "ENT"),
                     aspects=tuple(sp for sp, c in spans if c == "ASP"))


def decode_quadruples(s: Sentence, hits: Sequence[OpinionHit],
                      targets_for: Sequence[TargetSet]) -> set[Quadruple]:
    """Pair opinions with their targets.

    A lone entity and a lone aspect form one quadruple.  Otherwise every
    aspect becomes its own quadruple with a null entity; only when there are
    no aspects do entities get quadruples (with a null aspect).  Entities are
    dropped whenever aspects are present but the pairing is not one-to-one.
    """
    out: set[Quadruple] = set()
    for hit, targets in zip(hits, targets_for):
        if not targets:
            continue
        q, k = len(targets.entities), len(targets.aspects)
        if q * k == 1:
            out.add(Quadruple(targets.entities[0], targets.aspects[0], hit.opinion, hit.polarity))
        elif k >= 1:
            for a in targets.aspects:
                out.add(Quadruple(None, a, hit.opinion, hit.polarity))
        elif q >= 1:
            for e in targets.entities:
                out.add(Quadruple(e, None, hit.opinion, hit.polarity))
    return out


def _triple_targets(targets: TargetSet) -> tuple[Span, ...]:
    q, k = len(targets.entities), len(targets.aspects)
    if q * k == 1:
        return targets.entities[:1]
    if k >= 1:
        return targets.aspects
    return targets.entities


def decode_triples_native(s: Sentence, hits: Sequence[OpinionHit],
                          targets_for: Sequence[TargetSet]) -> set[Triple]:
    out: set[Triple] = set()
    for hit, targets in zip(hits, targets_for):
        for t in _triple_targets(targets):
            out.add(Triple(t, hit.opinion, hit.polarity))
    return out


def decode_pairs(s: Sentence, hits: Sequence[OpinionHit],
                 targets_for: Sequence[TargetSet]) -> set[Pair]:
    out: set[Pair] = set()
    for hit, targets in zip(hits, targets_for):
        for t in _triple_targets(targets):
            out.add(Pair(t, hit.opinion))
    return out


DECODERS: dict[TaskKind, Callable] = {
    TaskKind.EASQE: decode_quadruples,
    TaskKind.ASTE: decode_triples_native,
    TaskKind.OPE: decode_pairs,
}


def predict(model1: TaggerModel, model2: TaggerModel, s: Sentence, task) -> set:
    task = TaskKind(task)
    check_compatible(model1, model2, task)
    hits = extract_opinions(model1, s)
    # identical triggers give identical framings: run stage two once per span
    cache: dict[Span, TargetSet] = {}
    targets = []
    for h in hits:
        if h.opinion not in cache:
            cache[h.opinion] = extract_targets(model2, s, h.opinion)
        targets.append(cache[h.opinion])
    return DECODERS[task](s, hits, targets)


def predict_all(model1: TaggerModel, model2: TaggerModel, sentences: Sequence[Sentence],
                task) -> list[set]:
    return [predict(model1, model2, s, task) for s in sentences]
