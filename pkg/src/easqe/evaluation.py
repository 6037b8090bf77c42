"""Exact-match micro precision / recall / F1."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Hashable, Iterable, Mapping

from .core import Quadruple, TaskKind, Triple
from .data import Dataset, convert, quad_to_triple, triple_to_pair
from .pipeline import check_compatible, predict
from .tagger import TaggerModel


@dataclass(frozen=True)
class PRF:
    matched: int
    predicted: int
    gold: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, matched: int, predicted: int, gold: int) -> "PRF":
        p = matched / predicted if predicted else 0.0
        r = matched / gold if gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(matched, predicted, gold, p, r, f1)

    def as_tuple(self) -> tuple:
        return (self.matched, self.predicted, self.gold, self.precision, self.recall, self.f1)


def exact_match_prf(gold: Iterable[Hashable], pred: Iterable[Hashable]) -> PRF:
    """Score two sets of items.

    Items must already carry their sentence id (e.g. ``(sid, quad)``) so that
    identical tuples from different sentences stay distinct.
    """
    gold, pred = set(gold), set(pred)
    return PRF.from_counts(len(gold & pred), len(pred), len(gold))


GRANULARITIES = {
    TaskKind.EASQE: ("quad", "triple", "pair", "entity", "aspect", "opinion", "polarity_span"),
    TaskKind.ASTE: ("triple", "pair", "target", "opinion", "polarity_span"),
    TaskKind.OPE: ("pair", "target", "opinion"),
}


def _views(a) -> dict[str, list]:
    """Every granularity an annotation contributes to."""
    out: dict[str, list] = {}
    if isinstance(a, Quadruple):
        out["quad"] = [a]
        out["entity"] = [a.entity] if a.entity is not None else []
        out["aspect"] = [a.aspect] if a.aspect is not None else []
        a = quad_to_triple(a)
    if isinstance(a, Triple):
        out["triple"] = [a]
        out["polarity_span"] = [(a.opinion, a.polarity)]
        a = triple_to_pair(a)
    out["pair"] = [a]
    out.setdefault("target", [a.target])
    out["opinion"] = [a.opinion]
    return out


def granular_sets(annotations_by_id: Mapping[str, Iterable], task) -> dict[str, set]:
    task = TaskKind(task)
    sets: dict[str, set] = {g: set() for g in GRANULARITIES[task]}
    for sid, anns in annotations_by_id.items():
        for a in anns:
            for g, items in _views(a).items():
                if g in sets:
                    sets[g].update((sid, x) for x in items)
    return sets


@dataclass
class EvalReport:
    task: TaskKind
    rows: dict[str, PRF] = field(default_factory=dict)

    def __getitem__(self, granularity: str) -> PRF:
        return self.rows[granularity]

    def to_json(self) -> dict:
        return {"task": TaskKind(self.task).value,
                "rows": {k: asdict(v) for k, v in self.rows.items()}}

    def table(self) -> str:
        lines = [f"{'granularity':<14}{'matched':>8}{'pred':>7}{'gold':>7}"
                 f"{'P':>9}{'R':>9}{'F1':>9}"]
        for name, r in self.rows.items():
            lines.append(f"{name:<14}{r.matched:>8}{r.predicted:>7}{r.gold:>7}"
                         f"{r.precision:>9.4f}{r.recall:>9.4f}{r.f1:>9.4f}")
        return "\n".join(lines)


def score(gold_by_id: Mapping[str, Iterable], pred_by_id: Mapping[str, Iterable],
          task) -> EvalReport:
    task = TaskKind(task)
    g = granular_sets(gold_by_id, task)
    p = granular_sets(pred_by_id, task)
    return EvalReport(task, {name: exact_match_prf(g[name], p[name])
                             for name in GRANULARITIES[task]})


def predictions(model1: TaggerModel, model2: TaggerModel, dataset: Dataset,
                task) -> dict[str, set]:
    return {r.sentence.id: predict(model1, model2, r.sentence, task) for r in dataset.records}


def evaluate(model1: TaggerModel, model2: TaggerModel, dataset: Dataset, task) -> EvalReport:
    """Run the pipeline on ``dataset`` and score against its gold annotations.

    The dataset is scored at ``task`` granularity; an EASQE dataset evaluated
    on ASTE or OPE is projected down first.
    """
    task = TaskKind(task)
    check_compatible(model1, model2, task)
    gold = convert(dataset, task)
    pred = predictions(model1, model2, gold, task)
    return score({r.sentence.id: r.annotations for r in gold.records}, pred, task)


def mean_reports(reports: list[EvalReport]) -> dict[str, dict[str, float]]:
    """Mean P/R/F1 per granularity across runs."""
    out: dict[str, dict[str, float]] = {}
    for name in reports[0].rows:
        rows = [r.rows[name] for r in reports]
        out[name] = {k: sum(getattr(x, k) for x in rows) / len(rows)
                     for k in ("precision", "recall", "f1")}
    return out
