import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import POS, forced_model, oracle_models, sushi_record
from easqe.core import Polarity, Quadruple, Span, TagScheme, TaskKind
from easqe.data import convert, quad_to_triple
from easqe.encoder import frame_stage1
from easqe.evaluation import (GRANULARITIES, PRF, evaluate, exact_match_prf, granular_sets,
                              mean_reports, score)

S1, S2 = TagScheme.STAGE1_EASQE, TagScheme.STAGE2_EASQE
SCHEMES = {TaskKind.EASQE: (S1, S2), TaskKind.ASTE: (S1, TagScheme.STAGE2_ASPECT),
           TaskKind.OPE: (TagScheme.STAGE1_SPAN, TagScheme.STAGE2_ASPECT)}


@pytest.mark.parametrize("gold,pred,expected", [
    ({1, 2}, {1, 3}, (0.5, 0.5, 0.5)),
    ({1, 2}, {1, 2}, (1.0, 1.0, 1.0)),
    (set(), set(), (0.0, 0.0, 0.0)),
    ({1}, set(), (0.0, 0.0, 0.0)),
])
def test_prf_fixtures(gold, pred, expected):
    r = exact_match_prf(gold, pred)
    assert (r.precision, r.recall, r.f1) == expected


@pytest.mark.parametrize("task", list(TaskKind))
def test_oracle_models_score_perfectly(tiny, task):
    gold = convert(tiny, task)
    m1, m2 = oracle_models(gold, *SCHEMES[task])
    report = evaluate(m1, m2, tiny, task)
    assert set(report.rows) == set(GRANULARITIES[task])
    assert all(r.f1 == 1.0 for r in report.rows.values())


def test_silent_models_score_zero(tiny):
    zeros = {frame_stage1(r.sentence).key: np.zeros((len(r.sentence) + 2, S1.size))
             for r in tiny.records}
    report = evaluate(forced_model(S1, zeros), forced_model(S2, {}), tiny, TaskKind.EASQE)
    assert all(r.f1 == 0.0 and r.predicted == 0 for r in report.rows.values())


def test_one_correct_one_spurious():
    r = sushi_record()
    gold = {r.sentence.id: {q for q in r.annotations if q.aspect is not None}}
    good = next(iter(gold[r.sentence.id]))
    spurious = Quadruple(None, r.sentence.span(7, 8), r.sentence.span(9, 10), POS)
    report = score(gold | {"other": {spurious}}, {r.sentence.id: {good, spurious}},
                   TaskKind.EASQE)
    assert report["quad"].as_tuple() == (1, 2, 2, 0.5, 0.5, 0.5)


def test_same_tuple_in_two_sentences_counts_twice():
    q = Quadruple(Span(0, 1), None, Span(1, 2), POS)
    report = score({"a": {q}, "b": {q}}, {"a": {q}}, TaskKind.EASQE)
    assert report["quad"].as_tuple()[:3] == (1, 1, 2)


def test_report_json_and_table(tiny):
    m1, m2 = oracle_models(tiny, S1, S2)
    report = evaluate(m1, m2, tiny, TaskKind.EASQE)
    assert report.to_json()["rows"]["quad"]["f1"] == 1.0
    assert report.table().splitlines()[1].startswith("quad")


def test_mean_reports():
    q = Quadruple(Span(0, 1), None, Span(1, 2), POS)
    r1 = score({"a": {q}}, {"a": {q}}, TaskKind.EASQE)
    r2 = score({"a": {q}}, {}, TaskKind.EASQE)
    assert mean_reports([r1, r2])["quad"]["f1"] == 0.5


# -- properties ----------------------------------------------------------------------


@st.composite
def quads(draw):
    n = 6
    a = draw(st.integers(0, n - 1))
    span = lambda: st.integers(0, n - 1).map(lambda i: Span(i, i + 1))  # noqa: E731
    ent = draw(st.one_of(st.none(), span()))
    asp = draw(st.one_of(st.none(), span()) if ent is not None else span())
    return Quadruple(ent, asp, Span(a, a + 1), draw(st.sampled_from(list(Polarity))))


quad_maps = st.dictionaries(st.sampled_from(["s1", "s2", "s3"]), st.sets(quads(), max_size=4))


@given(quad_maps, quad_maps)
def test_scoring_properties(gold, pred):
    fwd = score(gold, pred, TaskKind.EASQE)
    rev = score(pred, gold, TaskKind.EASQE)
    for g in GRANULARITIES[TaskKind.EASQE]:
        assert fwd[g].precision == rev[g].recall and fwd[g].f1 == rev[g].f1
        assert 0 <= fwd[g].f1 <= 1
    grown = {k: set(v) for k, v in pred.items()}
    for k, v in gold.items():
        grown.setdefault(k, set()).update(v)
    assert score(gold, grown, TaskKind.EASQE)["quad"].recall == 1.0 or not any(gold.values())
    assert score(gold, grown, TaskKind.EASQE)["quad"].matched >= fwd["quad"].matched


@given(quad_maps)
def test_projection_coherence(gold):
    sets = granular_sets(gold, TaskKind.EASQE)
    assert sets["triple"] == {(sid, quad_to_triple(q)) for sid, qs in gold.items() for q in qs}
    assert {(sid, (t.target, t.opinion)) for sid, t in sets["triple"]} == \
        {(sid, (p.target, p.opinion)) for sid, p in sets["pair"]}


def test_prf_from_counts_zero_division():
    assert PRF.from_counts(0, 0, 5).f1 == 0.0
