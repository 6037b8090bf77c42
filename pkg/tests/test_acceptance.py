"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL/SKIP line.

The lines are printed as each criterion finishes and again in the terminal
summary (see ``conftest.py``).
"""

import functools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import NEG, POS, oracle_models, sushi_record
from easqe.cli import run_cli
from easqe.core import (Polarity, Quadruple, Sentence, Span, TagScheme, TagSequence, TaskKind,
                        is_valid_bio, spans_from_tags, tags_from_spans)
from easqe.data import Dataset, convert, make_record, quad_to_triple, triple_to_pair, write_dataset
from easqe.evaluation import GRANULARITIES, evaluate, exact_match_prf, score
from easqe.pipeline import OpinionHit, TargetSet, decode_quadruples, predict
from easqe.synthetic import TEMPLATES, generate_dataset, synthetic_corpus
from easqe.tagger import (Mode, apply_mask, bio_mask, crf_log_partition, gradients,
                          sequence_log_likelihood, TaggerModel, viterbi_path)
from easqe.training import TrainConfig, gradient_check, random_gradcheck_case, train

from oracles import brute_argmax, enumerate_crf

RESULTS: dict[int, tuple[str, str, str]] = {}


def criterion(number, title):
    """Record the outcome of a criterion test and print one status line."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
            except pytest.skip.Exception as e:
                _report(number, "SKIP", title, str(e))
                raise
            except BaseException as e:
                _report(number, "FAIL", title, f"{type(e).__name__}: {str(e)[:200]}")
                raise
            _report(number, "PASS", title,
                    f"{detail} [{time.perf_counter() - start:.1f}s]".strip())
        return wrapper
    return deco


def _report(number, status, title, detail):
    RESULTS[number] = (status, title, detail)
    print(f"\n{status_line(number)}")


def status_line(number):
    status, title, detail = RESULTS[number]
    return f"criterion {number}: {status} {title} -- {detail}"


# -- 1 ------------------------------------------------------------------------------


@criterion(1, "CRF partition, likelihood and viterbi match enumeration")
def test_criterion_1_crf_enumeration():
    rng = np.random.default_rng(2024)
    scheme = TagScheme.STAGE1_EASQE
    labels = scheme.labels
    mask = bio_mask(scheme)
    n_inst, worst, ties = 1000, 0.0, 0
    for i in range(n_inst):
        n = int(rng.integers(1, 7))
        if i % 4 == 3:
            # small integers make exact ties common, exercising the tie rule
            E = rng.integers(-1, 2, size=(n, 7)).astype(float)
            T = rng.integers(-1, 2, size=(9, 9)).astype(float)
        else:
            E = rng.normal(scale=2.0, size=(n, 7))
            T = rng.normal(size=(9, 9))
        tm = apply_mask(T, mask)
        paths, s = enumerate_crf(E, T, labels)
        m = s.max()
        ref_z = float(m + np.log(np.exp(s - m).sum()))
        worst = max(worst, abs(crf_log_partition(E, tm) - ref_z))
        model = _head_model(scheme, T)
        j = int(rng.integers(len(paths)))
        ll = sequence_log_likelihood(E, TagSequence(scheme, tuple(int(x) for x in paths[j])),
                                     model)
        worst = max(worst, abs(ll - (s[j] - ref_z)))
        assert viterbi_path(E, tm) == brute_argmax(E, T, labels), f"instance {i}"
        ties += int((s == m).sum() > 1)
    assert worst <= 1e-9, worst
    return f"{n_inst} instances, max abs error {worst:.1e}, {ties} with tied optima"


def _head_model(scheme, T):
    from easqe.encoder import ExternalEmbeddingStore, ExternalEncoder

    L = scheme.size
    enc = ExternalEncoder(ExternalEmbeddingStore({}))
    return TaggerModel(scheme, enc, W=np.eye(L), b=np.zeros(L), T=T.copy(), mode=Mode.CRF)


# -- 2 ------------------------------------------------------------------------------


@criterion(2, "analytic gradients match central differences")
def test_criterion_2_gradient_fidelity():
    worst = 0.0
    cases = 0
    for seed in range(20):
        for scheme in TagScheme:
            for mode in Mode:
                model, inst = random_gradcheck_case(seed, scheme, mode, length=4)
                worst = max(worst, gradient_check(model, inst, epsilon=1e-5))
                cases += 1
    assert worst < 1e-4, worst

    model, inst = random_gradcheck_case(99, TagScheme.STAGE2_EASQE, Mode.CRF)
    _, g = gradients([inst], model)
    idx = int(np.argmin(np.abs(g["W"]).ravel()))

    def faulty(batch, m):
        loss, grads = gradients(batch, m)
        grads["W"].reshape(-1)[idx] += 1.0
        return loss, grads

    injected = gradient_check(model, inst, grad_fn=faulty)
    assert injected >= 0.5, injected
    return f"{cases} cases, max rel error {worst:.1e}; injected fault error {injected:.2f}"


# -- 3 ------------------------------------------------------------------------------


@criterion(3, "constrained viterbi is always BIO-valid; span round trips hold")
def test_criterion_3_bio_safety():
    rng = np.random.default_rng(7)
    schemes = list(TagScheme)
    tms = {}
    for scheme in schemes:
        for mode in Mode:
            L = scheme.size
            T = rng.normal(scale=3.0, size=(L + 2, L + 2)) if mode is Mode.CRF else \
                np.zeros((L + 2, L + 2))
            tms[scheme, mode] = apply_mask(T, bio_mask(scheme))
    keys = list(tms)
    total = 100_000
    for i in range(total):
        scheme, mode = keys[i % len(keys)]
        n = int(rng.integers(1, 13))
        E = rng.normal(scale=5.0, size=(n, scheme.size))
        path = viterbi_path(E, tms[scheme, mode])
        assert is_valid_bio(TagSequence(scheme, tuple(path))), (scheme, path)

    @settings(max_examples=300, deadline=None)
    @given(st.sampled_from(schemes), st.integers(1, 12), st.data())
    def roundtrip(scheme, n, data):
        cuts = sorted(data.draw(st.sets(st.integers(0, n), max_size=8)))
        spans = [(Span(a, b), data.draw(st.sampled_from(scheme.categories)))
                 for a, b in zip(cuts[::2], cuts[1::2]) if a < b]
        tags = tags_from_spans(spans, n, scheme)
        assert spans_from_tags(tags) == spans
        assert tags_from_spans(spans_from_tags(tags), n, scheme) == tags

    roundtrip()
    return f"{total} emission matrices over {len(keys)} scheme/mode pairs"


# -- 4 ------------------------------------------------------------------------------

_ENTS = tuple(Span(10 + i, 11 + i) for i in range(3))
_ASPS = tuple(Span(20 + i, 21 + i) for i in range(3))

# (q, k) -> quads as (entity index | None, aspect index | None)
GOLDEN = {
    (0, 0): set(),
    (0, 1): {(None, 0)}, (0, 2): {(None, 0), (None, 1)}, (0, 3): {(None, 0), (None, 1), (None, 2)},
    (1, 0): {(0, None)}, (2, 0): {(0, None), (1, None)}, (3, 0): {(0, None), (1, None), (2, None)},
    (1, 1): {(0, 0)},
    (1, 2): {(None, 0), (None, 1)}, (1, 3): {(None, 0), (None, 1), (None, 2)},
    (2, 1): {(None, 0)}, (3, 1): {(None, 0)},
    (2, 2): {(None, 0), (None, 1)}, (2, 3): {(None, 0), (None, 1), (None, 2)},
    (3, 2): {(None, 0), (None, 1)}, (3, 3): {(None, 0), (None, 1), (None, 2)},
}


def _row(tokens, entity, aspect, opinion):
    s = Sentence("row", tokens.split())
    q = Quadruple(s.span(*entity) if entity else None, s.span(*aspect) if aspect else None,
                  s.span(*opinion), NEG)
    return Dataset(TaskKind.EASQE, [make_record(s, [q])])


@criterion(4, "decoder reproduces the golden (q, k) table and reference examples")
def test_criterion_4_decoder_fidelity():
    op = Span(0, 1)
    for (q, k), expected in GOLDEN.items():
        got = decode_quadruples(None, [OpinionHit(op, POS)], [TargetSet(_ENTS[:q], _ASPS[:k])])
        want = {Quadruple(None if e is None else _ENTS[e], None if a is None else _ASPS[a],
                          op, POS) for e, a in expected}
        assert got == want, (q, k)

    r = sushi_record()
    m1, m2 = oracle_models(Dataset(TaskKind.EASQE, [r]), TagScheme.STAGE1_EASQE,
                           TagScheme.STAGE2_EASQE)
    texts = {(q.entity.text if q.entity else None, q.aspect.text if q.aspect else None,
              q.opinion.text, q.polarity) for q in predict(m1, m2, r.sentence, "easqe")}
    assert texts == {("sushi", "price", "reasonable", POS), ("sushi", None, "well made", POS)}

    rows = [
        ("the staff service was impeccable", (1, 2), (2, 3), (4, 5),
         ("staff", "service", "impeccable")),
        ("a rather cramped restaurant", (3, 4), None, (2, 3), ("restaurant", None, "cramped")),
        ("the service could have been better", None, (1, 2), (2, 6),
         (None, "service", "could have been better")),
    ]
    for tokens, e, a, o, expected in rows:
        d = _row(tokens, e, a, o)
        m1, m2 = oracle_models(d, TagScheme.STAGE1_EASQE, TagScheme.STAGE2_EASQE)
        [q] = predict(m1, m2, d.records[0].sentence, "easqe")
        assert tuple(x.text if x else None for x in (q.entity, q.aspect, q.opinion)) == expected
        assert q.polarity is NEG

    @settings(max_examples=500, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3),
                              st.sampled_from(list(Polarity))), max_size=5),
           st.booleans())
    def fuzz(specs, repeat):
        hits, targets = [], []
        for i, (q, k, pol) in enumerate(specs):
            hits.append(OpinionHit(Span(i, i + 1), pol))
            targets.append(TargetSet(_ENTS[:q], _ASPS[:k]))
        if repeat and hits:
            hits.append(hits[0])
            targets.append(targets[0])
        out = decode_quadruples(None, hits, targets)
        assert isinstance(out, set)
        assert all(x.entity is not None or x.aspect is not None for x in out)
        listed = []
        for h, t in zip(hits, targets):
            listed.extend(decode_quadruples(None, [h], [t]))
        assert len(set(listed)) == len(out)

    fuzz()
    return f"{len(GOLDEN)} table cases, sushi and three reference rows"


# -- 5 ------------------------------------------------------------------------------

_MAIN = {TaskKind.EASQE: "quad", TaskKind.ASTE: "triple", TaskKind.OPE: "pair"}


@criterion(5, "pipeline learns the synthetic corpus for every task")
def test_criterion_5_learnability():
    assert len(TEMPLATES) <= 10
    tr, dv, te = synthetic_corpus(seed=0, n_train=200, n_dev=50, n_test=50)
    cfg = TrainConfig(max_epochs=30)
    start = time.perf_counter()
    scores, schemes = {}, set()
    for task in TaskKind:
        ttr, tdv = convert(tr, task), convert(dv, task)
        m1 = train(ttr, tdv, 1, task, cfg)
        m2 = train(ttr, tdv, 2, task, cfg)
        schemes |= {m1.scheme, m2.scheme}
        scores[task] = evaluate(m1, m2, te, task)[_MAIN[task]].f1
    elapsed = time.perf_counter() - start
    assert schemes == set(TagScheme)
    assert all(f >= 0.95 for f in scores.values()), scores
    assert elapsed < 300, elapsed
    return ", ".join(f"{_MAIN[t]} F1 {f:.3f}" for t, f in scores.items()) + \
        f" in {elapsed:.0f}s"


# -- 6 ------------------------------------------------------------------------------

PRF_FIXTURES = [
    ({1, 2}, {1, 3}, (1, 2, 2, 0.5, 0.5, 0.5)),
    ({1, 2}, {1, 2}, (2, 2, 2, 1.0, 1.0, 1.0)),
    (set(), set(), (0, 0, 0, 0.0, 0.0, 0.0)),
    ({1, 2, 3, 4}, {1}, (1, 1, 4, 1.0, 0.25, 0.4)),
    ({1}, {1, 2, 3, 4}, (1, 4, 1, 0.25, 1.0, 0.4)),
    ({1, 2}, {3}, (0, 1, 2, 0.0, 0.0, 0.0)),
]


@st.composite
def _easqe_records(draw):
    n = draw(st.integers(1, 6))
    s = Sentence(draw(st.text("abc", min_size=1, max_size=4)), [f"w{i}" for i in range(n)])
    span = st.integers(0, n - 1).map(lambda i: s.span(i, i + 1))
    quads = []
    for _ in range(draw(st.integers(0, 4))):
        e = draw(st.one_of(st.none(), span))
        a = draw(span if e is None else st.one_of(st.none(), span))
        quads.append(Quadruple(e, a, draw(span), draw(st.sampled_from(list(Polarity)))))
    return make_record(s, quads)


@criterion(6, "conversion projections and evaluator fixtures are coherent")
def test_criterion_6_coherence():
    for gold, pred, expected in PRF_FIXTURES:
        assert exact_match_prf(gold, pred).as_tuple() == expected

    @settings(max_examples=300, deadline=None)
    @given(st.lists(_easqe_records(), max_size=5, unique_by=lambda r: r.sentence.id))
    def projections(records):
        d = Dataset(TaskKind.EASQE, records)
        aste, ope = convert(d, TaskKind.ASTE), convert(d, TaskKind.OPE)
        assert convert(aste, TaskKind.OPE) == ope
        for r, ra, ro in zip(d.records, aste.records, ope.records):
            assert r.sentence == ra.sentence == ro.sentence
            assert ra.annotations == {quad_to_triple(q) for q in r.annotations}
            assert ro.annotations == {triple_to_pair(t) for t in ra.annotations}
            assert len(ro.annotations) <= len(ra.annotations) <= len(r.annotations)
            for t in ra.annotations:
                assert t.target is not None

    quad_maps = st.dictionaries(st.sampled_from(["a", "b", "c"]),
                                st.lists(_easqe_records(), min_size=1, max_size=1)
                                .map(lambda rs: rs[0].annotations))

    @settings(max_examples=300, deadline=None)
    @given(quad_maps, quad_maps)
    def symmetry(g, p):
        fwd, rev = score(g, p, TaskKind.EASQE), score(p, g, TaskKind.EASQE)
        for name in GRANULARITIES[TaskKind.EASQE]:
            assert fwd[name].precision == rev[name].recall
            assert fwd[name].recall == rev[name].precision

    projections()
    symmetry()
    return f"{len(PRF_FIXTURES)} PRF fixtures exact; projection and symmetry fuzzing"


# -- 7 ------------------------------------------------------------------------------


def _res14_path():
    env = os.environ.get("EASQE_RES14_TRAIN")
    if env:
        return Path(env)
    return Path(__file__).parent / "data" / "res14_train.jsonl"


@criterion(7, "released Res14 training file statistics")
def test_criterion_7_res14_stats(tmp_path, capsys):
    path = _res14_path()
    if not path.is_file():
        pytest.skip(f"{path} not present (set EASQE_RES14_TRAIN to run)")
    out = tmp_path / "stats.json"
    assert run_cli(["stats", "--data", str(path), "--out", str(out)]) == 0
    st_ = json.loads(out.read_text())
    assert st_["sentences"] == 1259 and st_["quads"] == 2526, st_
    assert abs(st_["co_occurrence_pct"] - 6.04) <= 0.01, st_
    return f"#S {st_['sentences']} #Q {st_['quads']} co-occurrence {st_['co_occurrence_pct']}%"


# -- 8 ------------------------------------------------------------------------------


@criterion(8, "identical seeds and inputs give byte-identical files")
def test_criterion_8_determinism(tmp_path):
    data = {}
    for name, n, seed in (("train", 40, 31), ("dev", 12, 32), ("test", 12, 33)):
        data[name] = tmp_path / f"{name}.jsonl"
        write_dataset(generate_dataset(n, seed=seed, prefix=name), data[name])
    outputs = []
    for run in range(2):
        d = tmp_path / f"run{run}"
        d.mkdir()
        common = ["--task", "easqe", "--train", str(data["train"]), "--dev", str(data["dev"]),
                  "--epochs", "3", "--seed", "11"]
        for stage in (1, 2):
            assert run_cli(["train", "--stage", str(stage), "--out", str(d / f"m{stage}.json")]
                           + common) == 0
        assert run_cli(["predict", "--task", "easqe", "--model1", str(d / "m1.json"),
                        "--model2", str(d / "m2.json"), "--data", str(data["test"]),
                        "--out", str(d / "pred.jsonl")]) == 0
        outputs.append({f: (d / f).read_bytes() for f in ("m1.json", "m2.json", "pred.jsonl")})
    assert outputs[0] == outputs[1]
    return "model and prediction files identical across two runs"
