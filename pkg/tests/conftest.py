import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from easqe.core import Polarity, Quadruple, Sentence, TaskKind, tags_from_spans
from easqe.data import Dataset, make_record
from easqe.encoder import (ExternalEmbeddingStore, ExternalEncoder, frame_stage1,
                           frame_stage2)
from easqe.tagger import Mode, TaggerModel
from easqe.training import opinion_spans, target_spans

POS, NEG = Polarity.POSITIVE, Polarity.NEGATIVE


def forced_rows(framed, tags, num_labels, scale=10.0):
    """Hidden matrix whose raw rows are scaled one-hot vectors of ``tags``."""
    h = np.zeros((len(framed), num_labels))
    for pos, y in zip(framed.raw_map, tags):
        h[pos, y] = scale
    return h


def forced_model(scheme, matrices, mode=Mode.CRF):
    """Model with identity emissions over an external store of crafted rows."""
    L = scheme.size
    store = ExternalEmbeddingStore(matrices)
    return TaggerModel(scheme, ExternalEncoder(store), W=np.eye(L), b=np.zeros(L),
                       T=np.zeros((L + 2, L + 2)), mode=mode)


def oracle_models(dataset, scheme1, scheme2):
    """Stage models that reproduce ``dataset``'s gold labels exactly."""
    m1, m2 = {}, {}
    for r in dataset.records:
        s = r.sentence
        f1 = frame_stage1(s)
        tags = tags_from_spans(opinion_spans(r.annotations, scheme1), len(s), scheme1)
        m1[f1.key] = forced_rows(f1, tags.labels, scheme1.size)
        for span, _ in opinion_spans(r.annotations, scheme1):
            f2 = frame_stage2(s, span)
            tags2 = tags_from_spans(target_spans(r.annotations, span, scheme2), len(s), scheme2)
            m2[f2.key] = forced_rows(f2, tags2.labels, scheme2.size)
    return forced_model(scheme1, m1), forced_model(scheme2, m2)


def sushi_record():
    s = Sentence("sushi", "the sushi is well made and its price is reasonable".split())
    quads = [Quadruple(s.span(1, 2), s.span(7, 8), s.span(9, 10), POS),
             Quadruple(s.span(1, 2), None, s.span(3, 5), POS)]
    return make_record(s, quads)


def tiny_dataset():
    """3 sentences, 4 quads, one sentence with an entity-aspect quad."""
    s1 = Sentence("t1", "the sushi 's price was reasonable".split())
    s2 = Sentence("t2", "prices too high for this cramped and unappealing restaurant".split())
    s3 = Sentence("t3", "but the service could have been better".split())
    return Dataset(TaskKind.EASQE, [
        make_record(s1, [Quadruple(s1.span(1, 2), s1.span(3, 4), s1.span(5, 6), POS)]),
        make_record(s2, [Quadruple(s2.span(8, 9), None, s2.span(5, 6), NEG),
                         Quadruple(s2.span(8, 9), None, s2.span(7, 8), NEG)]),
        make_record(s3, [Quadruple(None, s3.span(2, 3), s3.span(3, 7), NEG)]),
    ], name="tiny")


@pytest.fixture
def tiny():
    return tiny_dataset()


@pytest.fixture
def sushi():
    return sushi_record()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(mod.status_line(number))
