"""Building tagging instances from datasets, training, and gradient checking."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import (Quadruple, Sentence, Span, TagScheme, TaskKind, spans_from_tags,
                   tags_from_spans)
from .data import Dataset, quad_to_triple
from .encoder import (BuiltinEncoder, ExternalEmbeddingStore, ExternalEncoder, Vocab,
                      frame_stage1, frame_stage2)
from .errors import (CategoryError, EmptyDataset, OverlapError, SchemeMismatch,
                     SpanOutOfBounds, TooLong)
from .tagger import Mode, TaggerModel, TaggingInstance, batch_loss, gradients

log = logging.getLogger(__name__)

DEFAULT_SCHEMES = {
    TaskKind.EASQE: (TagScheme.STAGE1_EASQE, TagScheme.STAGE2_EASQE),
    TaskKind.ASTE: (TagScheme.STAGE1_EASQE, TagScheme.STAGE2_ASPECT),
    TaskKind.OPE: (TagScheme.STAGE1_SPAN, TagScheme.STAGE2_ASPECT),
}

BUILTIN_LR = 1e-2
EXTERNAL_LR = 2e-5


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.CRF
    lr: Optional[float] = None  # None: picked from the encoder backend
    batch_size: int = 4
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    max_len: int = 64
    emb_dim: int = 32
    hidden_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("batch_size", "max_epochs", "max_len", "emb_dim", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be positive")

    def learning_rate(self, external: bool) -> float:
        if self.lr is not None:
            return self.lr
        return EXTERNAL_LR if external else BUILTIN_LR

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


# -- gold labels ---------------------------------------------------------------


def opinion_spans(annotations: Iterable, scheme: TagScheme) -> list[tuple[Span, Optional[str]]]:
    """Stage-one gold: distinct opinion spans with their polarity category."""
    found: dict[Span, Optional[str]] = {}
    for a in annotations:
        cat = getattr(a, "polarity", None)
        if scheme is TagScheme.STAGE1_SPAN:
            cat = None
        elif cat is None:
            raise SchemeMismatch(f"{scheme.name} needs polarity-bearing annotations")
        else:
            cat = cat.value
        if found.get(a.opinion, cat) != cat:
            raise SchemeMismatch(f"opinion {a.opinion.text!r} carries two polarities")
        found[a.opinion] = cat
    return sorted(found.items())


def target_spans(annotations: Iterable, opinion: Span,
                 scheme: TagScheme) -> list[tuple[Span, str]]:
    """Stage-two gold for one opinion trigger."""
    out = set()
    for a in annotations:
        if a.opinion != opinion:
            continue
        if isinstance(a, Quadruple):
            if scheme is TagScheme.STAGE2_EASQE:
                if a.entity is not None:
                    out.add((a.entity, "ENT"))
                if a.aspect is not None:
                    out.add((a.aspect, "ASP"))
            else:
                out.add((quad_to_triple(a).target, "ASP"))
        elif scheme is TagScheme.STAGE2_EASQE:
            raise SchemeMismatch(f"{scheme.name} needs quadruple annotations")
        else:
            out.add((a.target, "ASP"))
    return sorted(out)


def _tags(spans, length, scheme, sid):
    try:
        return tags_from_spans(spans, length, scheme)
    except (OverlapError, CategoryError, SpanOutOfBounds) as e:
        raise SchemeMismatch(f"sentence {sid}: gold spans not encodable under "
                             f"{scheme.name}: {e}") from None


def stage1_instances(d: Dataset, scheme: TagScheme, max_len: int = 64) -> list[TaggingInstance]:
    out = []
    for r in d.records:
        s = r.sentence
        try:
            framed = frame_stage1(s, max_len)
        except TooLong:
            log.warning("skipping sentence %s: too long for stage one", s.id)
            continue
        gold = _tags(opinion_spans(r.annotations, scheme), len(s), scheme, s.id)
        out.append(TaggingInstance(framed, gold))
    return out


def stage2_instances(d: Dataset, scheme: TagScheme, max_len: int = 64) -> list[TaggingInstance]:
    out = []
    for r in d.records:
        s = r.sentence
        for opinion in sorted({a.opinion for a in r.annotations}):
            try:
                framed = frame_stage2(s, opinion, max_len)
            except TooLong:
                log.warning("skipping sentence %s trigger %s: too long", s.id, opinion)
                continue
            gold = _tags(target_spans(r.annotations, opinion, scheme), len(s), scheme, s.id)
            out.append(TaggingInstance(framed, gold))
    return out


def build_instances(d: Dataset, stage: int, scheme: TagScheme, max_len: int = 64):
    if scheme.stage != stage:
        raise SchemeMismatch(f"{scheme.name} is not a stage-{stage} scheme")
    if stage == 1:
        return stage1_instances(d, scheme, max_len)
    return stage2_instances(d, scheme, max_len)


# -- evaluation during training ----------------------------------------------


def span_f1(model: TaggerModel, instances: Sequence[TaggingInstance]) -> float:
    """Micro F1 over (instance, span, category) triples."""
    matched = predicted = gold_n = 0
    for inst in instances:
        pred = set(spans_from_tags(model.tag(inst.framed)))
        gold = set(spans_from_tags(inst.gold))
        matched += len(pred & gold)
        predicted += len(pred)
        gold_n += len(gold)
    p = matched / predicted if predicted else 0.0
    r = matched / gold_n if gold_n else 0.0
    if p + r == 0:
        # nothing to find and nothing found counts as perfect
        return 1.0 if predicted == 0 and gold_n == 0 else 0.0
    return 2 * p * r / (p + r)


# -- optimisation -------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def new_model(train_set: Dataset, scheme: TagScheme, config: TrainConfig,
              rng: np.random.Generator,
              store: Optional[ExternalEmbeddingStore] = None) -> TaggerModel:
    if store is not None:
        encoder = ExternalEncoder(store)
    else:
        vocab = Vocab.build(train_set.sentences)
        encoder = BuiltinEncoder.initialize(vocab, config.emb_dim, config.hidden_dim, rng)
    return TaggerModel.initialize(scheme, encoder, config.mode, rng)


def train(train_set: Dataset, dev_set: Dataset, stage: int, task, config: TrainConfig,
          scheme: Optional[TagScheme] = None,
          store: Optional[ExternalEmbeddingStore] = None,
          history: Optional[list] = None) -> TaggerModel:
    """Fit one stage's tagger and return the checkpoint with the best dev F1.

    ``scheme`` defaults to the task's standard scheme for ``stage``; pass
    ``STAGE2_EASQE`` with an ASTE task to train on quadruples and decode
    triples.
    """
    task = TaskKind(task)
    if scheme is None:
        scheme = DEFAULT_SCHEMES[task][stage - 1]
    if not train_set.records or not dev_set.records:
        raise EmptyDataset("training and development sets must be non-empty")
    train_inst = build_instances(train_set, stage, scheme, config.max_len)
    dev_inst = build_instances(dev_set, stage, scheme, config.max_len)
    if not train_inst:
        raise EmptyDataset(f"no stage-{stage} training instances")

    rng = np.random.default_rng(config.seed)
    model = new_model(train_set, scheme, config, rng, store)
    params = model.params()
    opt = Adam(params, config.learning_rate(store is not None))

    best_f1, best_params, since_best = -1.0, None, 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_inst))
        losses = []
        for i in range(0, len(order), config.batch_size):
            batch = [train_inst[j] for j in order[i:i + config.batch_size]]
            loss, grads = gradients(batch, model)
            opt.step(grads)
            losses.append(loss)
        f1 = span_f1(model, dev_inst)
        log.info("stage %d epoch %d: loss %.4f dev F1 %.4f", stage, epoch,
                 float(np.mean(losses)), f1)
        if history is not None:
            history.append({"epoch": epoch, "loss": float(np.mean(losses)), "dev_f1": f1})
        if f1 > best_f1:
            best_f1, since_best = f1, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            since_best += 1
        if since_best >= config.patience:
            break

    for k, v in best_params.items():
        params[k][...] = v
    return model


# -- gradient checking ----------------------------------------------------------


def numerical_gradients(model: TaggerModel, batch: Sequence[TaggingInstance],
                        epsilon: float = 1e-5) -> dict[str, np.ndarray]:
    out = {}
    for name, p in model.params().items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = batch_loss(batch, model)
            flat[i] = orig - epsilon
            down = batch_loss(batch, model)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * epsilon)
        out[name] = g
    return out


def relative_errors(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray],
                    floor: float = 1e-4) -> dict[str, np.ndarray]:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps finite-difference round-off on near-zero coordinates from
    dominating the comparison.
    """
    out = {}
    for k, a in analytic.items():
        n = numeric[k]
        out[k] = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return out


def gradient_check(model: TaggerModel, instance, epsilon: float = 1e-5,
                   grad_fn: Optional[Callable] = None) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    batch = instance if isinstance(instance, (list, tuple)) else [instance]
    grad_fn = grad_fn or gradients
    _, analytic = grad_fn(batch, model)
    numeric = numerical_gradients(model, batch, epsilon)
    errs = relative_errors(analytic, numeric)
    return max(float(e.max()) if e.size else 0.0 for e in errs.values())


def random_gradcheck_case(seed: int, scheme: TagScheme, mode: Mode,
                          length: int = 5, emb_dim: int = 4, hidden_dim: int = 6):
    """Small random model plus one random instance for gradient checking.

    Parameters, including transitions, are drawn at random so no coordinate
    sits at a symmetric point.
    """
    from .core import TagSequence

    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(8)]
    tokens = [words[i] for i in rng.integers(0, len(words), size=length)]
    s = Sentence(f"g{seed}", tokens)
    vocab = Vocab(words)
    encoder = BuiltinEncoder(
        vocab,
        emb=rng.normal(size=(len(vocab), emb_dim)),
        seg=rng.normal(size=(2, emb_dim)),
        proj=rng.normal(scale=0.5, size=(5 * emb_dim, hidden_dim)),
        proj_b=rng.normal(size=hidden_dim),
    )
    L = scheme.size
    model = TaggerModel(scheme, encoder, W=rng.normal(scale=0.5, size=(L, hidden_dim)),
                        b=rng.normal(size=L), T=rng.normal(size=(L + 2, L + 2)), mode=mode)
    if scheme.stage == 1:
        framed = frame_stage1(s)
    else:
        u = int(rng.integers(0, length))
        v = int(rng.integers(u + 1, length + 1))
        framed = frame_stage2(s, Span(u, v))
    # random BIO-valid gold path: sample from the model's own transition mask
    labels = []
    prev = L  # START
    for _ in range(length):
        allowed = np.flatnonzero(model.mask[prev, :L])
        prev = int(rng.choice(allowed))
        labels.append(prev)
    return model, TaggingInstance(framed, TagSequence(scheme, tuple(labels)))


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)


def clone(model: TaggerModel) -> TaggerModel:
    return copy.deepcopy(model)
