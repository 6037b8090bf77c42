"""Sequence labelling core: emissions, likelihoods, gradients and decoding.

Label paths are scored over raw sentence positions only.  Transition
matrices are ``(L + 2) x (L + 2)``; index ``L`` is START and ``L + 1`` is
STOP.  Forbidden transitions carry ``-inf`` after masking, so every decoded
path is BIO-valid.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .core import TagScheme, TagSequence, bio_allowed, is_valid_bio
from .encoder import BuiltinEncoder, ExternalEmbeddingStore, ExternalEncoder, FramedInput
from .errors import DimensionMismatch, FormatError, InvalidBIO, ModeError, SchemeMismatch

MODEL_FORMAT = "easqe-model-v1"


class Mode(str, enum.Enum):
    SOFTMAX = "softmax"
    CRF = "crf"


def bio_mask(scheme: TagScheme) -> np.ndarray:
    L = scheme.size
    start, stop = L, L + 1
    mask = np.zeros((L + 2, L + 2), dtype=bool)
    for j in range(L):
        mask[start, j] = bio_allowed(scheme, None, j)
        mask[j, stop] = True
        for i in range(L):
            mask[i, j] = bio_allowed(scheme, i, j)
    return mask


def open_mask(num_labels: int) -> np.ndarray:
    """Mask allowing every label path (no BIO constraint)."""
    L = num_labels
    mask = np.zeros((L + 2, L + 2), dtype=bool)
    mask[:L, :L] = True
    mask[L, :L] = True
    mask[:L, L + 1] = True
    return mask


def apply_mask(transitions: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        mask = open_mask(transitions.shape[0] - 2)
    return np.where(mask, transitions, -np.inf)


# ---------------------------------------------------------------------------
# array-level routines; ``tm`` is always an already-masked transition matrix


def _split(tm: np.ndarray):
    L = tm.shape[0] - 2
    return tm[L, :L], tm[:L, :L], tm[:L, L + 1]


def path_score(emissions: np.ndarray, tm: np.ndarray, path: Sequence[int]) -> float:
    start, trans, stop = _split(tm)
    path = list(path)
    score = start[path[0]] + stop[path[-1]]
    score += emissions[np.arange(len(path)), path].sum()
    for a, b in zip(path[:-1], path[1:]):
        score += trans[a, b]
    return float(score)


def forward(emissions: np.ndarray, tm: np.ndarray) -> np.ndarray:
    start, trans, _ = _split(tm)
    n, L = emissions.shape
    alpha = np.empty((n, L))
    alpha[0] = start + emissions[0]
    for t in range(1, n):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + trans, axis=0) + emissions[t]
    return alpha


def backward(emissions: np.ndarray, tm: np.ndarray) -> np.ndarray:
    _, trans, stop = _split(tm)
    n, L = emissions.shape
    beta = np.empty((n, L))
    beta[n - 1] = stop
    for t in range(n - 2, -1, -1):
        beta[t] = logsumexp(trans + (emissions[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def crf_log_partition(emissions: np.ndarray, tm: np.ndarray) -> float:
    _, _, stop = _split(tm)
    alpha = forward(emissions, tm)
    return float(logsumexp(alpha[-1] + stop))


def crf_marginals(emissions: np.ndarray, tm: np.ndarray):
    """Return ``(log_z, unary, expected_transitions)``.

    ``unary[t, y]`` is P(y_t = y); ``expected_transitions`` has the shape of
    ``tm`` and holds expected usage counts of every transition, START and
    STOP included.
    """
    start, trans, stop = _split(tm)
    n, L = emissions.shape
    alpha = forward(emissions, tm)
    beta = backward(emissions, tm)
    log_z = float(logsumexp(alpha[-1] + stop))
    unary = np.exp(alpha + beta - log_z)
    counts = np.zeros_like(tm)
    for t in range(1, n):
        counts[:L, :L] += np.exp(alpha[t - 1][:, None] + trans
                                 + (emissions[t] + beta[t])[None, :] - log_z)
    counts[L, :L] = unary[0]
    counts[:L, L + 1] = unary[-1]
    return log_z, unary, counts


def viterbi_path(emissions: np.ndarray, tm: np.ndarray) -> list[int]:
    """Best path; ties go to the lower label index at every decision."""
    start, trans, stop = _split(tm)
    n, L = emissions.shape
    delta = start + emissions[0]
    back = np.zeros((n, L), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)] + emissions[t]
    best = int(np.argmax(delta + stop))
    path = [best]
    for t in range(n - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    return path[::-1]


def log_softmax(scores: np.ndarray) -> np.ndarray:
    return scores - logsumexp(scores, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# model


@dataclass
class TaggingInstance:
    framed: FramedInput
    gold: Optional[TagSequence] = None


Encoder = Union[BuiltinEncoder, ExternalEncoder]


@dataclass
class TaggerModel:
    scheme: TagScheme
    encoder: Encoder
    W: np.ndarray  # labels x hidden
    b: np.ndarray
    T: np.ndarray
    mode: Mode = Mode.CRF
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        L = self.scheme.size
        self.mode = Mode(self.mode)
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64)
        if self.mask is None:
            self.mask = bio_mask(self.scheme)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.W.shape[0] != L or self.b.shape != (L,):
            raise DimensionMismatch(f"emission layer does not match {L} labels")
        if self.T.shape != (L + 2, L + 2) or self.mask.shape != self.T.shape:
            raise DimensionMismatch(f"transitions must be {(L + 2, L + 2)}")

    @classmethod
    def initialize(cls, scheme: TagScheme, encoder: Encoder, mode: Mode = Mode.CRF,
                   rng: Optional[np.random.Generator] = None) -> "TaggerModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        d = encoder.hidden_dim
        L = scheme.size
        return cls(scheme, encoder,
                   W=rng.normal(0.0, 1.0 / np.sqrt(d), size=(L, d)),
                   b=np.zeros(L), T=np.zeros((L + 2, L + 2)), mode=mode)

    @property
    def num_labels(self) -> int:
        return self.scheme.size

    def params(self) -> dict[str, np.ndarray]:
        out = {"W": self.W, "b": self.b, "T": self.T}
        out.update(self.encoder.params())
        return out

    def masked_transitions(self) -> np.ndarray:
        if self.mode is Mode.SOFTMAX:
            return np.where(self.mask, 0.0, -np.inf)
        return np.where(self.mask, self.T, -np.inf)

    def hidden(self, f: FramedInput) -> np.ndarray:
        return self.encoder.encode(f)

    def raw_scores(self, f: FramedInput) -> np.ndarray:
        return emission_scores(self.hidden(f), self)[list(f.raw_map)]

    def tag(self, f: FramedInput) -> TagSequence:
        return viterbi(self.raw_scores(f), self)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "scheme": self.scheme.name,
            "mode": self.mode.value,
            "dims": {"labels": self.num_labels, "hidden": int(self.W.shape[1])},
            "encoder": self.encoder.to_json(),
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "T": self.T.tolist(),
            "mask": self.mask.astype(int).tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, obj: dict, store: Optional[ExternalEmbeddingStore] = None):
        if obj.get("format") != MODEL_FORMAT:
            raise FormatError(f"unsupported model format {obj.get('format')!r}")
        enc = obj["encoder"]
        if enc["backend"] == "builtin":
            encoder: Encoder = BuiltinEncoder.from_json(enc)
        elif enc["backend"] == "external":
            if store is None:
                raise FormatError("model uses external embeddings; an embedding store is required")
            encoder = ExternalEncoder(store)
        else:
            raise FormatError(f"unknown encoder backend {enc['backend']!r}")
        return cls(TagScheme[obj["scheme"]], encoder, W=np.array(obj["W"]),
                   b=np.array(obj["b"]), T=np.array(obj["T"]), mode=Mode(obj["mode"]),
                   mask=np.array(obj["mask"], dtype=bool))

    @classmethod
    def load(cls, path, store: Optional[ExternalEmbeddingStore] = None) -> "TaggerModel":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: {e}") from None
        return cls.from_json(obj, store)


# ---------------------------------------------------------------------------
# model-level operations


def emission_scores(h: np.ndarray, model: TaggerModel) -> np.ndarray:
    if h.ndim != 2 or h.shape[1] != model.W.shape[1]:
        raise DimensionMismatch(f"hidden size {h.shape[-1]} != {model.W.shape[1]}")
    return h @ model.W.T + model.b


def log_partition(scores: np.ndarray, model: TaggerModel) -> float:
    if model.mode is not Mode.CRF:
        raise ModeError("log_partition is only defined in CRF mode")
    return crf_log_partition(scores, model.masked_transitions())


def _check_gold(gold: TagSequence, model: TaggerModel, length: int) -> None:
    if gold.scheme is not model.scheme:
        raise SchemeMismatch(f"gold uses {gold.scheme.name}, model uses {model.scheme.name}")
    if len(gold) != length:
        raise DimensionMismatch(f"gold has {len(gold)} labels for {length} tokens")
    if not is_valid_bio(gold):
        raise InvalidBIO(f"gold sequence {gold.names()} is not BIO-valid")


def sequence_log_likelihood(scores: np.ndarray, gold: TagSequence, model: TaggerModel) -> float:
    _check_gold(gold, model, scores.shape[0])
    path = list(gold.labels)
    if model.mode is Mode.SOFTMAX:
        return float(log_softmax(scores)[np.arange(len(path)), path].sum())
    tm = model.masked_transitions()
    return path_score(scores, tm, path) - crf_log_partition(scores, tm)


def log_likelihood(instance: TaggingInstance, gold: Optional[TagSequence],
                   model: TaggerModel) -> float:
    gold = gold if gold is not None else instance.gold
    return sequence_log_likelihood(model.raw_scores(instance.framed), gold, model)


def viterbi(scores: np.ndarray, model: TaggerModel) -> TagSequence:
    return TagSequence(model.scheme, tuple(viterbi_path(scores, model.masked_transitions())))


def instance_gradients(model: TaggerModel, instance: TaggingInstance):
    """Negative log-likelihood of one instance and its exact gradient."""
    f, gold = instance.framed, instance.gold
    h = model.hidden(f)
    raw = list(f.raw_map)
    h_raw = h[raw]
    scores = h_raw @ model.W.T + model.b
    _check_gold(gold, model, len(raw))
    path = np.array(gold.labels)
    n, L = scores.shape
    onehot = np.zeros((n, L))
    onehot[np.arange(n), path] = 1.0

    grads = {"T": np.zeros_like(model.T)}
    if model.mode is Mode.SOFTMAX:
        logp = log_softmax(scores)
        nll = -float(logp[np.arange(n), path].sum())
        d_scores = np.exp(logp) - onehot
    else:
        tm = model.masked_transitions()
        log_z, unary, counts = crf_marginals(scores, tm)
        nll = log_z - path_score(scores, tm, path)
        d_scores = unary - onehot
        gold_counts = np.zeros_like(model.T)
        gold_counts[L, path[0]] += 1
        gold_counts[path[-1], L + 1] += 1
        np.add.at(gold_counts, (path[:-1], path[1:]), 1)
        grads["T"] = np.where(model.mask, counts - gold_counts, 0.0)

    grads["W"] = d_scores.T @ h_raw
    grads["b"] = d_scores.sum(axis=0)
    if model.encoder.param_names:
        d_hidden = np.zeros_like(h)
        d_hidden[raw] = d_scores @ model.W
        grads.update(model.encoder.backward(f, d_hidden))
    return nll, grads


def _pairwise_sum(items: list):
    """Tree reduction in index order, so the summation order is fixed."""
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def gradients(batch: Sequence[TaggingInstance], model: TaggerModel):
    """Mean NLL over ``batch`` and its gradient for every model parameter."""
    if not batch:
        raise ValueError("empty batch")
    results = [instance_gradients(model, inst) for inst in batch]
    n = len(results)
    loss = _pairwise_sum([r[0] for r in results]) / n
    grads = {k: _pairwise_sum([r[1][k] for r in results]) / n for k in results[0][1]}
    return loss, grads


def batch_loss(batch: Sequence[TaggingInstance], model: TaggerModel) -> float:
    total = [-log_likelihood(inst, None, model) for inst in batch]
    return _pairwise_sum(total) / len(total)
