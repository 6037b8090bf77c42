"""Input framing and per-token feature encoders.

Two backends produce the hidden matrix consumed by the tagger:

* ``BuiltinEncoder``: a small trainable window encoder.  Row ``i`` is an
  affine map of ``[emb(prev); emb(cur); emb(next); seg(i); trigger_pool]``.
* ``ExternalEncoder``: precomputed contextual vectors read from an embedding
  file (see ``write_embeddings`` / ``load_external_embeddings``).
"""

from __future__ import annotations

import json
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import Sentence, Span
from .errors import (DimensionMismatch, FormatError, MissingEmbedding, ShapeError,
                     SpanOutOfBounds, TooLong)

CLS = "[CLS]"
SEP = "[SEP]"
PAD = "[PAD]"
UNK = "[UNK]"
SPECIALS = (PAD, UNK, CLS, SEP)

MAX_FRAMED = 64
EMB_MAGIC = b"EASQE-EMB-v1\0\0\0\0"


@dataclass(frozen=True)
class FramedInput:
    pieces: tuple[str, ...]
    segments: tuple[int, ...]
    raw_map: tuple[int, ...]
    trigger_range: tuple[int, ...]
    key: str

    def __len__(self) -> int:
        return len(self.pieces)


def stage1_key(sentence_id: str) -> str:
    return f"{sentence_id}/s1"


def stage2_key(sentence_id: str, trigger: Span) -> str:
    return f"{sentence_id}/s2/{trigger.start}-{trigger.end}"


def frame_stage1(s: Sentence, max_len: int = MAX_FRAMED) -> FramedInput:
    m = len(s)
    if m + 2 > max_len:
        raise TooLong(f"sentence {s.id!r}: {m} tokens + 2 sentinels > {max_len}")
    return FramedInput(
        pieces=(CLS, *s.tokens, SEP),
        segments=(0,) * (m + 2),
        raw_map=tuple(range(1, m + 1)),
        trigger_range=(),
        key=stage1_key(s.id),
    )


def frame_stage2(s: Sentence, trigger: Span, max_len: int = MAX_FRAMED) -> FramedInput:
    m = len(s)
    if not trigger.within(m):
        raise SpanOutOfBounds(f"trigger {trigger.start}..{trigger.end} outside "
                              f"sentence {s.id!r} of length {m}")
    t = len(trigger)
    n = m + t + 3
    if n > max_len:
        raise TooLong(f"sentence {s.id!r} with trigger: framed length {n} > {max_len}")
    return FramedInput(
        pieces=(CLS, *s.tokens, SEP, *s.tokens[trigger.start:trigger.end], SEP),
        segments=(0,) * (m + 2) + (1,) * (t + 1),
        raw_map=tuple(range(1, m + 1)),
        trigger_range=tuple(range(m + 2, m + 2 + t)),
        key=stage2_key(s.id, trigger),
    )


class Vocab:
    """Token to row-index map; the four specials always occupy rows 0-3."""

    def __init__(self, tokens: Iterable[str] = (), lowercase: bool = True):
        self.lowercase = lowercase
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def norm(self, tok: str) -> str:
        if tok in SPECIALS:
            return tok
        return tok.lower() if self.lowercase else tok

    def add(self, tok: str) -> int:
        tok = self.norm(tok)
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __getitem__(self, tok: str) -> int:
        return self.stoi.get(self.norm(tok), self.stoi[UNK])

    def __len__(self) -> int:
        return len(self.itos)

    @classmethod
    def build(cls, sentences: Iterable[Sentence], lowercase: bool = True) -> "Vocab":
        vocab = cls(lowercase=lowercase)
        for s in sentences:
            for tok in s.tokens:
                vocab.add(tok)
        return vocab


class BuiltinEncoder:
    """Window-concatenation encoder with a mean-pooled trigger vector.

    Parameters (all float64):
      ``emb``     vocab x d_e token embeddings
      ``seg``     2 x d_e segment embeddings
      ``proj``    5*d_e x d projection
      ``proj_b``  d bias
    """

    param_names = ("emb", "seg", "proj", "proj_b")

    def __init__(self, vocab: Vocab, emb: np.ndarray, seg: np.ndarray,
                 proj: np.ndarray, proj_b: np.ndarray):
        self.vocab = vocab
        self.emb = np.asarray(emb, dtype=np.float64)
        self.seg = np.asarray(seg, dtype=np.float64)
        self.proj = np.asarray(proj, dtype=np.float64)
        self.proj_b = np.asarray(proj_b, dtype=np.float64)
        de = self.emb.shape[1]
        if self.emb.shape[0] != len(vocab):
            raise DimensionMismatch(f"emb rows {self.emb.shape[0]} != vocab size {len(vocab)}")
        if self.seg.shape != (2, de) or self.proj.shape[0] != 5 * de:
            raise DimensionMismatch("segment/projection shapes do not match d_e")
        if self.proj_b.shape != (self.proj.shape[1],):
            raise DimensionMismatch("projection bias does not match hidden size")

    @classmethod
    def initialize(cls, vocab: Vocab, emb_dim: int, hidden_dim: int,
                   rng: np.random.Generator) -> "BuiltinEncoder":
        fan_in = 5 * emb_dim
        return cls(
            vocab,
            emb=rng.normal(0.0, 1.0 / np.sqrt(emb_dim), size=(len(vocab), emb_dim)),
            seg=rng.normal(0.0, 1.0 / np.sqrt(emb_dim), size=(2, emb_dim)),
            proj=rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, hidden_dim)),
            proj_b=np.zeros(hidden_dim),
        )

    @property
    def emb_dim(self) -> int:
        return self.emb.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.proj.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"emb": self.emb, "seg": self.seg, "proj": self.proj, "proj_b": self.proj_b}

    def _ids(self, f: FramedInput):
        cur = np.array([self.vocab[p] for p in f.pieces], dtype=np.int64)
        pad = self.vocab.stoi[PAD]
        prev = np.concatenate(([pad], cur[:-1]))
        nxt = np.concatenate((cur[1:], [pad]))
        seg = np.array(f.segments, dtype=np.int64)
        trig = cur[list(f.trigger_range)] if f.trigger_range else cur[:0]
        return prev, cur, nxt, seg, trig

    def features(self, f: FramedInput) -> np.ndarray:
        prev, cur, nxt, seg, trig = self._ids(f)
        if len(trig):
            pool = self.emb[trig].mean(axis=0)
        else:
            pool = np.zeros(self.emb_dim)
        n = len(f)
        return np.hstack([self.emb[prev], self.emb[cur], self.emb[nxt], self.seg[seg],
                          np.broadcast_to(pool, (n, self.emb_dim))])

    def encode(self, f: FramedInput) -> np.ndarray:
        return self.features(f) @ self.proj + self.proj_b

    def backward(self, f: FramedInput, d_hidden: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its gradient w.r.t. ``encode(f)``."""
        de = self.emb_dim
        prev, cur, nxt, seg, trig = self._ids(f)
        x = self.features(f)
        d_x = d_hidden @ self.proj.T
        d_emb = np.zeros_like(self.emb)
        np.add.at(d_emb, prev, d_x[:, :de])
        np.add.at(d_emb, cur, d_x[:, de:2 * de])
        np.add.at(d_emb, nxt, d_x[:, 2 * de:3 * de])
        if len(trig):
            d_pool = d_x[:, 4 * de:].sum(axis=0) / len(trig)
            np.add.at(d_emb, trig, np.broadcast_to(d_pool, (len(trig), de)))
        d_seg = np.zeros_like(self.seg)
        np.add.at(d_seg, seg, d_x[:, 3 * de:4 * de])
        return {"emb": d_emb, "seg": d_seg, "proj": x.T @ d_hidden,
                "proj_b": d_hidden.sum(axis=0)}

    def to_json(self) -> dict:
        return {
            "backend": "builtin",
            "vocab": self.vocab.itos,
            "lowercase": self.vocab.lowercase,
            "emb": self.emb.tolist(),
            "seg": self.seg.tolist(),
            "proj": self.proj.tolist(),
            "proj_b": self.proj_b.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BuiltinEncoder":
        itos = obj["vocab"]
        if tuple(itos[:len(SPECIALS)]) != SPECIALS:
            raise FormatError("vocabulary must start with the special tokens")
        vocab = Vocab(itos[len(SPECIALS):], lowercase=obj.get("lowercase", True))
        return cls(vocab, np.array(obj["emb"]), np.array(obj["seg"]),
                   np.array(obj["proj"]), np.array(obj["proj_b"]))


class ExternalEmbeddingStore(Mapping):
    """Read-only map from instance key to a float64 hidden matrix."""

    def __init__(self, matrices: dict[str, np.ndarray]):
        self._m = dict(matrices)
        dims = {m.shape[1] for m in self._m.values()}
        if len(dims) > 1:
            raise ShapeError(f"inconsistent hidden sizes in store: {sorted(dims)}")
        self.dim: Optional[int] = dims.pop() if dims else None

    def __getitem__(self, key: str) -> np.ndarray:
        return self._m[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._m)

    def __len__(self) -> int:
        return len(self._m)


class ExternalEncoder:
    param_names: tuple[str, ...] = ()

    def __init__(self, store: ExternalEmbeddingStore):
        self.store = store

    @property
    def hidden_dim(self) -> int:
        if self.store.dim is None:
            raise MissingEmbedding("embedding store is empty")
        return self.store.dim

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def encode(self, f: FramedInput) -> np.ndarray:
        try:
            h = self.store[f.key]
        except KeyError:
            raise MissingEmbedding(f"no embedding for {f.key!r}") from None
        if h.shape[0] != len(f):
            raise DimensionMismatch(f"{f.key!r}: {h.shape[0]} rows for framed length {len(f)}")
        return h

    def backward(self, f: FramedInput, d_hidden: np.ndarray) -> dict[str, np.ndarray]:
        return {}

    def to_json(self) -> dict:
        return {"backend": "external", "dim": self.store.dim}


def encode(f: FramedInput, backend) -> np.ndarray:
    return backend.encode(f)


def write_embeddings(path, matrices: Mapping[str, np.ndarray]) -> None:
    index = {}
    chunks = []
    offset = 0
    for key, mat in matrices.items():
        mat = np.asarray(mat)
        if mat.ndim != 2:
            raise ShapeError(f"{key!r}: expected a 2-D matrix")
        data = np.ascontiguousarray(mat, dtype="<f4").tobytes()
        index[key] = {"rows": mat.shape[0], "cols": mat.shape[1],
                      "offset": offset, "byte_len": len(data)}
        chunks.append(data)
        offset += len(data)
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(json.dumps(index, ensure_ascii=False).encode("utf-8") + b"\n")
        for c in chunks:
            fh.write(c)


def load_external_embeddings(path) -> ExternalEmbeddingStore:
    raw = Path(path).read_bytes()
    if raw[:len(EMB_MAGIC)] != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic header")
    nl = raw.find(b"\n", len(EMB_MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: index is not newline-terminated")
    try:
        index = json.loads(raw[len(EMB_MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable index ({e})") from None
    if not isinstance(index, dict):
        raise FormatError(f"{path}: index must be a JSON object")
    payload = memoryview(raw)[nl + 1:]
    out = {}
    for key, entry in index.items():
        try:
            rows, cols = int(entry["rows"]), int(entry["cols"])
            offset, byte_len = int(entry["offset"]), int(entry["byte_len"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"{path}: malformed index entry for {key!r}") from None
        if offset < 0 or byte_len < 0 or offset + byte_len > len(payload):
            raise FormatError(f"{path}: payload truncated for {key!r}")
        if byte_len != rows * cols * struct.calcsize("<f"):
            raise ShapeError(f"{path}: {key!r} declares {rows}x{cols} "
                             f"but holds {byte_len} bytes")
        mat = np.frombuffer(payload[offset:offset + byte_len], dtype="<f4")
        out[key] = mat.reshape(rows, cols).astype(np.float64)
        if not np.all(np.isfinite(out[key])):
            raise FormatError(f"{path}: non-finite values under {key!r}")
    return ExternalEmbeddingStore(out)
