"""Two-stage entity-aspect-opinion-sentiment quadruple extraction."""

from .core import (Pair, Polarity, Quadruple, Sentence, Span, TagScheme, TagSequence,
                   TaskKind, Triple, spans_from_tags, tags_from_spans, validate_quadruple)
from .data import Dataset, read_dataset, write_dataset
from .pipeline import predict
from .tagger import Mode, TaggerModel
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Mode", "Pair", "Polarity", "Quadruple", "Sentence", "Span", "TagScheme",
    "TagSequence", "TaggerModel", "TaskKind", "TrainConfig", "Triple", "predict",
    "read_dataset", "spans_from_tags", "tags_from_spans", "train", "validate_quadruple",
    "write_dataset",
]
