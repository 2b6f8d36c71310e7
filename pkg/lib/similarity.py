"""
Overlap and similarity uptake measures, and batch scoring into ScoreTables.

Token metrics take already-profiled TokenSequences. A metric that cannot be
computed for a pair (empty sequence, no in-vocabulary token, absent vector)
returns None; ScoreTable records it as a missing cell and counts it.
"""

import os
import sys
import math
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from config import SIMILARITY_SETTINGS
from common_utils import DataError, create_progress_bar, read_csv_rows, write_csv_table
from embeddings import SentenceVectorStore, WordVectorStore, cosine, inner, sentence_vector
from textprep import IDENTITY_PROFILE, PreprocessProfile, TokenSequence, apply_profile, ngrams, tokenize

logger = logging.getLogger(__name__)

TOKEN_METRICS = ("lcs", "pct_s_in_t", "pct_t_in_s", "jaccard", "bleu")
WORD_VECTOR_METRICS = ("glove_align", "glove_utt")
SENTENCE_METRICS = ("sent_cosine", "sent_inner")
MODEL_METRICS = ("nuc_prob", "pjsd", "external")
METRIC_NAMES = TOKEN_METRICS + WORD_VECTOR_METRICS + SENTENCE_METRICS + MODEL_METRICS
PROFILED_METRICS = TOKEN_METRICS + WORD_VECTOR_METRICS


@dataclass(frozen=True)
class MetricId:
    """A metric name bound to the preprocessing profile it runs under."""
    name: str
    profile: PreprocessProfile = IDENTITY_PROFILE

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ValueError(f"unknown metric '{self.name}' (choose from {', '.join(METRIC_NAMES)})")
        if self.name not in PROFILED_METRICS and self.profile != IDENTITY_PROFILE:
            raise ValueError(f"metric '{self.name}' takes no preprocessing profile")

    @classmethod
    def default(cls, name: str) -> "MetricId":
        spec = SIMILARITY_SETTINGS['default_profiles'].get(name, "")
        return cls(name, PreprocessProfile.from_spec(spec))

    @classmethod
    def parse(cls, text: str) -> "MetricId":
        """Parse `name` (default profile) or `name:SPEC`, e.g. `bleu:PS`."""
        name, sep, spec = text.strip().partition(':')
        if not sep:
            return cls.default(name)
        return cls(name, PreprocessProfile.from_spec(spec))

    @property
    def is_default(self) -> bool:
        return self == MetricId.default(self.name)

    @property
    def column(self) -> str:
        return self.name if self.is_default else f"{self.name}:{self.profile.spec}"

    def __str__(self) -> str:
        return f"{self.name}{self.profile.marker}"


def parse_metrics(spec: Iterable[str]) -> List[MetricId]:
    metrics = [MetricId.parse(item) for item in spec]
    columns = [metric.column for metric in metrics]
    duplicates = sorted(col for col, count in Counter(columns).items() if count > 1)
    if duplicates:
        raise ValueError(f"metric requested twice: {', '.join(duplicates)}")
    return metrics


# --- Token Metrics ---

def lcs_length(s: Sequence[str], t: Sequence[str]) -> int:
    """Longest common token subsequence length (two-row dynamic program)."""
    s, t = tuple(s), tuple(t)
    if not s or not t:
        return 0
    previous = [0] * (len(t) + 1)
    for token in s:
        current = [0]
        for j, other in enumerate(t, 1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def lcs_norm(s: TokenSequence, t: TokenSequence) -> float:
    """LCS length divided by len(s)."""
    if len(s) == 0:
        raise ValueError("lcs_norm needs a non-empty source sequence")
    return lcs_length(s, t) / len(s)


def _fraction_in(source: TokenSequence, other: TokenSequence) -> Optional[float]:
    if len(source) == 0:
        return None
    targets = set(other)
    return sum(1 for token in source if token in targets) / len(source)


def pct_s_in_t(s: TokenSequence, t: TokenSequence) -> Optional[float]:
    """Share of S token positions whose token occurs in T."""
    return _fraction_in(s, t)


def pct_t_in_s(s: TokenSequence, t: TokenSequence) -> Optional[float]:
    """Share of T token positions whose token occurs in S."""
    return _fraction_in(t, s)


def jaccard(s: TokenSequence, t: TokenSequence) -> Optional[float]:
    left, right = set(s), set(t)
    union = left | right
    if not union:
        return None
    return len(left & right) / len(union)


def bleu(s: TokenSequence, t: TokenSequence,
         max_n: int = SIMILARITY_SETTINGS['bleu_max_n'],
         epsilon: float = SIMILARITY_SETTINGS['bleu_epsilon']) -> Optional[float]:
    """
    Sentence BLEU with S as the reference and T as the hypothesis.

    Orders run 1..min(max_n, len(t)); a zero clipped precision is replaced by
    `epsilon`. Brevity penalty is exp(min(0, 1 - len(s)/len(t))).
    """
    if len(t) == 0:
        return None
    top = min(max_n, len(t))
    log_total = 0.0
    for n in range(1, top + 1):
        hyp = ngrams(t, n)
        ref = ngrams(s, n)
        matched = sum(min(count, ref[gram]) for gram, count in hyp.items())
        precision = matched / (len(t) - n + 1)
        log_total += math.log(precision if precision > 0 else epsilon)
    brevity = math.exp(min(0.0, 1.0 - len(s) / len(t)))
    return brevity * math.exp(log_total / top)


# --- Embedding Metrics ---

def _unit_rows(store: WordVectorStore, seq: TokenSequence) -> Optional[np.ndarray]:
    vectors = store.vectors_for(seq)
    if not vectors:
        return None
    matrix = np.vstack(vectors)
    norms = np.linalg.norm(matrix, axis=1)
    matrix = matrix[norms > 0]
    if matrix.shape[0] == 0:
        return None
    return matrix / norms[norms > 0][:, None]


def glove_align(store: WordVectorStore, s: TokenSequence, t: TokenSequence) -> Optional[float]:
    """Mean over in-vocabulary S tokens of the best cosine to any T token."""
    s_rows = _unit_rows(store, s)
    t_rows = _unit_rows(store, t)
    if s_rows is None or t_rows is None:
        return None
    sims = np.clip(s_rows @ t_rows.T, -1.0, 1.0)
    return float(sims.max(axis=1).mean())


def glove_utt(store: WordVectorStore, s: TokenSequence, t: TokenSequence) -> Optional[float]:
    """Cosine of the averaged word vectors of S and T."""
    u = sentence_vector(store, s)
    v = sentence_vector(store, t)
    if u is None or v is None:
        return None
    try:
        return cosine(u, v)
    except ValueError:
        return None


def sent_sim(store: SentenceVectorStore, pair_id: str, mode: str = "cosine") -> Optional[float]:
    """Cosine or inner product of the precomputed S and T vectors of a pair."""
    if mode not in ("cosine", "inner"):
        raise ValueError(f"mode must be 'cosine' or 'inner', got '{mode}'")
    u = store.get(pair_id, "s")
    v = store.get(pair_id, "t")
    if u is None or v is None:
        return None
    if mode == "inner":
        return inner(u, v)
    try:
        return cosine(u, v)
    except ValueError:
        return None


TOKEN_FUNCTIONS = {
    "lcs": lambda s, t: lcs_norm(s, t) if len(s) else None,
    "pct_s_in_t": pct_s_in_t,
    "pct_t_in_s": pct_t_in_s,
    "jaccard": jaccard,
    "bleu": bleu,
}


# --- Score Tables ---

def _clean(value) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class ScoreTable:
    """pair_id -> column -> score, with None for missing cells."""

    def __init__(self, columns: Sequence[str] = ()):
        self.columns: List[str] = list(columns)
        self.rows: Dict[str, Dict[str, Optional[float]]] = {}
        self.warnings: Counter = Counter()

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, pair_id: str) -> bool:
        return pair_id in self.rows

    @property
    def pair_ids(self) -> List[str]:
        return sorted(self.rows)

    def add_column(self, name: str) -> None:
        if name not in self.columns:
            self.columns.append(name)

    def add_row(self, pair_id: str, scores: Dict[str, Optional[float]], count_missing: bool = True) -> None:
        """Add or extend a row; non-finite values become missing."""
        row = self.rows.setdefault(pair_id, {})
        for name, value in scores.items():
            self.add_column(name)
            cleaned = _clean(value)
            if cleaned is None and count_missing:
                self.warnings[name] += 1
            row[name] = cleaned

    def get(self, pair_id: str, name: str) -> Optional[float]:
        return self.rows.get(pair_id, {}).get(name)

    def column(self, name: str) -> Dict[str, Optional[float]]:
        if name not in self.columns:
            raise KeyError(f"no column '{name}' in score table (have: {', '.join(self.columns)})")
        return {pair_id: self.rows[pair_id].get(name) for pair_id in self.pair_ids}

    def present(self, name: str) -> Dict[str, float]:
        """Non-missing cells of one column."""
        return {pid: value for pid, value in self.column(name).items() if value is not None}

    def complete_rows(self, names: Sequence[str]) -> List[str]:
        """Pair ids whose cells for every listed column are present."""
        for name in names:
            if name not in self.columns:
                raise KeyError(f"no column '{name}' in score table")
        return [pid for pid in self.pair_ids
                if all(self.rows[pid].get(name) is not None for name in names)]

    def merge(self, other: "ScoreTable") -> "ScoreTable":
        """Column-wise union; a column present in both tables is an error."""
        clash = sorted(set(self.columns) & set(other.columns))
        if clash:
            raise ValueError(f"score tables both define column(s) {', '.join(clash)}")
        merged = ScoreTable(self.columns + other.columns)
        for table in (self, other):
            for pair_id, row in table.rows.items():
                merged.rows.setdefault(pair_id, {}).update(row)
        merged.warnings = self.warnings + other.warnings
        return merged

    def to_frame(self) -> pd.DataFrame:
        records = [[pid] + [self.rows[pid].get(name) for name in self.columns] for pid in self.pair_ids]
        frame = pd.DataFrame(records, columns=["pair_id"] + self.columns)
        for name in self.columns:
            frame[name] = frame[name].astype("float64")
        return frame

    def to_csv(self, filepath: str) -> None:
        write_csv_table(filepath, self.to_frame(), SIMILARITY_SETTINGS['csv_float_format'])

    @classmethod
    def from_csv(cls, filepath: str) -> "ScoreTable":
        """Read `pair_id,<metric>...`; empty cells are missing."""
        rows = read_csv_rows(filepath, ("pair_id",))
        if not rows:
            return cls()
        table = cls([col for col in rows[0][1] if col != "pair_id"])
        for line_num, row in rows:
            pair_id = row['pair_id']
            if pair_id in table.rows:
                raise DataError(f"duplicate pair id '{pair_id}'", filepath, line_num)
            scores = {}
            for name in table.columns:
                cell = row[name]
                try:
                    scores[name] = float(cell) if cell != "" else None
                except ValueError as e:
                    raise DataError(f"invalid score '{cell}' in column '{name}'", filepath, line_num) from e
            table.add_row(pair_id, scores, count_missing=False)
        return table


# --- Batch Scoring ---

@dataclass
class ScoringConfig:
    """
    Metrics to compute plus everything they need.

    `classifier` maps an ExchangePair to a probability (nuc_prob). Model
    columns without a computing component are copied from `external`.
    """
    metrics: List[MetricId]
    word_vectors: Optional[WordVectorStore] = None
    sentence_vectors: Optional[SentenceVectorStore] = None
    classifier: Optional[Callable] = None
    external: Optional[ScoreTable] = None
    inaudible_marker: Optional[str] = None

    def validate(self) -> None:
        """Raise before any scoring when a metric lacks its input."""
        if not self.metrics:
            raise ValueError("no metrics selected")
        for metric in self.metrics:
            if metric.name in WORD_VECTOR_METRICS and self.word_vectors is None:
                raise ValueError(f"metric '{metric.name}' requires word vectors (--vectors)")
            if metric.name in SENTENCE_METRICS and self.sentence_vectors is None:
                raise ValueError(f"metric '{metric.name}' requires sentence vectors (--sentence-vectors)")
            if metric.name in MODEL_METRICS:
                computed = metric.name == "nuc_prob" and self.classifier is not None
                copied = self.external is not None and metric.name in self.external.columns
                if not (computed or copied):
                    raise ValueError(f"metric '{metric.name}' requires "
                                     + ("classifier params (--params) or " if metric.name == "nuc_prob" else "")
                                     + f"an external score table with a '{metric.name}' column (--external)")


def score_pair(pair, config: ScoringConfig) -> Dict[str, Optional[float]]:
    """Every configured metric for one pair, keyed by column name."""
    marker_kwargs = {} if config.inaudible_marker is None else {'inaudible_marker': config.inaudible_marker}
    s_raw = tokenize(pair.s.text, **marker_kwargs)
    t_raw = tokenize(pair.t.text, **marker_kwargs)
    row = {}
    for metric in config.metrics:
        name = metric.name
        if name in PROFILED_METRICS:
            s = apply_profile(s_raw, metric.profile)
            t = apply_profile(t_raw, metric.profile)
            if name in TOKEN_FUNCTIONS:
                value = TOKEN_FUNCTIONS[name](s, t)
            elif name == "glove_align":
                value = glove_align(config.word_vectors, s, t)
            else:
                value = glove_utt(config.word_vectors, s, t)
        elif name in SENTENCE_METRICS:
            value = sent_sim(config.sentence_vectors, pair.id, "cosine" if name == "sent_cosine" else "inner")
        elif name == "nuc_prob" and config.classifier is not None:
            value = config.classifier(pair)
        else:
            value = config.external.get(pair.id, name)
        row[metric.column] = value
    return row


def score_all(pairs: Sequence, config: ScoringConfig, executor=None) -> ScoreTable:
    """
    Score every pair under every configured metric.

    Args:
        pairs: ExchangePair list (ids must be unique)
        config (ScoringConfig): Metrics and their inputs
        executor (TaskExecutor, optional): Worker pool; results are identical
            with or without it

    Returns:
        ScoreTable: One row per pair, one column per metric
    """
    config.validate()
    ids = [pair.id for pair in pairs]
    if len(set(ids)) != len(ids):
        raise ValueError("pair ids must be unique for scoring")

    if executor is not None:
        rows = executor.map_ordered(lambda pair: score_pair(pair, config), pairs, "Scoring pairs")
    else:
        rows = [score_pair(pair, config) for pair in create_progress_bar(pairs, "Scoring pairs")]

    table = ScoreTable([metric.column for metric in config.metrics])
    for pair, row in zip(pairs, rows):
        table.add_row(pair.id, row)
    for column, count in sorted(table.warnings.items()):
        logger.warning("%s: %d missing score(s)", column, count)
    return table
