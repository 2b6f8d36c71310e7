"""
Pretrained word vectors, precomputed utterance vectors, and the vector
arithmetic used by the embedding-based uptake metrics.
"""

import os
import sys
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from common_utils import DataError, ensure_parent_dir, read_jsonl

logger = logging.getLogger(__name__)

SIDES = ("s", "t")


@dataclass
class WordVectorStore:
    """Token -> vector table; every vector has length `dim`."""
    dim: int
    table: Dict[str, np.ndarray] = field(default_factory=dict)

    def __contains__(self, token: str) -> bool:
        return token in self.table

    def __len__(self) -> int:
        return len(self.table)

    def get(self, token: str) -> Optional[np.ndarray]:
        return self.table.get(token)

    def vectors_for(self, tokens: Iterable[str]):
        """In-vocabulary vectors for `tokens`, in order; OOV tokens are skipped."""
        return [self.table[tok] for tok in tokens if tok in self.table]

    def save(self, filepath: str) -> None:
        """Write the store back in the text format (token then floats)."""
        ensure_parent_dir(filepath)
        with open(filepath, 'w', encoding='utf-8', newline='\n') as f:
            for token, vector in self.table.items():
                f.write(token + " " + " ".join(repr(float(x)) for x in vector) + "\n")


@dataclass
class SentenceVectorStore:
    """(pair_id, side) -> precomputed utterance vector."""
    dim: int
    table: Dict[Tuple[str, str], np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.table)

    def get(self, pair_id: str, side: str) -> Optional[np.ndarray]:
        return self.table.get((pair_id, side))


def _is_word2vec_header(parts) -> bool:
    return len(parts) == 2 and all(part.isdigit() for part in parts)


def load_word_vectors(filepath: str) -> WordVectorStore:
    """
    Load pretrained word vectors from the common text format.

    Each line holds a token followed by whitespace-separated floats. The
    dimension is taken from the first entry and every later line must match
    it. A leading word2vec-style "<count> <dim>" header is skipped.

    Args:
        filepath (str): Path to the vector file

    Returns:
        WordVectorStore: The loaded store

    Raises:
        DataError: On dimension mismatches, duplicates, bad floats or an empty file
    """
    if not os.path.exists(filepath):
        raise FileNotFoundError(f"Vector file not found at '{filepath}'")

    dim = None
    table: Dict[str, np.ndarray] = {}
    with open(filepath, 'r', encoding='utf-8') as f:
        for line_num, line in enumerate(f, 1):
            parts = line.rstrip('\n').split()
            if not parts:
                continue
            if dim is None and not table and _is_word2vec_header(parts):
                continue
            token, values = parts[0], parts[1:]
            if not values:
                raise DataError(f"no vector values for token '{token}'", filepath, line_num)
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataError(f"dimension mismatch: expected {dim} values, found {len(values)}",
                                filepath, line_num)
            if token in table:
                raise DataError(f"duplicate token '{token}'", filepath, line_num)
            try:
                table[token] = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError as e:
                raise DataError(f"invalid float for token '{token}': {e}", filepath, line_num) from e

    if dim is None:
        raise DataError("no vectors", filepath)
    logger.info("Loaded %d word vectors (dim %d) from %s", len(table), dim, filepath)
    return WordVectorStore(dim=dim, table=table)


def load_sentence_vectors(filepath: str) -> SentenceVectorStore:
    """
    Load precomputed utterance vectors from JSONL.

    Each line: {"pair_id": str, "side": "s"|"t", "vector": [float]}.

    Raises:
        DataError: On dimension mismatch, duplicate (pair_id, side), bad side or empty file
    """
    dim = None
    table: Dict[Tuple[str, str], np.ndarray] = {}
    for line_num, record in read_jsonl(filepath):
        try:
            pair_id = str(record['pair_id'])
            side = record['side']
            values = record['vector']
        except KeyError as e:
            raise DataError(f"missing field {e}", filepath, line_num) from e
        if side not in SIDES:
            raise DataError(f"side must be 's' or 't', got {side!r}", filepath, line_num)
        if not isinstance(values, list) or not values:
            raise DataError("vector must be a non-empty list", filepath, line_num)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise DataError(f"dimension mismatch: expected {dim} values, found {len(values)}",
                            filepath, line_num)
        key = (pair_id, side)
        if key in table:
            raise DataError(f"duplicate vector for ({pair_id}, {side})", filepath, line_num)
        try:
            table[key] = np.asarray(values, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise DataError(f"invalid vector values: {e}", filepath, line_num) from e

    if dim is None:
        raise DataError("no vectors", filepath)
    logger.info("Loaded %d sentence vectors (dim %d) from %s", len(table), dim, filepath)
    return SentenceVectorStore(dim=dim, table=table)


def sentence_vector(store: WordVectorStore, seq) -> Optional[np.ndarray]:
    """
    Mean of the in-vocabulary token vectors of `seq`.

    Returns:
        np.ndarray or None: None (a miss) when no token is in vocabulary
    """
    vectors = store.vectors_for(seq)
    if not vectors:
        return None
    return np.mean(np.vstack(vectors), axis=0)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """
    Cosine similarity u.v / (|u| |v|), clipped to [-1, 1].

    Raises:
        ValueError: On length mismatch or a zero vector
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"vector lengths differ: {u.shape[0]} vs {v.shape[0]}")
    norm_u = np.linalg.norm(u)
    norm_v = np.linalg.norm(v)
    if norm_u == 0.0 or norm_v == 0.0:
        raise ValueError("undefined cosine: zero vector")
    return float(np.clip(np.dot(u, v) / (norm_u * norm_v), -1.0, 1.0))


def inner(u: np.ndarray, v: np.ndarray) -> float:
    """Raw inner product of two equal-length vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"vector lengths differ: {u.shape[0]} vs {v.shape[0]}")
    return float(np.dot(u, v))
