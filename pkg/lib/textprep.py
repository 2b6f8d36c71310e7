"""
Tokenization and preprocessing profiles for token-based uptake metrics.

Every token metric binds one PreprocessProfile. A profile switches three
stages that always run in the same order: punctuation removal, stopword
removal, stemming (CLI letters P, S, T).
"""

import os
import sys
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, Iterator, Optional, Tuple

from nltk.stem.snowball import SnowballStemmer

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from config import CORPUS_SETTINGS, FILE_PATHS, TEXTPREP_SETTINGS

PROFILE_LETTERS = {'P': 'remove_punct', 'S': 'remove_stopwords', 'T': 'stem'}
PROFILE_MARKERS = {'P': '♠', 'S': '⊕', 'T': '†'}

_stemmer = SnowballStemmer(TEXTPREP_SETTINGS['stem_language'])
_stopword_paths: Dict[str, str] = {TEXTPREP_SETTINGS['default_stopword_list']: FILE_PATHS['stopwords']}
_stopword_lists: Dict[str, FrozenSet[str]] = {}


@dataclass(frozen=True)
class TokenSequence:
    """Ordered lowercase tokens plus the text they came from."""
    tokens: Tuple[str, ...]
    source_text: str = ""

    def __post_init__(self):
        for token in self.tokens:
            if not token or any(ch.isspace() for ch in token):
                raise ValueError(f"invalid token {token!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def with_tokens(self, tokens) -> "TokenSequence":
        return TokenSequence(tuple(tokens), self.source_text)


@dataclass(frozen=True)
class PreprocessProfile:
    """The three preprocessing switches plus the stopword list they use."""
    remove_punct: bool = False
    remove_stopwords: bool = False
    stem: bool = False
    stopword_list_id: str = TEXTPREP_SETTINGS['default_stopword_list']

    @classmethod
    def from_spec(cls, spec: str, stopword_list_id: Optional[str] = None) -> "PreprocessProfile":
        """
        Build a profile from a subset of the letters "PST".

        Args:
            spec (str): e.g. "PST", "PS", "" (case-insensitive)
            stopword_list_id (str, optional): Stopword list to bind

        Returns:
            PreprocessProfile: The matching profile
        """
        flags = {name: False for name in PROFILE_LETTERS.values()}
        for letter in (spec or "").upper():
            if letter not in PROFILE_LETTERS:
                raise ValueError(f"unknown preprocessing letter {letter!r} in profile {spec!r} (use a subset of PST)")
            flags[PROFILE_LETTERS[letter]] = True
        if stopword_list_id is None:
            stopword_list_id = TEXTPREP_SETTINGS['default_stopword_list']
        return cls(stopword_list_id=stopword_list_id, **flags)

    @property
    def spec(self) -> str:
        return "".join(letter for letter, name in PROFILE_LETTERS.items() if getattr(self, name))

    @property
    def marker(self) -> str:
        return "".join(PROFILE_MARKERS[letter] for letter in self.spec)


IDENTITY_PROFILE = PreprocessProfile()


# --- Stopword Lists ---

def load_stopwords(filepath: str) -> FrozenSet[str]:
    """
    Load a stopword list: UTF-8, one token per line, `#` starts a comment.

    Args:
        filepath (str): Path to the list

    Returns:
        frozenset: Lowercased stopwords
    """
    words = set()
    with open(filepath, 'r', encoding='utf-8') as f:
        for line in f:
            entry = line.split('#', 1)[0].strip().lower()
            if entry:
                words.add(entry)
    return frozenset(words)


def register_stopword_list(list_id: str, filepath: str) -> None:
    """Make a stopword file available to profiles under `list_id`."""
    _stopword_paths[list_id] = filepath
    _stopword_lists.pop(list_id, None)
    apply_profile.cache_clear()


def get_stopwords(list_id: str) -> FrozenSet[str]:
    """Resolve a stopword list id, loading the file on first use."""
    if list_id not in _stopword_lists:
        if list_id not in _stopword_paths:
            raise ValueError(f"unknown stopword list '{list_id}'")
        _stopword_lists[list_id] = load_stopwords(_stopword_paths[list_id])
    return _stopword_lists[list_id]


# --- Tokenization ---

def is_punct(token: str) -> bool:
    """A punctuation token has no alphanumeric character."""
    return not any(ch.isalnum() for ch in token)


def _split_chunk(chunk: str):
    start, end = 0, len(chunk)
    while start < end and not chunk[start].isalnum():
        start += 1
    while end > start and not chunk[end - 1].isalnum():
        end -= 1
    tokens = list(chunk[:start])
    if start < end:
        tokens.append(chunk[start:end])
    tokens.extend(chunk[end:])
    return tokens


def tokenize(text: str, inaudible_marker: str = CORPUS_SETTINGS['inaudible_marker']) -> TokenSequence:
    """
    Split text into lowercase tokens.

    Whitespace separates chunks; leading and trailing punctuation characters
    of a chunk become single-character tokens, while apostrophes and hyphens
    inside a word stay in it. The inaudible marker survives as one token.

    Args:
        text (str): Raw utterance text
        inaudible_marker (str): Marker kept intact (matched case-insensitively)

    Returns:
        TokenSequence: The tokens
    """
    lowered = text.lower()
    marker = inaudible_marker.lower() if inaudible_marker else ""
    pieces = re.split(f"({re.escape(marker)})", lowered) if marker else [lowered]

    tokens = []
    for piece in pieces:
        if not piece:
            continue
        if piece == marker:
            tokens.append(piece)
            continue
        for chunk in piece.split():
            tokens.extend(_split_chunk(chunk))
    return TokenSequence(tuple(tokens), text)


def count_content_tokens(text: str, inaudible_marker: str = CORPUS_SETTINGS['inaudible_marker']) -> int:
    """Number of non-punctuation tokens in `text`."""
    return sum(1 for token in tokenize(text, inaudible_marker) if not is_punct(token))


# --- Profiles ---

@lru_cache(maxsize=100000)
def stem(token: str) -> str:
    """Snowball (Porter2) English stem of a lowercase token."""
    return _stemmer.stem(token)


@lru_cache(maxsize=TEXTPREP_SETTINGS['profile_cache_size'])
def apply_profile(seq: TokenSequence, profile: PreprocessProfile) -> TokenSequence:
    """
    Apply a profile's stages in the fixed order P -> S -> T.

    The result may be empty; callers decide what an empty sequence means.
    """
    tokens = seq.tokens
    if profile.remove_punct:
        tokens = tuple(tok for tok in tokens if not is_punct(tok))
    if profile.remove_stopwords:
        stopwords = get_stopwords(profile.stopword_list_id)
        tokens = tuple(tok for tok in tokens if tok not in stopwords)
    if profile.stem:
        tokens = tuple(stem(tok) for tok in tokens)
    if tokens is seq.tokens:
        return seq
    return seq.with_tokens(tokens)


def ngrams(seq, n: int) -> Counter:
    """
    Multiset of contiguous n-token tuples.

    Args:
        seq: TokenSequence or any token sequence
        n (int): Gram length, at least 1

    Returns:
        Counter: n-gram -> multiplicity (empty when the sequence is shorter than n)
    """
    if n < 1:
        raise ValueError(f"n-gram length must be at least 1, got {n}")
    tokens = tuple(seq)
    return Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))
