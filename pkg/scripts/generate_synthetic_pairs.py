"""
Generate a synthetic copy-fraction corpus of (S, T) pairs.

Every student utterance S is a handful of distinct "source" words. The
teacher reply T copies round(alpha * |S|) of them, in order, mixed with
random "filler" words that never share a stem with any source word. alpha is
drawn uniformly from [0, 1] per pair and written out as the pair's gold
label, so a dependence measure can be checked against known ground truth.

Usage:
    python scripts/generate_synthetic_pairs.py --n-pairs 5000 --out synth_pairs.jsonl --alpha-out synth_alpha.csv
"""

import os
import sys
import logging
import argparse
from typing import Dict, List, Tuple

# Third-party libraries
import numpy as np
from faker import Faker

# Local imports
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'lib'))

from config import RUN_SETTINGS, TEXTPREP_SETTINGS
from common_utils import setup_logging
from corpus import STUDENT, TEACHER, ExchangePair, GoldLabel, Utterance, write_gold_labels, write_pairs
from textprep import get_stopwords, stem

logger = logging.getLogger(__name__)

SOURCE = "synthetic"
S_LENGTH = (8, 12)
FILLER_LENGTH = (3, 8)
SOURCE_SHARE = 0.6
MIN_VOCABULARY = 40


def build_vocabularies(fake: Faker, size: int = 500) -> Tuple[List[str], List[str]]:
    """
    Split Faker words into disjoint source and filler vocabularies.

    Words are lowercase, alphabetic, at least 3 letters, not stopwords, and
    no two kept words share a stem.
    """
    stopwords = get_stopwords(TEXTPREP_SETTINGS['default_stopword_list'])
    words, stems = [], set()
    for _ in range(200):
        for word in fake.words(nb=100):
            word = word.lower()
            if len(word) < 3 or not word.isalpha() or word in stopwords:
                continue
            root = stem(word)
            if root in stems:
                continue
            stems.add(root)
            words.append(word)
        if len(words) >= size:
            break
    if len(words) < MIN_VOCABULARY:
        raise ValueError(f"only {len(words)} usable vocabulary words; need {MIN_VOCABULARY}")
    cut = int(len(words) * SOURCE_SHARE)
    return words[:cut], words[cut:]


def make_reply(s_words: List[str], alpha: float, filler: List[str], rng: np.random.Generator) -> List[str]:
    """Copy round(alpha * |S|) S words in order and interleave filler words."""
    n_copy = int(round(alpha * len(s_words)))
    copied = sorted(rng.choice(len(s_words), size=n_copy, replace=False)) if n_copy else []
    fill = list(rng.choice(filler, size=int(rng.integers(FILLER_LENGTH[0], FILLER_LENGTH[1] + 1))))
    keyed = [(key, s_words[i]) for key, i in zip(np.sort(rng.random(n_copy)), copied)]
    keyed += [(key, word) for key, word in zip(rng.random(len(fill)), fill)]
    return [word for _, word in sorted(keyed)]


def generate_copy_corpus(n_pairs: int = RUN_SETTINGS['synthetic_pairs'], seed: int = 0,
                         pairs_per_conversation: int = RUN_SETTINGS['synthetic_pairs_per_conversation']
                         ) -> Tuple[List[ExchangePair], Dict[str, float]]:
    """
    Build the synthetic corpus.

    Args:
        n_pairs (int): Number of pairs
        seed (int): Seed for Faker and the numpy generator
        pairs_per_conversation (int): Pairs grouped under one conversation id

    Returns:
        tuple: (pairs, alpha by pair id)
    """
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be positive, got {n_pairs}")
    fake = Faker("en_US")
    fake.seed_instance(seed)
    source_vocab, filler_vocab = build_vocabularies(fake)
    rng = np.random.default_rng(seed)

    pairs, alphas = [], {}
    for index in range(n_pairs):
        conversation = f"synth{index // pairs_per_conversation:05d}"
        turn = 2 * (index % pairs_per_conversation)
        s_len = int(rng.integers(S_LENGTH[0], S_LENGTH[1] + 1))
        s_words = list(rng.choice(source_vocab, size=min(s_len, len(source_vocab)), replace=False))
        alpha = float(rng.random())
        t_words = make_reply(s_words, alpha, filler_vocab, rng)

        pair_id = f"{conversation}_{turn}"
        pairs.append(ExchangePair(
            id=pair_id,
            source=SOURCE,
            s=Utterance(STUDENT, " ".join(s_words) + ".", turn),
            t=Utterance(TEACHER, " ".join(t_words) + ".", turn + 1),
            conversation_id=conversation,
        ))
        alphas[pair_id] = alpha
    logger.info("Generated %d synthetic pair(s) over %d conversation(s)",
                len(pairs), len({p.conversation_id for p in pairs}))
    return pairs, alphas


def write_corpus(pairs: List[ExchangePair], alphas: Dict[str, float], pairs_path: str, alpha_path: str) -> None:
    write_pairs(pairs_path, pairs)
    write_gold_labels(alpha_path, [GoldLabel(pid, alphas[pid], 1) for pid in sorted(alphas)])


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Generate a synthetic copy-fraction (S, T) corpus")
    parser.add_argument("--n-pairs", type=int, default=RUN_SETTINGS['synthetic_pairs'])
    parser.add_argument("--seed", type=int, default=RUN_SETTINGS['seed'])
    parser.add_argument("--out", required=True, help="Pairs JSONL output")
    parser.add_argument("--alpha-out", required=True, help="Copy-fraction CSV output (pair_id,value,n_raters)")
    args = parser.parse_args()

    setup_logging()
    corpus_pairs, corpus_alphas = generate_copy_corpus(args.n_pairs, args.seed)
    write_corpus(corpus_pairs, corpus_alphas, args.out, args.alpha_out)
    logger.info("Wrote %s and %s", args.out, args.alpha_out)
