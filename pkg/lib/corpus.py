"""
Transcript loading, (S, T) pair extraction and rater-judgment aggregation.

A pair is a student turn immediately followed by a teacher turn. Pairs whose
student side is too short, or where either side carries the inaudible
marker, are filtered out. Rater judgments are z-scored per rater and averaged
into gold labels after removing every pair that any rater marked off-topic.
"""

import os
import sys
import math
import logging
from collections import Counter, OrderedDict, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from config import CORPUS_SETTINGS, SIMILARITY_SETTINGS
from common_utils import (DataError, read_csv_rows, read_jsonl, write_csv_table,
                          write_jsonl)
from textprep import count_content_tokens

logger = logging.getLogger(__name__)

STUDENT, TEACHER = CORPUS_SETTINGS['roles']
LEVELS = CORPUS_SETTINGS['levels']
LEVEL_NAMES = sorted(LEVELS, key=LEVELS.get)
ANNOTATION_COLUMNS = ("rater_id", "pair_id", "on_topic", "level")
GOLD_COLUMNS = ("pair_id", "value", "n_raters")
ZSCORE_COLUMNS = ("rater_id", "pair_id", "z")


@dataclass(frozen=True)
class Utterance:
    """
    One transcript turn.

    speaker_role is None only for context utterances read back from a pair
    file that did not record their roles.
    """
    speaker_role: Optional[str]
    text: str
    turn_index: int

    def __post_init__(self):
        if self.speaker_role not in (STUDENT, TEACHER, None):
            raise ValueError(f"unknown speaker role '{self.speaker_role}'")
        if not self.text.strip():
            raise ValueError(f"empty utterance text at turn {self.turn_index}")
        if self.turn_index < 0:
            raise ValueError(f"turn index must be non-negative, got {self.turn_index}")


@dataclass(frozen=True)
class Transcript:
    transcript_id: str
    source: str
    utterances: Tuple[Utterance, ...]


@dataclass(frozen=True)
class ExchangePair:
    """A student utterance S, the teacher reply T, and up to two turns of context."""
    id: str
    source: str
    s: Utterance
    t: Utterance
    context: Tuple[Utterance, ...] = ()
    conversation_id: str = ""
    on_topic_votes: Optional[Dict[str, bool]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.s.speaker_role != STUDENT:
            raise ValueError(f"pair {self.id}: S must be a student utterance")
        if self.t.speaker_role != TEACHER:
            raise ValueError(f"pair {self.id}: T must be a teacher utterance")
        if not self.conversation_id:
            object.__setattr__(self, 'conversation_id', conversation_of(self.id))


@dataclass(frozen=True)
class RaterJudgment:
    rater_id: str
    pair_id: str
    on_topic: bool
    level: Optional[int] = None

    def __post_init__(self):
        if self.on_topic and self.level not in LEVELS.values():
            raise ValueError(f"on-topic judgment ({self.rater_id}, {self.pair_id}) needs a level in 0..2")
        if not self.on_topic and self.level is not None:
            raise ValueError(f"off-topic judgment ({self.rater_id}, {self.pair_id}) cannot carry a level")


@dataclass(frozen=True)
class GoldLabel:
    pair_id: str
    value: float
    n_raters: int

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"gold label for {self.pair_id} is not finite")
        if self.n_raters < 1:
            raise ValueError(f"gold label for {self.pair_id} needs at least one rater")


def conversation_of(pair_id: str) -> str:
    """Conversation id implied by a pair id of the form `<transcript>_<turn>`."""
    return pair_id.rsplit('_', 1)[0] if '_' in pair_id else pair_id


# --- Transcripts ---

def _normalize_role(role, filepath, line_num) -> str:
    normalized = str(role).strip().lower()
    if normalized not in (STUDENT, TEACHER):
        raise DataError(f"unknown speaker role '{role}'", filepath, line_num)
    return normalized


def _transcript_rows(filepath: str, fmt: str):
    if fmt == "jsonl":
        yield from read_jsonl(filepath)
    elif fmt == "csv":
        yield from read_csv_rows(filepath, ("transcript_id", "turn", "role", "text"))
    else:
        raise ValueError(f"unsupported transcript format '{fmt}' (use jsonl or csv)")


def load_transcripts(filepath: str, fmt: str = "jsonl",
                     default_source: Optional[str] = None) -> List[Transcript]:
    """
    Load transcripts from JSONL or CSV.

    Rows are grouped by transcript_id (first-seen order) and each transcript's
    utterances are sorted by turn index.

    Args:
        filepath (str): Input file
        fmt (str): "jsonl" or "csv"
        default_source (str, optional): Source tag for rows without one

    Returns:
        list: Transcript objects
    """
    default_source = default_source or CORPUS_SETTINGS['default_source']
    grouped: "OrderedDict[str, Dict[int, Utterance]]" = OrderedDict()
    sources: Dict[str, str] = {}

    for line_num, row in _transcript_rows(filepath, fmt):
        missing = [key for key in ("transcript_id", "turn", "role", "text") if key not in row]
        if missing:
            raise DataError(f"missing field(s) {', '.join(missing)}", filepath, line_num)

        transcript_id = str(row['transcript_id']).strip()
        role = _normalize_role(row['role'], filepath, line_num)
        try:
            turn = int(row['turn'])
        except (TypeError, ValueError) as e:
            raise DataError(f"turn must be an integer, got {row['turn']!r}", filepath, line_num) from e
        text = str(row['text'] if row['text'] is not None else "")
        if not text.strip():
            raise DataError(f"empty text in transcript '{transcript_id}' turn {turn}", filepath, line_num)
        if turn < 0:
            raise DataError(f"negative turn index {turn}", filepath, line_num)

        turns = grouped.setdefault(transcript_id, {})
        if turn in turns:
            raise DataError(f"duplicate turn {turn} in transcript '{transcript_id}'", filepath, line_num)
        turns[turn] = Utterance(role, text, turn)
        sources.setdefault(transcript_id, str(row.get('source') or default_source))

    transcripts = [
        Transcript(tid, sources[tid], tuple(turns[index] for index in sorted(turns)))
        for tid, turns in grouped.items()
    ]
    logger.info("Loaded %d transcript(s) from %s", len(transcripts), filepath)
    return transcripts


# --- Pair Extraction ---

def keep_pair(pair: ExchangePair, min_s_tokens: int, inaudible_marker: str) -> bool:
    """True when the pair passes the length and inaudible-marker filters."""
    if inaudible_marker and (inaudible_marker in pair.s.text or inaudible_marker in pair.t.text):
        return False
    return count_content_tokens(pair.s.text, inaudible_marker) >= min_s_tokens


def filter_pairs(pairs: Sequence[ExchangePair],
                 min_s_tokens: int = CORPUS_SETTINGS['min_s_tokens'],
                 inaudible_marker: str = CORPUS_SETTINGS['inaudible_marker']) -> List[ExchangePair]:
    """Drop pairs that fail the extraction filters, keeping order."""
    return [pair for pair in pairs if keep_pair(pair, min_s_tokens, inaudible_marker)]


def candidate_pairs(transcript: Transcript) -> List[ExchangePair]:
    """Every student turn immediately followed by a teacher turn, unfiltered."""
    context_size = CORPUS_SETTINGS['context_size']
    utterances = transcript.utterances
    pairs = []
    for i in range(1, len(utterances)):
        s, t = utterances[i - 1], utterances[i]
        if s.speaker_role != STUDENT or t.speaker_role != TEACHER:
            continue
        context = utterances[max(0, i - 1 - context_size):i - 1]
        pairs.append(ExchangePair(
            id=f"{transcript.transcript_id}_{s.turn_index}",
            source=transcript.source,
            s=s,
            t=t,
            context=tuple(context),
            conversation_id=transcript.transcript_id,
        ))
    return pairs


def extract_pairs(transcripts: Sequence[Transcript],
                  min_s_tokens: int = CORPUS_SETTINGS['min_s_tokens'],
                  inaudible_marker: str = CORPUS_SETTINGS['inaudible_marker']) -> List[ExchangePair]:
    """
    Extract filtered (S, T) pairs from transcripts.

    Args:
        transcripts: Loaded transcripts
        min_s_tokens (int): Minimum non-punctuation tokens in S
        inaudible_marker (str): Case-sensitive marker that excludes a pair

    Returns:
        list: ExchangePair objects in transcript order
    """
    candidates = [pair for transcript in transcripts for pair in candidate_pairs(transcript)]
    pairs = filter_pairs(candidates, min_s_tokens, inaudible_marker)
    logger.info("Extracted %d of %d candidate pair(s)", len(pairs), len(candidates))
    return pairs


def drop_small_conversations(pairs: Sequence[ExchangePair], min_pairs: int) -> List[ExchangePair]:
    """Remove pairs from conversations contributing fewer than `min_pairs` pairs."""
    if min_pairs <= 1:
        return list(pairs)
    sizes = Counter(pair.conversation_id for pair in pairs)
    kept = [pair for pair in pairs if sizes[pair.conversation_id] >= min_pairs]
    dropped = sum(1 for size in sizes.values() if size < min_pairs)
    if dropped:
        logger.info("Dropped %d conversation(s) with fewer than %d pairs", dropped, min_pairs)
    return kept


# --- Pair Files ---

def pair_to_record(pair: ExchangePair) -> Dict:
    record = {
        "id": pair.id,
        "source": pair.source,
        "s": pair.s.text,
        "t": pair.t.text,
        "context": [utt.text for utt in pair.context],
        "context_roles": [utt.speaker_role for utt in pair.context],
        "conversation_id": pair.conversation_id,
        "s_turn": pair.s.turn_index,
        "t_turn": pair.t.turn_index,
    }
    if pair.on_topic_votes is not None:
        record["on_topic_votes"] = dict(sorted(pair.on_topic_votes.items()))
    return record


def write_pairs(filepath: str, pairs: Sequence[ExchangePair]) -> int:
    """Write pairs as extracted-pair JSONL."""
    return write_jsonl(filepath, (pair_to_record(pair) for pair in pairs))


def load_pairs(filepath: str) -> List[ExchangePair]:
    """
    Read extracted-pair JSONL.

    `conversation_id`, `s_turn`, `t_turn` and `context_roles` are optional.
    Duplicate pair ids are rejected.
    """
    pairs = []
    seen = set()
    for line_num, record in read_jsonl(filepath):
        try:
            pair_id = str(record['id'])
            s_text, t_text = record['s'], record['t']
        except KeyError as e:
            raise DataError(f"missing field {e}", filepath, line_num) from e
        if pair_id in seen:
            raise DataError(f"duplicate pair id '{pair_id}'", filepath, line_num)
        seen.add(pair_id)

        s_turn = int(record.get('s_turn', 0))
        t_turn = int(record.get('t_turn', s_turn + 1))
        context_texts = record.get('context') or []
        context_roles = record.get('context_roles') or [None] * len(context_texts)
        if len(context_roles) != len(context_texts):
            raise DataError("context_roles length differs from context", filepath, line_num)
        try:
            context = tuple(
                Utterance(role, text, max(0, s_turn - len(context_texts) + i))
                for i, (role, text) in enumerate(zip(context_roles, context_texts))
            )
            pairs.append(ExchangePair(
                id=pair_id,
                source=str(record.get('source') or CORPUS_SETTINGS['default_source']),
                s=Utterance(STUDENT, s_text, s_turn),
                t=Utterance(TEACHER, t_text, t_turn),
                context=context,
                conversation_id=str(record.get('conversation_id') or conversation_of(pair_id)),
                on_topic_votes=record.get('on_topic_votes'),
            ))
        except ValueError as e:
            raise DataError(str(e), filepath, line_num) from e
    logger.info("Loaded %d pair(s) from %s", len(pairs), filepath)
    return pairs


# --- Annotations ---

def _parse_bool(value: str, filepath: str, line_num: int) -> bool:
    lowered = value.strip().lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    raise DataError(f"on_topic must be true or false, got '{value}'", filepath, line_num)


def load_annotations(filepath: str) -> List[RaterJudgment]:
    """
    Read rater judgments from CSV `rater_id,pair_id,on_topic,level`.

    Level strings low/mid/high map to 0/1/2. Off-topic rows carry no level.

    Raises:
        DataError: Unknown level, missing level on an on-topic row, or a
            duplicate (rater_id, pair_id)
    """
    judgments = []
    seen = set()
    for line_num, row in read_csv_rows(filepath, ANNOTATION_COLUMNS):
        key = (row['rater_id'], row['pair_id'])
        if key in seen:
            raise DataError(f"duplicate judgment for rater '{key[0]}' and pair '{key[1]}'", filepath, line_num)
        seen.add(key)

        on_topic = _parse_bool(row['on_topic'], filepath, line_num)
        level_name = row['level'].lower()
        level = None
        if on_topic:
            if level_name not in LEVELS:
                raise DataError(f"unknown level '{row['level']}' (expected low, mid or high)", filepath, line_num)
            level = LEVELS[level_name]
        elif level_name and level_name not in LEVELS:
            raise DataError(f"unknown level '{row['level']}' (expected low, mid or high)", filepath, line_num)
        judgments.append(RaterJudgment(row['rater_id'], row['pair_id'], on_topic, level))
    logger.info("Loaded %d judgment(s) from %s", len(judgments), filepath)
    return judgments


def off_topic_pairs(judgments: Sequence[RaterJudgment]) -> set:
    """Pair ids with at least one off-topic vote."""
    return {j.pair_id for j in judgments if not j.on_topic}


def zscore_judgments(judgments: Sequence[RaterJudgment]) -> Dict[Tuple[str, str], float]:
    """
    Z-score each rater's levels over their retained judgments.

    Pairs with any off-topic vote are removed first. Standard deviations use
    n - 1. A rater without variance (or with a single judgment) gets z = 0.

    Returns:
        dict: (rater_id, pair_id) -> z-score
    """
    excluded = off_topic_pairs(judgments)
    by_rater: Dict[str, List[RaterJudgment]] = defaultdict(list)
    for judgment in judgments:
        if judgment.pair_id not in excluded:
            by_rater[judgment.rater_id].append(judgment)

    zscores = {}
    for rater_id in sorted(by_rater):
        rated = by_rater[rater_id]
        levels = np.asarray([j.level for j in rated], dtype=np.float64)
        sd = float(np.std(levels, ddof=1)) if len(levels) > 1 else 0.0
        if sd == 0.0:
            logger.warning("Rater '%s' has no variance over %d judgment(s); z-scores set to 0",
                           rater_id, len(levels))
            z = np.zeros_like(levels)
        else:
            z = (levels - levels.mean()) / sd
        for judgment, value in zip(rated, z):
            zscores[(rater_id, judgment.pair_id)] = float(value)
    return zscores


def aggregate_labels(judgments: Sequence[RaterJudgment]) -> List[GoldLabel]:
    """
    Average per-rater z-scores into one gold label per retained pair.

    Returns:
        list: GoldLabel objects sorted by pair id
    """
    by_pair: Dict[str, List[float]] = defaultdict(list)
    for (_, pair_id), value in zscore_judgments(judgments).items():
        by_pair[pair_id].append(value)
    labels = [GoldLabel(pair_id, float(np.mean(values)), len(values))
              for pair_id, values in sorted(by_pair.items())]
    logger.info("Aggregated %d gold label(s); %d pair(s) excluded as off-topic",
                len(labels), len(off_topic_pairs(judgments)))
    return labels


def rating_counts(judgments: Sequence[RaterJudgment]) -> Tuple[List[str], np.ndarray]:
    """
    Items x {low, mid, high} count matrix over retained pairs.

    Only pairs rated by the most common number of raters are kept, so the
    matrix has a constant row sum.

    Returns:
        tuple: (pair_ids, counts)
    """
    excluded = off_topic_pairs(judgments)
    counts: Dict[str, np.ndarray] = {}
    for judgment in judgments:
        if judgment.pair_id in excluded:
            continue
        row = counts.setdefault(judgment.pair_id, np.zeros(len(LEVELS), dtype=np.int64))
        row[judgment.level] += 1
    if not counts:
        return [], np.zeros((0, len(LEVELS)), dtype=np.int64)

    totals = Counter(int(row.sum()) for row in counts.values())
    raters_per_item = totals.most_common(1)[0][0]
    pair_ids = sorted(pid for pid, row in counts.items() if row.sum() == raters_per_item)
    if len(pair_ids) < len(counts):
        logger.warning("Kept %d of %d item(s) rated by exactly %d raters",
                       len(pair_ids), len(counts), raters_per_item)
    return pair_ids, np.vstack([counts[pid] for pid in pair_ids])


# --- Gold Labels and Z-score Files ---

def write_gold_labels(filepath: str, labels: Sequence[GoldLabel]) -> None:
    frame = pd.DataFrame([(l.pair_id, l.value, l.n_raters) for l in labels], columns=list(GOLD_COLUMNS))
    write_csv_table(filepath, frame, SIMILARITY_SETTINGS['csv_float_format'])


def load_gold_labels(filepath: str) -> Dict[str, GoldLabel]:
    """Read gold labels CSV `pair_id,value[,n_raters]` keyed by pair id."""
    labels = {}
    for line_num, row in read_csv_rows(filepath, ("pair_id", "value")):
        try:
            value = float(row['value'])
            n_raters = int(row.get('n_raters') or 1)
            label = GoldLabel(row['pair_id'], value, n_raters)
        except ValueError as e:
            raise DataError(f"invalid gold label: {e}", filepath, line_num) from e
        if label.pair_id in labels:
            raise DataError(f"duplicate pair id '{label.pair_id}'", filepath, line_num)
        labels[label.pair_id] = label
    return labels


def write_zscores(filepath: str, zscores: Dict[Tuple[str, str], float]) -> None:
    """Write the agreement CSV `rater_id,pair_id,z`."""
    rows = [(rater, pair, value) for (rater, pair), value in sorted(zscores.items())]
    write_csv_table(filepath, pd.DataFrame(rows, columns=list(ZSCORE_COLUMNS)),
                    SIMILARITY_SETTINGS['csv_float_format'])


def load_zscores(filepath: str) -> Dict[Tuple[str, str], float]:
    zscores = {}
    for line_num, row in read_csv_rows(filepath, ZSCORE_COLUMNS):
        key = (row['rater_id'], row['pair_id'])
        if key in zscores:
            raise DataError(f"duplicate z-score for rater '{key[0]}' and pair '{key[1]}'", filepath, line_num)
        try:
            zscores[key] = float(row['z'])
        except ValueError as e:
            raise DataError(f"invalid z-score '{row['z']}'", filepath, line_num) from e
    return zscores


def zscore_matrix(zscores: Dict[Tuple[str, str], float]) -> Tuple[List[str], List[str], np.ndarray]:
    """
    Pivot (rater, pair) z-scores into a raters x items matrix, NaN where missing.

    Returns:
        tuple: (rater_ids, pair_ids, matrix)
    """
    raters = sorted({rater for rater, _ in zscores})
    items = sorted({pair for _, pair in zscores})
    rater_index = {rater: i for i, rater in enumerate(raters)}
    item_index = {pair: j for j, pair in enumerate(items)}
    matrix = np.full((len(raters), len(items)), np.nan)
    for (rater, pair), value in zscores.items():
        matrix[rater_index[rater], item_index[pair]] = value
    return raters, items, matrix
