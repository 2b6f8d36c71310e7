import json

import numpy as np
import pytest

from conftest import make_pair, write_lines
from common_utils import DataError
from corpus import (aggregate_labels, candidate_pairs, drop_small_conversations, extract_pairs, filter_pairs,
                    load_annotations, load_gold_labels, load_pairs, load_transcripts, load_zscores,
                    off_topic_pairs, rating_counts, write_gold_labels, write_pairs, write_zscores,
                    zscore_judgments, zscore_matrix, ExchangePair, GoldLabel, RaterJudgment, Utterance)


def test_extract_applies_length_and_inaudible_filters(transcript_file):
    pairs = extract_pairs(load_transcripts(transcript_file), min_s_tokens=5)
    assert [pair.id for pair in pairs] == ["t1_1", "t2_0"]
    assert pairs[0].t.text == "Yes, multiply four times three."
    assert pairs[0].conversation_id == "t1"
    assert [utt.turn_index for utt in pairs[0].context] == [0]


def test_extract_with_low_threshold_keeps_short_turns(transcript_file):
    pairs = extract_pairs(load_transcripts(transcript_file), min_s_tokens=1)
    assert [pair.id for pair in pairs] == ["t1_1", "t1_3", "t2_0"]
    assert [utt.turn_index for utt in pairs[1].context] == [1, 2]


def test_extract_is_idempotent(transcript_file):
    pairs = extract_pairs(load_transcripts(transcript_file))
    assert filter_pairs(pairs) == pairs


def test_raising_min_s_tokens_never_adds_pairs(transcript_file):
    transcripts = load_transcripts(transcript_file)
    counts = [len(extract_pairs(transcripts, min_s_tokens=n)) for n in range(0, 12)]
    assert all(later <= earlier for earlier, later in zip(counts, counts[1:]))
    assert counts[0] == 3 and counts[-1] == 0


def test_inaudible_marker_is_case_sensitive():
    pair = make_pair("x_0", "we add one and one and get two [inaudible]", "Okay.")
    assert filter_pairs([pair], 5, "[Inaudible]") == [pair]
    assert filter_pairs([pair], 5, "[inaudible]") == []


def test_candidates_require_strict_adjacency(tmp_path):
    path = write_lines(tmp_path / "t.jsonl", [
        json.dumps({"transcript_id": "a", "turn": 0, "role": "student", "text": "one two three four five"}),
        json.dumps({"transcript_id": "a", "turn": 1, "role": "student", "text": "six seven eight nine ten"}),
        json.dumps({"transcript_id": "a", "turn": 2, "role": "Teacher ", "text": "Right."}),
    ])
    (transcript,) = load_transcripts(path)
    assert [pair.id for pair in candidate_pairs(transcript)] == ["a_1"]


def test_transcripts_sorted_by_turn_and_csv_format(tmp_path):
    path = write_lines(tmp_path / "t.csv", [
        "transcript_id,turn,role,text,source",
        "a,1,teacher,Good.,swbd",
        "a,0,student,I added them.,swbd",
    ])
    (transcript,) = load_transcripts(path, fmt="csv")
    assert transcript.source == "swbd"
    assert [utt.turn_index for utt in transcript.utterances] == [0, 1]


@pytest.mark.parametrize("row, message", [
    ({"transcript_id": "a", "turn": 0, "role": "parent", "text": "hi"}, "unknown speaker role 'parent'"),
    ({"transcript_id": "a", "turn": "x", "role": "student", "text": "hi"}, "turn must be an integer"),
    ({"transcript_id": "a", "turn": 0, "role": "student", "text": "  "}, "empty text"),
    ({"transcript_id": "a", "role": "student", "text": "hi"}, "missing field"),
])
def test_transcript_errors_carry_line_numbers(tmp_path, row, message):
    path = write_lines(tmp_path / "t.jsonl", [
        json.dumps({"transcript_id": "a", "turn": 5, "role": "teacher", "text": "fine"}),
        json.dumps(row),
    ])
    with pytest.raises(DataError, match=message) as excinfo:
        load_transcripts(path)
    assert str(excinfo.value).startswith(f"{path}:2:")


def test_duplicate_turn_is_an_error(tmp_path):
    row = json.dumps({"transcript_id": "a", "turn": 0, "role": "student", "text": "hi"})
    path = write_lines(tmp_path / "t.jsonl", [row, row])
    with pytest.raises(DataError, match="duplicate turn 0"):
        load_transcripts(path)


def test_pair_requires_roles():
    with pytest.raises(ValueError):
        ExchangePair("p_0", "ncte", Utterance("teacher", "a", 0), Utterance("teacher", "b", 1))


def test_pairs_round_trip(tmp_path, transcript_file):
    pairs = extract_pairs(load_transcripts(transcript_file))
    path = str(tmp_path / "pairs.jsonl")
    assert write_pairs(path, pairs) == 2
    loaded = load_pairs(path)
    assert loaded == pairs


def test_load_pairs_defaults_optional_keys(tmp_path):
    path = write_lines(tmp_path / "p.jsonl", [json.dumps({"id": "conv7_12", "s": "a b c", "t": "d",
                                                          "context": ["earlier"]})])
    (pair,) = load_pairs(path)
    assert pair.conversation_id == "conv7"
    assert pair.source == "ncte"
    assert pair.context[0].speaker_role is None


def test_load_pairs_rejects_duplicates(tmp_path):
    line = json.dumps({"id": "a_0", "s": "x", "t": "y"})
    path = write_lines(tmp_path / "p.jsonl", [line, line])
    with pytest.raises(DataError, match="duplicate pair id"):
        load_pairs(path)


def test_drop_small_conversations(small_pairs):
    kept = drop_small_conversations(small_pairs[:6], 3)
    assert {pair.conversation_id for pair in kept} == {"c0"}
    assert drop_small_conversations(small_pairs, 1) == small_pairs


def test_zscores_and_gold_labels(annotation_file):
    judgments = load_annotations(annotation_file)
    assert off_topic_pairs(judgments) == {"p4"}

    z = zscore_judgments(judgments)
    assert z[("r1", "p1")] == pytest.approx(-1.0)
    assert z[("r1", "p3")] == pytest.approx(1.0)
    assert ("r1", "p4") not in z

    labels = aggregate_labels(judgments)
    assert [label.pair_id for label in labels] == ["p1", "p2", "p3"]
    assert all(label.n_raters == 3 for label in labels)
    assert labels[1].value == pytest.approx(0.0, abs=1e-12)
    assert labels[0].value == pytest.approx(-labels[2].value)


def test_constant_rater_gets_zero(tmp_path):
    path = write_lines(tmp_path / "a.csv", [
        "rater_id,pair_id,on_topic,level", "r1,p1,true,mid", "r1,p2,true,mid"])
    assert set(zscore_judgments(load_annotations(path)).values()) == {0.0}


def test_each_raters_zscores_are_standardized():
    rng = np.random.default_rng(5)
    judgments = []
    for rater in ("r1", "r2", "r3"):
        for i in range(30):
            if rater == "r2" and i % 7 == 0:
                judgments.append(RaterJudgment(rater, f"p{i}", False))
            else:
                judgments.append(RaterJudgment(rater, f"p{i}", True, int(rng.integers(0, 3))))
    z = zscore_judgments(judgments)
    for rater in ("r1", "r2", "r3"):
        values = np.array([value for (rater_id, _), value in z.items() if rater_id == rater])
        assert len(values) == 25
        assert values.mean() == pytest.approx(0.0, abs=1e-12)
        assert values.std(ddof=1) == pytest.approx(1.0, abs=1e-12)


def test_rating_counts(annotation_file):
    pair_ids, counts = rating_counts(load_annotations(annotation_file))
    assert pair_ids == ["p1", "p2", "p3"]
    assert counts.tolist() == [[2, 1, 0], [0, 2, 1], [0, 0, 3]]


@pytest.mark.parametrize("row, message", [
    ("r1,p1,true,extreme", "unknown level"),
    ("r1,p1,true,", "unknown level"),
    ("r1,p1,maybe,low", "on_topic must be true or false"),
])
def test_annotation_errors(tmp_path, row, message):
    path = write_lines(tmp_path / "a.csv", ["rater_id,pair_id,on_topic,level", row])
    with pytest.raises(DataError, match=message):
        load_annotations(path)


def test_duplicate_judgment(tmp_path):
    path = write_lines(tmp_path / "a.csv", ["rater_id,pair_id,on_topic,level", "r1,p1,true,low", "r1,p1,true,mid"])
    with pytest.raises(DataError, match="duplicate judgment"):
        load_annotations(path)


def test_judgment_invariants():
    with pytest.raises(ValueError):
        RaterJudgment("r", "p", True, None)
    with pytest.raises(ValueError):
        RaterJudgment("r", "p", False, 1)
    with pytest.raises(ValueError):
        GoldLabel("p", float("nan"), 1)


def test_gold_and_zscore_files(tmp_path, annotation_file):
    judgments = load_annotations(annotation_file)
    gold_path = str(tmp_path / "gold.csv")
    write_gold_labels(gold_path, aggregate_labels(judgments))
    gold = load_gold_labels(gold_path)
    assert sorted(gold) == ["p1", "p2", "p3"]
    assert gold["p1"].n_raters == 3

    z_path = str(tmp_path / "z.csv")
    write_zscores(z_path, zscore_judgments(judgments))
    raters, items, matrix = zscore_matrix(load_zscores(z_path))
    assert raters == ["r1", "r2", "r3"]
    assert items == ["p1", "p2", "p3"]
    assert not np.isnan(matrix).any()
