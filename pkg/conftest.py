"""
Shared pytest fixtures: module paths plus tiny on-disk corpora.
"""

import os
import sys
import json

import pytest

ROOT = os.path.dirname(os.path.abspath(__file__))
for _path in (os.path.join(ROOT, 'scripts'), os.path.join(ROOT, 'lib'), ROOT):
    if _path not in sys.path:
        sys.path.insert(0, _path)

from corpus import STUDENT, TEACHER, ExchangePair, Utterance  # noqa: E402


def make_pair(pair_id, s_text, t_text, source="ncte", turn=0):
    """ExchangePair with default roles and turn indices."""
    return ExchangePair(id=pair_id, source=source, s=Utterance(STUDENT, s_text, turn),
                        t=Utterance(TEACHER, t_text, turn + 1))


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return str(path)


@pytest.fixture
def vector_file(tmp_path):
    """Three-dimensional toy word vectors."""
    return write_lines(tmp_path / "vectors.txt", [
        "cat 1.0 0.0 0.0",
        "dog 0.8 0.6 0.0",
        "sat 0.0 1.0 0.0",
        "mat 0.0 0.0 1.0",
        "rug 0.0 0.6 0.8",
    ])


@pytest.fixture
def transcript_file(tmp_path):
    """Two transcripts in the JSONL transcript format."""
    rows = [
        ("t1", 0, "teacher", "What is four times three?"),
        ("t1", 1, "student", "You would multiply four times three to get twelve."),
        ("t1", 2, "teacher", "Yes, multiply four times three."),
        ("t1", 3, "student", "Twelve."),
        ("t1", 4, "teacher", "Good."),
        ("t1", 5, "student", "I think it is [Inaudible] the answer is twelve."),
        ("t1", 6, "teacher", "Say that again?"),
        ("t2", 0, "student", "The fraction one half is bigger than one third."),
        ("t2", 1, "teacher", "Why is one half bigger?"),
    ]
    return write_lines(tmp_path / "transcripts.jsonl", [
        json.dumps({"transcript_id": tid, "turn": turn, "role": role, "text": text})
        for tid, turn, role, text in rows
    ])


@pytest.fixture
def annotation_file(tmp_path):
    """Three raters over four pairs; p4 has one off-topic vote."""
    rows = [
        "rater_id,pair_id,on_topic,level",
        "r1,p1,true,low", "r1,p2,true,mid", "r1,p3,true,high", "r1,p4,true,high",
        "r2,p1,true,low", "r2,p2,true,high", "r2,p3,true,high", "r2,p4,false,",
        "r3,p1,true,mid", "r3,p2,true,mid", "r3,p3,true,high", "r3,p4,true,low",
    ]
    return write_lines(tmp_path / "annotations.csv", rows)


@pytest.fixture
def small_pairs():
    """Twelve same-source pairs with distinct replies."""
    subjects = ["fractions", "decimals", "angles", "triangles", "squares", "circles",
                "numbers", "graphs", "lines", "points", "areas", "volumes"]
    return [
        make_pair(f"c{i // 4}_{2 * (i % 4)}",
                  f"I think the {word} problem needs us to add both parts together",
                  f"Right, the {word} problem adds both parts." if i % 2 else f"Tell me more about {word}.",
                  turn=2 * (i % 4))
        for i, word in enumerate(subjects)
    ]
