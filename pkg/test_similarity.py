import math
from collections import Counter
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from nltk.translate.bleu_score import modified_precision, sentence_bleu

from conftest import make_pair
from embeddings import load_word_vectors
from similarity import (MetricId, ScoreTable, ScoringConfig, bleu, glove_align, glove_utt, jaccard, lcs_length,
                        lcs_norm, parse_metrics, pct_s_in_t, pct_t_in_s, score_all, score_pair)
from task_executor import TaskExecutor
from textprep import TokenSequence


def seq(tokens):
    return TokenSequence(tuple(str(tok) for tok in tokens))


def subsequence_lcs(s, t):
    """Length of the longest subsequence of s found in order inside t."""
    def occurs_in(candidate):
        position = 0
        for token in candidate:
            try:
                position = t.index(token, position) + 1
            except ValueError:
                return False
        return True

    for size in range(len(s), 0, -1):
        if any(occurs_in([s[i] for i in idx]) for idx in combinations(range(len(s)), size)):
            return size
    return 0


def oracle_bleu(reference, hypothesis):
    """Exact-fraction BLEU with epsilon smoothing and S-based brevity penalty."""
    orders = min(4, len(hypothesis))
    logs = []
    for n in range(1, orders + 1):
        hyp = Counter(tuple(hypothesis[i:i + n]) for i in range(len(hypothesis) - n + 1))
        ref = Counter(tuple(reference[i:i + n]) for i in range(len(reference) - n + 1))
        precision = Fraction(sum(min(c, ref[g]) for g, c in hyp.items()), sum(hyp.values()))
        logs.append(math.log(precision) if precision else math.log(1e-9))
    penalty = min(0.0, 1.0 - len(reference) / len(hypothesis))
    return math.exp(penalty + sum(logs) / orders)


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        s = [str(tok) for tok in rng.choice(list("abcde"), size=int(rng.integers(1, 9)))]
        t = [str(tok) for tok in rng.choice(list("abcde"), size=int(rng.integers(1, 9)))]
        yield s, t


def test_token_metrics_match_oracles():
    for s, t in random_pairs(1000):
        S, T = seq(s), seq(t)
        assert lcs_norm(S, T) == subsequence_lcs(s, t) / len(s)
        assert pct_s_in_t(S, T) == sum(tok in t for tok in s) / len(s)
        assert pct_t_in_s(S, T) == sum(tok in s for tok in t) / len(t)
        assert jaccard(S, T) == len(set(s) & set(t)) / len(set(s) | set(t))
        assert bleu(S, T) == pytest.approx(oracle_bleu(s, t), abs=1e-9)


def test_identity_and_disjoint_bounds():
    rng = np.random.default_rng(1)
    for case in range(50):
        s = seq(rng.choice(list("abcde"), size=int(rng.integers(1, 9))))
        if case % 2 == 0:
            t = s
            expected = 1.0
        else:
            t = seq(rng.choice(list("vwxyz"), size=int(rng.integers(1, 9))))
            expected = 0.0
        for metric in (lcs_norm, pct_s_in_t, pct_t_in_s, jaccard):
            assert metric(s, t) == expected
        if expected:
            assert bleu(s, t) == pytest.approx(1.0, abs=1e-12)
        else:
            assert bleu(s, t) <= 1e-2


def test_lcs_examples():
    assert lcs_length("abcbdab", "bdcaba") == 4
    assert lcs_length("", "abc") == 0
    with pytest.raises(ValueError):
        lcs_norm(seq([]), seq(["a"]))


def test_empty_sequences_are_misses():
    empty, some = seq([]), seq(["a"])
    assert pct_s_in_t(empty, some) is None
    assert pct_t_in_s(some, empty) is None
    assert jaccard(empty, empty) is None
    assert bleu(some, empty) is None


def test_bleu_uses_available_orders_for_short_hypotheses():
    # two-token hypothesis: only unigram and bigram precisions
    assert bleu(seq("a b".split()), seq("a b".split())) == 1.0
    assert bleu(seq("a b c d".split()), seq("a b".split())) == pytest.approx(math.exp(1 - 2))


def test_bleu_matches_nltk_when_every_order_matches():
    checked = 0
    for s, t in random_pairs(400, seed=4):
        orders = min(4, len(t))
        if any(modified_precision([s], t, n) == 0 for n in range(1, orders + 1)):
            continue
        expected = sentence_bleu([s], t, weights=(1.0 / orders,) * orders)
        assert bleu(seq(s), seq(t)) == pytest.approx(expected, abs=1e-12)
        checked += 1
    assert checked >= 50
    assert bleu(seq("the cat sat on the mat".split()), seq("the cat sat on the mat".split())) == pytest.approx(
        sentence_bleu([["the", "cat", "sat", "on", "the", "mat"]], ["the", "cat", "sat", "on", "the", "mat"]))


def test_glove_align_and_utt(vector_file):
    store = load_word_vectors(vector_file)
    assert glove_align(store, seq(["cat", "sat"]), seq(["dog", "mat"])) == pytest.approx(0.7)
    assert glove_align(store, seq(["cat", "bird"]), seq(["dog"])) == pytest.approx(0.8)
    assert glove_align(store, seq(["bird"]), seq(["dog"])) is None
    assert glove_utt(store, seq(["cat", "sat"]), seq(["dog", "mat"])) == pytest.approx(0.7)


def test_glove_align_is_directional(vector_file):
    store = load_word_vectors(vector_file)
    forward = glove_align(store, seq(["cat", "sat"]), seq(["dog", "mat"]))
    backward = glove_align(store, seq(["dog", "mat"]), seq(["cat", "sat"]))
    assert forward == pytest.approx(0.7)
    assert backward == pytest.approx(0.4)


def test_pct_s_in_t_never_drops_when_t_grows():
    rng = np.random.default_rng(3)
    for s, t in random_pairs(300, seed=2):
        before = pct_s_in_t(seq(s), seq(t))
        extra = [str(tok) for tok in rng.choice(list("abcdef"), size=int(rng.integers(1, 4)))]
        assert pct_s_in_t(seq(s), seq(t + extra)) >= before
        assert pct_s_in_t(seq(s), seq(t + [t[0]])) == before


def test_metric_ids():
    assert MetricId.parse("bleu").profile.spec == "PST"
    assert MetricId.parse("bleu").column == "bleu"
    assert MetricId.parse("bleu:PST").column == "bleu"
    assert MetricId.parse("bleu:PS").column == "bleu:PS"
    assert str(MetricId.parse("pct_s_in_t")) == "pct_s_in_t♠⊕†"
    assert MetricId.parse("lcs").profile.spec == ""
    with pytest.raises(ValueError, match="unknown metric"):
        MetricId.parse("rouge")
    with pytest.raises(ValueError, match="takes no preprocessing profile"):
        MetricId.parse("nuc_prob:P")
    with pytest.raises(ValueError, match="requested twice"):
        parse_metrics(["bleu", "bleu:PST"])


def test_score_pair_uses_metric_profiles():
    pair = make_pair("a_0", "The students multiplied fractions.", "Fractions are multiplied by students!")
    row = score_pair(pair, ScoringConfig(parse_metrics(["pct_s_in_t", "pct_s_in_t:P"])))
    assert row["pct_s_in_t"] == 1.0
    # stopwords kept: "the" is not in T
    assert row["pct_s_in_t:P"] == pytest.approx(3 / 4)


def test_score_all_counts_missing_cells():
    pairs = [make_pair("a_0", "?!", "ok then"), make_pair("a_2", "we added it", "added it")]
    table = score_all(pairs, ScoringConfig(parse_metrics(["lcs", "pct_s_in_t"])))
    assert table.get("a_0", "pct_s_in_t") is None
    assert table.get("a_0", "lcs") == 0.0
    assert table.warnings["pct_s_in_t"] == 1
    assert table.complete_rows(["pct_s_in_t"]) == ["a_2"]


def test_score_all_rejects_duplicate_ids():
    pair = make_pair("a_0", "one two", "three")
    with pytest.raises(ValueError, match="unique"):
        score_all([pair, pair], ScoringConfig(parse_metrics(["lcs"])))


def test_validate_reports_missing_inputs():
    with pytest.raises(ValueError, match="word vectors"):
        ScoringConfig(parse_metrics(["glove_align"])).validate()
    with pytest.raises(ValueError, match="sentence vectors"):
        ScoringConfig(parse_metrics(["sent_cosine"])).validate()
    with pytest.raises(ValueError, match="classifier params"):
        ScoringConfig(parse_metrics(["nuc_prob"])).validate()
    with pytest.raises(ValueError, match="external score table"):
        ScoringConfig(parse_metrics(["pjsd"])).validate()


def test_external_scores_are_copied():
    external = ScoreTable(["pjsd"])
    external.add_row("a_0", {"pjsd": 0.25})
    pairs = [make_pair("a_0", "one two", "three"), make_pair("a_2", "four", "five")]
    table = score_all(pairs, ScoringConfig(parse_metrics(["pjsd"]), external=external))
    assert table.get("a_0", "pjsd") == 0.25
    assert table.get("a_2", "pjsd") is None


def test_scores_do_not_depend_on_workers(small_pairs):
    config = ScoringConfig(parse_metrics(["lcs", "pct_s_in_t", "pct_t_in_s", "jaccard", "bleu"]))
    serial = score_all(small_pairs, config)
    with TaskExecutor(4) as executor:
        parallel = score_all(small_pairs, config, executor)
    assert serial.to_frame().equals(parallel.to_frame())


def test_score_table_csv_round_trip(tmp_path):
    table = ScoreTable(["a", "b"])
    table.add_row("p2", {"a": 0.5, "b": None})
    table.add_row("p1", {"a": float("nan"), "b": 1 / 3})
    path = tmp_path / "scores.csv"
    table.to_csv(str(path))
    assert path.read_text(encoding="utf-8") == "pair_id,a,b\np1,,0.333333333333\np2,0.5,\n"

    again = ScoreTable.from_csv(str(path))
    assert again.columns == ["a", "b"]
    assert again.get("p2", "a") == 0.5
    assert again.get("p2", "b") is None
    assert again.present("a") == {"p2": 0.5}


def test_score_table_merge():
    left, right = ScoreTable(["a"]), ScoreTable(["b"])
    left.add_row("p", {"a": 1.0})
    right.add_row("p", {"b": 2.0})
    merged = left.merge(right)
    assert merged.columns == ["a", "b"]
    assert merged.get("p", "b") == 2.0
    with pytest.raises(ValueError, match="both define"):
        merged.merge(left)
    with pytest.raises(KeyError):
        merged.column("c")
