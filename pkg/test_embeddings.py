import json

import numpy as np
import pytest

from conftest import write_lines
from common_utils import DataError
from embeddings import cosine, inner, load_sentence_vectors, load_word_vectors, sentence_vector


def test_load_word_vectors(vector_file):
    store = load_word_vectors(vector_file)
    assert store.dim == 3
    assert len(store) == 5
    assert "cat" in store and "bird" not in store
    np.testing.assert_array_equal(store.get("dog"), [0.8, 0.6, 0.0])


def test_word2vec_header_is_skipped(tmp_path):
    store = load_word_vectors(write_lines(tmp_path / "v.txt", ["2 2", "a 1 0", "b 0 1"]))
    assert len(store) == 2 and store.dim == 2


def test_save_and_reload(tmp_path, vector_file):
    store = load_word_vectors(vector_file)
    path = str(tmp_path / "copy.txt")
    store.save(path)
    again = load_word_vectors(path)
    assert sorted(again.table) == sorted(store.table)
    for token, vector in store.table.items():
        np.testing.assert_array_equal(again.get(token), vector)


@pytest.mark.parametrize("lines, message, line", [
    (["a 1 2", "b 1"], "dimension mismatch", 2),
    (["a 1 2", "a 3 4"], "duplicate token 'a'", 2),
    (["a 1 x"], "invalid float", 1),
])
def test_word_vector_errors(tmp_path, lines, message, line):
    path = write_lines(tmp_path / "v.txt", lines)
    with pytest.raises(DataError, match=message) as excinfo:
        load_word_vectors(path)
    assert excinfo.value.line == line


def test_empty_vector_file(tmp_path):
    path = tmp_path / "v.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="no vectors"):
        load_word_vectors(str(path))


def test_missing_vector_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_word_vectors(str(tmp_path / "absent.txt"))


def test_sentence_vectors(tmp_path):
    path = write_lines(tmp_path / "s.jsonl", [
        json.dumps({"pair_id": "p1", "side": "s", "vector": [1.0, 0.0]}),
        json.dumps({"pair_id": "p1", "side": "t", "vector": [0.0, 2.0]}),
    ])
    store = load_sentence_vectors(path)
    assert len(store) == 2
    assert store.get("p1", "t").tolist() == [0.0, 2.0]
    assert store.get("p2", "s") is None


@pytest.mark.parametrize("record, message", [
    ({"pair_id": "p1", "side": "x", "vector": [1.0, 0.0]}, "side must be"),
    ({"pair_id": "p1", "side": "t", "vector": [1.0]}, "dimension mismatch"),
    ({"pair_id": "p1", "side": "s", "vector": [1.0, 0.0]}, "duplicate vector"),
    ({"pair_id": "p1", "vector": [1.0, 0.0]}, "missing field"),
])
def test_sentence_vector_errors(tmp_path, record, message):
    path = write_lines(tmp_path / "s.jsonl", [
        json.dumps({"pair_id": "p1", "side": "s", "vector": [1.0, 0.0]}),
        json.dumps(record),
    ])
    with pytest.raises(DataError, match=message):
        load_sentence_vectors(path)


def test_sentence_vector_is_mean_of_known_tokens(vector_file):
    store = load_word_vectors(vector_file)
    np.testing.assert_allclose(sentence_vector(store, ["cat", "sat", "bird"]), [0.5, 0.5, 0.0])
    assert sentence_vector(store, ["bird"]) is None


def test_sentence_vector_ignores_token_order(vector_file):
    store = load_word_vectors(vector_file)
    np.testing.assert_allclose(sentence_vector(store, ["cat", "rug", "sat"]),
                               sentence_vector(store, ["sat", "cat", "rug"]), atol=1e-15)


def test_cosine():
    assert cosine(np.array([1.0, 2.0]), np.array([2.0, 1.0])) == pytest.approx(0.8, abs=1e-12)
    assert cosine(np.array([1.0, 1.0]), np.array([3.0, 3.0])) == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0.0]), np.array([-1.0, 0.0])) == -1.0
    with pytest.raises(ValueError, match="zero vector"):
        cosine(np.zeros(2), np.ones(2))
    with pytest.raises(ValueError, match="lengths differ"):
        cosine(np.ones(2), np.ones(3))


def test_cosine_is_symmetric_and_scale_free():
    rng = np.random.default_rng(8)
    for _ in range(50):
        u, v = rng.normal(size=6), rng.normal(size=6)
        alpha = float(rng.uniform(0.1, 10.0))
        assert cosine(u, u) == pytest.approx(1.0, abs=1e-12)
        assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-15)
        assert cosine(alpha * u, v) == pytest.approx(cosine(u, v), abs=1e-12)


def test_inner():
    assert inner(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0
