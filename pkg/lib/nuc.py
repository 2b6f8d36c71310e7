"""
Next-utterance classification (NUC) and pointwise Jensen-Shannon divergence.

For each pair the true reply T is contrasted with k replies T' sampled from
other pairs of the same source. A standardized-feature logistic classifier
learns to tell them apart, and its probabilities give two per-pair uptake
scores: the probability itself (nuc_prob) and the divergence estimate
ln 2 - L/2 (pjsd), where L = -ln f(T) - mean ln(1 - f(T')).
"""

import os
import sys
import math
import logging
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from config import CORPUS_SETTINGS, NUC_SETTINGS
from common_utils import (DataError, create_progress_bar, read_json, read_jsonl,
                          stable_hash_int, write_json, write_jsonl)
from textprep import PreprocessProfile, apply_profile, ngrams, tokenize
from similarity import (MetricId, ScoreTable, bleu, glove_align, glove_utt, jaccard,
                        lcs_norm, pct_s_in_t, pct_t_in_s)

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
NEGATIVE_SEPARATOR = "#neg"
PROBABILITY_CLAMP = NUC_SETTINGS['probability_clamp']

METRIC_FEATURES = ("pct_s_in_t", "pct_t_in_s", "jaccard", "bleu", "lcs_norm", "glove_align", "glove_utt")
DEFAULT_FEATURE_NAMES = METRIC_FEATURES + ("log_len_s", "log_len_t", "unigram_overlap") + tuple(
    f"missing_{name}" for name in METRIC_FEATURES)


@dataclass(frozen=True)
class NucExample:
    """
    One labeled (s, t) classification instance.

    `pair_id` is the originating pair id for positives and
    `<pair_id>#neg<j>` for the j-th sampled negative.
    """
    pair_id: str
    s: str
    t: str
    z: int
    source: str

    def __post_init__(self):
        if self.z not in (0, 1):
            raise ValueError(f"label z must be 0 or 1, got {self.z!r}")

    @property
    def origin(self) -> str:
        return origin_pair_id(self.pair_id)


@dataclass(frozen=True)
class FeatureSchema:
    schema_id: str
    names: Tuple[str, ...]


DEFAULT_SCHEMA = FeatureSchema(NUC_SETTINGS['feature_schema_id'], DEFAULT_FEATURE_NAMES)


@dataclass
class FeatureVector:
    values: np.ndarray
    feature_names: Tuple[str, ...]

    def __post_init__(self):
        if len(self.values) != len(self.feature_names):
            raise ValueError("feature vector length does not match its schema")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector contains non-finite values")


@dataclass(frozen=True)
class PJsdEstimate:
    value: float
    n_negatives: int
    f_true: float
    mean_log_one_minus_f_neg: float


@dataclass
class ClassifierParams:
    """Logistic weights over standardized features plus the standardization stats."""
    weights: np.ndarray
    bias: float
    feature_schema_id: str
    feature_names: Tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.feature_names = tuple(self.feature_names)
        n = len(self.feature_names)
        if not (len(self.weights) == len(self.mean) == len(self.scale) == n):
            raise ValueError(f"classifier params must have {n} weights and standardization entries")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature_schema_id": self.feature_schema_id,
            "feature_names": list(self.feature_names),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "standardization": {"mean": [float(m) for m in self.mean],
                                "scale": [float(s) for s in self.scale]},
            "metadata": self.metadata,
        }

    def save(self, filepath: str) -> None:
        write_json(filepath, self.to_dict())

    @classmethod
    def load(cls, filepath: str) -> "ClassifierParams":
        data = read_json(filepath)
        try:
            return cls(
                weights=data['weights'],
                bias=float(data['bias']),
                feature_schema_id=data['feature_schema_id'],
                feature_names=data['feature_names'],
                mean=data['standardization']['mean'],
                scale=data['standardization']['scale'],
                metadata=data.get('metadata', {}),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"invalid classifier params: {e}", filepath) from e


def origin_pair_id(example_id: str) -> str:
    """Pair id an example (positive or negative) was built from."""
    return example_id.split(NEGATIVE_SEPARATOR, 1)[0]


# --- Negative Sampling ---

def _seeded_rng(seed: int, salt: str, pair_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, stable_hash_int(salt, pair_id)])


def _source_groups(pairs) -> "OrderedDict[str, List]":
    groups: "OrderedDict[str, List]" = OrderedDict()
    for pair in pairs:
        groups.setdefault(pair.source, []).append(pair)
    return groups


def _draw_negatives(pair, group, k: int, rng: np.random.Generator) -> List[str]:
    """k teacher texts from other pairs of the group, uniform without replacement, never equal to T."""
    for _ in range(20):
        picks = rng.choice(len(group), size=k, replace=False)
        if all(group[i].id != pair.id and group[i].t.text != pair.t.text for i in picks):
            return [group[i].t.text for i in picks]
    pool = [other.t.text for other in group if other.id != pair.id and other.t.text != pair.t.text]
    if len(pool) < k:
        raise ValueError(f"source group '{pair.source}' has only {len(pool)} candidate negative(s) "
                         f"for pair '{pair.id}'; need {k}")
    return [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]


def sample_negatives(pairs: Sequence, k: int, seed: int, salt: str = "train",
                     executor=None) -> Dict[str, List[str]]:
    """
    Sample k same-source negative replies per pair.

    Each pair draws from its own generator seeded by (seed, salt, pair id),
    so the result does not depend on the worker count.

    Returns:
        dict: pair id -> list of k negative teacher texts
    """
    if k < 1:
        raise ValueError(f"at least one negative per pair is required, got k={k}")
    groups = _source_groups(pairs)
    for source, group in groups.items():
        if len(group) <= k:
            raise ValueError(f"source group '{source}' has {len(group)} pair(s); need more than k={k}")

    def draw(pair):
        return _draw_negatives(pair, groups[pair.source], k, _seeded_rng(seed, salt, pair.id))

    if executor is not None:
        drawn = executor.map_ordered(draw, pairs, "Sampling negatives")
    else:
        drawn = [draw(pair) for pair in create_progress_bar(pairs, "Sampling negatives")]
    return {pair.id: negatives for pair, negatives in zip(pairs, drawn)}


def build_nuc_dataset(pairs: Sequence, k: int = NUC_SETTINGS['negatives_per_positive'],
                      seed: int = 0, executor=None) -> List[NucExample]:
    """
    Build the NUC dataset: each pair's positive followed by its k negatives.

    Args:
        pairs: ExchangePair list with unique ids
        k (int): Negatives per positive
        seed (int): Global seed

    Returns:
        list: (k + 1) * len(pairs) NucExamples
    """
    negatives = sample_negatives(pairs, k, seed, "train", executor)
    examples = []
    for pair in pairs:
        examples.append(NucExample(pair.id, pair.s.text, pair.t.text, 1, pair.source))
        for j, text in enumerate(negatives[pair.id], 1):
            examples.append(NucExample(f"{pair.id}{NEGATIVE_SEPARATOR}{j}", pair.s.text, text, 0, pair.source))
    logger.info("Built %d NUC example(s) from %d pair(s), k=%d", len(examples), len(pairs), k)
    return examples


def write_nuc_dataset(filepath: str, examples: Sequence[NucExample]) -> int:
    return write_jsonl(filepath, ({"pair_id": e.pair_id, "s": e.s, "t": e.t, "z": e.z, "source": e.source}
                                  for e in examples))


def load_nuc_dataset(filepath: str) -> List[NucExample]:
    examples = []
    for line_num, record in read_jsonl(filepath):
        try:
            examples.append(NucExample(str(record['pair_id']), record['s'], record['t'], int(record['z']),
                                       str(record.get('source') or CORPUS_SETTINGS['default_source'])))
        except KeyError as e:
            raise DataError(f"missing field {e}", filepath, line_num) from e
        except (TypeError, ValueError) as e:
            raise DataError(str(e), filepath, line_num) from e
    return examples


def split_by_pair(items: Sequence, holdout_fraction: float, seed: int) -> Tuple[List, List]:
    """
    Split examples (or pairs) into train/held-out sides by originating pair.

    A positive and its negatives always land on the same side.

    Returns:
        tuple: (train, held_out), each in input order
    """
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError(f"holdout fraction must lie in [0, 1), got {holdout_fraction}")
    if holdout_fraction == 0.0:
        return list(items), []

    def key(item):
        return item.origin if isinstance(item, NucExample) else item.id

    groups = sorted({key(item) for item in items})
    rng = np.random.default_rng([seed, stable_hash_int("holdout")])
    n_held = int(round(holdout_fraction * len(groups)))
    held = {groups[i] for i in rng.permutation(len(groups))[:n_held]}
    train = [item for item in items if key(item) not in held]
    held_out = [item for item in items if key(item) in held]
    return train, held_out


# --- Features ---

class Featurizer:
    """
    Maps (s, t) texts to the default feature vector.

    Metric misses are imputed as 0 and flagged by the matching missing_*
    feature. Tokenization and full feature rows are memoised.
    """

    def __init__(self, word_vectors=None, schema: FeatureSchema = DEFAULT_SCHEMA,
                 inaudible_marker: Optional[str] = None, cache_size: int = 200000):
        if schema.names != DEFAULT_FEATURE_NAMES:
            raise ValueError(f"unsupported feature schema '{schema.schema_id}'")
        self.word_vectors = word_vectors
        self.schema = schema
        self.marker = inaudible_marker or CORPUS_SETTINGS['inaudible_marker']
        self._profiles = {name: MetricId.default("lcs" if name == "lcs_norm" else name).profile
                          for name in METRIC_FEATURES}
        self._punct = PreprocessProfile.from_spec("P")
        self._punct_stop = PreprocessProfile.from_spec("PS")
        self._tokens = lru_cache(maxsize=cache_size)(lambda text: tokenize(text, self.marker))
        self._row = lru_cache(maxsize=cache_size)(self._compute)

    def _metric(self, name, s, t) -> Optional[float]:
        if name == "pct_s_in_t":
            return pct_s_in_t(s, t)
        if name == "pct_t_in_s":
            return pct_t_in_s(s, t)
        if name == "jaccard":
            return jaccard(s, t)
        if name == "bleu":
            return bleu(s, t)
        if name == "lcs_norm":
            return lcs_norm(s, t) if len(s) else None
        if self.word_vectors is None:
            return None
        if name == "glove_align":
            return glove_align(self.word_vectors, s, t)
        return glove_utt(self.word_vectors, s, t)

    def _compute(self, s_text: str, t_text: str) -> Tuple[float, ...]:
        s_raw, t_raw = self._tokens(s_text), self._tokens(t_text)
        values, missing = [], []
        for name in METRIC_FEATURES:
            profile = self._profiles[name]
            value = self._metric(name, apply_profile(s_raw, profile), apply_profile(t_raw, profile))
            values.append(0.0 if value is None else float(value))
            missing.append(1.0 if value is None else 0.0)

        s_words = apply_profile(s_raw, self._punct)
        t_words = apply_profile(t_raw, self._punct)
        s_content = ngrams(apply_profile(s_raw, self._punct_stop), 1)
        t_content = ngrams(apply_profile(t_raw, self._punct_stop), 1)
        overlap = sum(min(count, t_content[gram]) for gram, count in s_content.items())
        values += [math.log1p(len(s_words)), math.log1p(len(t_words)), float(overlap)]
        return tuple(values + missing)

    def features(self, s_text: str, t_text: str) -> np.ndarray:
        return np.asarray(self._row(s_text, t_text), dtype=np.float64)

    def matrix(self, items: Sequence, executor=None) -> np.ndarray:
        """Feature rows for NucExamples or ExchangePairs, in order."""
        texts = [(item.s, item.t) if isinstance(item, NucExample) else (item.s.text, item.t.text)
                 for item in items]
        if executor is not None:
            rows = executor.map_ordered(lambda st: self._row(*st), texts, "Featurizing")
        else:
            rows = [self._row(s, t) for s, t in create_progress_bar(texts, "Featurizing")]
        if not rows:
            return np.zeros((0, len(self.schema.names)))
        return np.asarray(rows, dtype=np.float64)


def featurize(s_text: str, t_text: str, word_vectors=None,
              schema: FeatureSchema = DEFAULT_SCHEMA) -> FeatureVector:
    """Feature vector of one (s, t) pair under `schema`."""
    values = Featurizer(word_vectors, schema).features(s_text, t_text)
    return FeatureVector(values, schema.names)


# --- Reference Classifier ---

def class_weights(y: np.ndarray) -> np.ndarray:
    """Per-example weights N / (2 N_class) so both classes contribute half of the loss."""
    n = len(y)
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training examples must contain both labels (z=0 and z=1)")
    return np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))


def loss_and_gradient(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray,
                      sample_weights: np.ndarray, l2: float) -> Tuple[float, np.ndarray, float]:
    """
    Weighted mean logistic loss plus 0.5 * l2 * |w|^2, and its gradient.

    Uses log(1 + e^x) via logaddexp so large logits stay finite.

    Returns:
        tuple: (objective, gradient wrt weights, gradient wrt bias)
    """
    logits = X @ weights + bias
    signed = np.where(y == 1, -logits, logits)
    n = len(y)
    objective = float(np.sum(sample_weights * np.logaddexp(0.0, signed)) / n + 0.5 * l2 * weights @ weights)
    residual = sample_weights * (expit(logits) - y) / n
    return objective, X.T @ residual + l2 * weights, float(residual.sum())


def _clamp(probabilities):
    return np.clip(probabilities, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)


def _standardize(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    return (X - params.mean) / params.scale


def predict_proba(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    """Clamped probabilities for a raw (unstandardized) feature matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != len(params.weights):
        raise ValueError(f"feature width {X.shape[1]} does not match classifier ({len(params.weights)})")
    return _clamp(expit(_standardize(params, X) @ params.weights + params.bias))


def check_schema(params: ClassifierParams, featurizer: Featurizer) -> None:
    if (params.feature_schema_id != featurizer.schema.schema_id
            or params.feature_names != featurizer.schema.names):
        raise ValueError(f"classifier was trained on schema '{params.feature_schema_id}', "
                         f"featurizer uses '{featurizer.schema.schema_id}'")
    trained_with_vectors = params.metadata.get('word_vectors')
    if trained_with_vectors is not None and trained_with_vectors != (featurizer.word_vectors is not None):
        logger.warning("Classifier was trained %s word vectors but is scoring %s them",
                       "with" if trained_with_vectors else "without",
                       "without" if trained_with_vectors else "with")


def predict(params: ClassifierParams, pair, featurizer: Featurizer) -> float:
    """nuc_prob of one ExchangePair: sigmoid of the logit, clamped to [1e-7, 1 - 1e-7]."""
    check_schema(params, featurizer)
    return float(predict_proba(params, featurizer.features(pair.s.text, pair.t.text))[0])


def _metrics_from_probabilities(probs: np.ndarray, y: np.ndarray, origins: Sequence[str]) -> Dict[str, float]:
    y = np.asarray(y)
    pos, neg = probs[y == 1], probs[y == 0]
    ce = 0.5 * (float(np.mean(-np.log(pos))) + float(np.mean(-np.log(1.0 - neg))))

    grouped: Dict[str, Dict[str, list]] = defaultdict(lambda: {"pos": [], "neg": []})
    for prob, label, origin in zip(probs, y, origins):
        grouped[origin]["pos" if label == 1 else "neg"].append(float(prob))
    estimates = [pjsd_estimate(group["pos"][0], group["neg"]).value
                 for group in grouped.values() if len(group["pos"]) == 1 and group["neg"]]

    return {
        "cross_entropy": ce,
        "loss": 2.0 * ce,
        "mean_pjsd": float(np.mean(estimates)) if estimates else float('nan'),
        "accuracy": float(np.mean((probs >= 0.5) == (y == 1))),
    }


def evaluate(params: ClassifierParams, examples: Sequence[NucExample], featurizer: Featurizer,
             X: Optional[np.ndarray] = None) -> Dict[str, float]:
    """
    Class-balanced cross-entropy, loss L = 2 CE, mean pjsd and accuracy.

    With exactly k negatives per positive, mean pjsd equals ln 2 - CE.
    """
    check_schema(params, featurizer)
    if X is None:
        X = featurizer.matrix(examples)
    y = np.asarray([e.z for e in examples])
    class_weights(y)
    return _metrics_from_probabilities(predict_proba(params, X), y, [e.origin for e in examples])


def train_reference_classifier(examples: Sequence[NucExample], featurizer: Featurizer,
                               learning_rate: float = NUC_SETTINGS['learning_rate'],
                               epochs: int = NUC_SETTINGS['epochs'],
                               batch_size: int = NUC_SETTINGS['batch_size'],
                               l2: float = NUC_SETTINGS['l2'],
                               seed: int = 0, executor=None) -> ClassifierParams:
    """
    Fit the logistic reference classifier by mini-batch gradient descent.

    Features are standardized with training statistics; weights start at
    zero; batch order comes from a generator seeded by `seed`. The per-epoch
    history (objective, cross_entropy, loss, mean_pjsd, accuracy) is stored
    in `params.metadata['history']`.

    Raises:
        ValueError: Empty or single-class input, bad hyperparameters, or divergence
    """
    if not examples:
        raise ValueError("no training examples")
    if learning_rate <= 0 or epochs < 1 or batch_size < 1 or l2 < 0:
        raise ValueError("learning_rate must be > 0, epochs and batch_size >= 1, l2 >= 0")

    y = np.asarray([e.z for e in examples], dtype=np.float64)
    sample_weights = class_weights(y)
    X = featurizer.matrix(examples, executor)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale
    origins = [e.origin for e in examples]

    weights = np.zeros(X.shape[1])
    bias = 0.0
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            batch = order[start:start + batch_size]
            _, grad_w, grad_b = loss_and_gradient(weights, bias, Xs[batch], y[batch],
                                                  sample_weights[batch], l2)
            weights = weights - learning_rate * grad_w
            bias = bias - learning_rate * grad_b
            if not (np.all(np.isfinite(weights)) and math.isfinite(bias)):
                raise ValueError(f"training diverged in epoch {epoch}; try a smaller learning_rate "
                                 f"(currently {learning_rate})")

        objective, _, _ = loss_and_gradient(weights, bias, Xs, y, sample_weights, l2)
        if not math.isfinite(objective):
            raise ValueError(f"training loss is not finite in epoch {epoch}; try a smaller learning_rate")
        probs = _clamp(expit(Xs @ weights + bias))
        record = {"epoch": epoch, "objective": objective}
        record.update(_metrics_from_probabilities(probs, y, origins))
        history.append(record)
        logger.debug("epoch %d: objective %.6f, CE %.6f, accuracy %.4f",
                     epoch, objective, record["cross_entropy"], record["accuracy"])

    logger.info("Trained on %d example(s): CE %.4f, mean pJSD %.4f, accuracy %.4f",
                len(y), history[-1]["cross_entropy"], history[-1]["mean_pjsd"], history[-1]["accuracy"])
    return ClassifierParams(
        weights=weights,
        bias=bias,
        feature_schema_id=featurizer.schema.schema_id,
        feature_names=featurizer.schema.names,
        mean=mean,
        scale=scale,
        metadata={
            "seed": seed,
            "hyperparameters": {"learning_rate": learning_rate, "epochs": epochs,
                                "batch_size": batch_size, "l2": l2},
            "n_examples": len(y),
            "n_positive": int(y.sum()),
            "word_vectors": featurizer.word_vectors is not None,
            "history": history,
        },
    )


# --- Divergence Estimate ---

def pjsd_estimate(f_true: float, f_negatives: Sequence[float]) -> PJsdEstimate:
    """
    Pointwise JSD estimate from classifier probabilities.

    L = -ln f_true - mean(ln(1 - f_neg)); value = ln 2 - L / 2, so a chance
    classifier scores 0 and a perfect one approaches ln 2.

    Raises:
        ValueError: Empty negatives or a probability outside (0, 1)
    """
    negatives = list(f_negatives)
    if not negatives:
        raise ValueError("at least one negative probability is required")
    for prob in [f_true] + negatives:
        if not 0.0 < prob < 1.0:
            raise ValueError(f"probability {prob} is outside (0, 1)")
    mean_log = float(np.mean(np.log1p(-np.asarray(negatives, dtype=np.float64))))
    loss = -math.log(f_true) - mean_log
    return PJsdEstimate(value=LN2 - 0.5 * loss, n_negatives=len(negatives),
                        f_true=float(f_true), mean_log_one_minus_f_neg=mean_log)


def score_corpus_pjsd(params: ClassifierParams, pairs: Sequence, featurizer: Featurizer,
                      k: int = NUC_SETTINGS['negatives_per_positive'], seed: int = 0,
                      executor=None) -> ScoreTable:
    """
    nuc_prob and pjsd columns for every pair.

    Negatives are freshly sampled (salted apart from training negatives);
    they affect pjsd only.
    """
    check_schema(params, featurizer)
    negatives = sample_negatives(pairs, k, seed, "score", executor)

    texts = []
    for pair in pairs:
        texts.append((pair.s.text, pair.t.text))
        texts.extend((pair.s.text, t_neg) for t_neg in negatives[pair.id])
    if executor is not None:
        rows = executor.map_ordered(lambda st: featurizer.features(*st), texts, "Featurizing")
    else:
        rows = [featurizer.features(s, t) for s, t in create_progress_bar(texts, "Featurizing")]
    probs = predict_proba(params, np.vstack(rows))

    table = ScoreTable(["nuc_prob", "pjsd"])
    stride = k + 1
    for i, pair in enumerate(pairs):
        block = probs[i * stride:(i + 1) * stride]
        estimate = pjsd_estimate(float(block[0]), [float(p) for p in block[1:]])
        table.add_row(pair.id, {"nuc_prob": float(block[0]), "pjsd": estimate.value})
    return table
