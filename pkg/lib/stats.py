"""
Statistics used to validate uptake measures.

Rank correlation with bootstrap intervals, inter-rater agreement, quantile
transforms, median and t tests, OLS with controls, the residual-gap
comparison between two models, conversation-level aggregation, teacher cue
rates, and the DAMSL dialog-act to uptake-phenomenon mapping.
"""

import os
import sys
import math
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy import stats as sps

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from config import STATS_SETTINGS

logger = logging.getLogger(__name__)

BOOTSTRAP_CELLS_PER_CHUNK = 2_000_000


@dataclass
class SpearmanResult:
    rho: float
    n: int
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    iterations: Optional[int] = None
    degenerate_resamples: int = 0
    warning: bool = False


@dataclass
class OlsResult:
    coefficients: Dict[str, float]
    std_errors: Dict[str, float]
    t_values: Dict[str, float]
    p_values: Dict[str, float]
    standardized: Dict[str, float]
    r_squared: float
    n: int
    df: int
    p_method: str
    small_sample: bool
    residuals: np.ndarray = field(repr=False, default=None)
    fitted: np.ndarray = field(repr=False, default=None)


@dataclass
class TTestResult:
    statistic: float
    df: float
    p_value: float
    method: str
    small_sample: bool


# --- Rank Correlation ---

def _as_array(values, name: str) -> np.ndarray:
    array = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    if array.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")
    return array


def _pearson_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Pearson correlation of two equally shaped 2-D arrays."""
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    denom = np.sqrt((a * a).sum(axis=-1) * (b * b).sum(axis=-1))
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.clip((a * b).sum(axis=-1) / denom, -1.0, 1.0)


def spearman(x, y) -> SpearmanResult:
    """
    Spearman's rho: Pearson correlation of average (mid) ranks.

    Raises:
        ValueError: Unequal lengths, fewer than 3 values, or a constant list
    """
    x = _as_array(x, "x")
    y = _as_array(y, "y")
    if len(x) != len(y):
        raise ValueError(f"spearman needs equal lengths, got {len(x)} and {len(y)}")
    if len(x) < 3:
        raise ValueError(f"spearman needs at least 3 observations, got {len(x)}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("zero rank variance: a constant list has no ranking")
    rho = _pearson_rows(sps.rankdata(x)[None, :], sps.rankdata(y)[None, :])[0]
    return SpearmanResult(rho=float(rho), n=len(x))


def bootstrap_ci(x, y, iterations: int = STATS_SETTINGS['bootstrap_iterations'],
                 level: float = STATS_SETTINGS['confidence_level'], seed: int = 0) -> SpearmanResult:
    """
    Spearman's rho with a percentile bootstrap confidence interval.

    Index pairs are resampled with replacement from a generator seeded by
    `seed`. Resamples where either side is constant are skipped and counted.

    Raises:
        ValueError: Spearman preconditions, bad iterations/level, or more than
            half of the resamples degenerate
    """
    point = spearman(x, y)
    if iterations < 1:
        raise ValueError(f"iterations must be positive, got {iterations}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    x = _as_array(x, "x")
    y = _as_array(y, "y")
    n = len(x)

    rng = np.random.default_rng(seed)
    chunk = max(1, BOOTSTRAP_CELLS_PER_CHUNK // n)
    rhos = []
    degenerate = 0
    for start in range(0, iterations, chunk):
        size = min(chunk, iterations - start)
        idx = rng.integers(0, n, size=(size, n))
        xs, ys = x[idx], y[idx]
        valid = (xs.min(axis=1) != xs.max(axis=1)) & (ys.min(axis=1) != ys.max(axis=1))
        degenerate += int((~valid).sum())
        if valid.any():
            rhos.append(_pearson_rows(sps.rankdata(xs[valid], axis=1), sps.rankdata(ys[valid], axis=1)))

    if degenerate > STATS_SETTINGS['max_degenerate_fraction'] * iterations:
        raise ValueError(f"{degenerate} of {iterations} bootstrap resamples were degenerate")
    if degenerate:
        logger.warning("Skipped %d degenerate bootstrap resample(s)", degenerate)

    samples = np.concatenate(rhos)
    tail = 100.0 * (1.0 - level) / 2.0
    ci_low, ci_high = np.percentile(samples, [tail, 100.0 - tail])
    warning = not (ci_low <= point.rho <= ci_high)
    if warning:
        logger.warning("Percentile interval [%.4f, %.4f] excludes rho %.4f", ci_low, ci_high, point.rho)
    return SpearmanResult(rho=point.rho, n=n, ci_low=float(ci_low), ci_high=float(ci_high),
                          iterations=iterations, degenerate_resamples=degenerate, warning=warning)


# --- Agreement ---

def fleiss_kappa(counts) -> float:
    """
    Fleiss' kappa for an items x categories matrix of rater counts.

                  P_bar - P_e
        kappa = -------------
                    1 - P_e

    Raises:
        ValueError: Non-constant raters per item, fewer than 2 raters, or
            expected agreement of 1
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] == 0:
        raise ValueError("counts must be a non-empty items x categories matrix")
    if (counts < 0).any():
        raise ValueError("counts must be non-negative")
    raters = counts.sum(axis=1)
    if not np.all(raters == raters[0]):
        raise ValueError("every item must be rated by the same number of raters")
    n = raters[0]
    if n < 2:
        raise ValueError("fleiss kappa needs at least 2 raters per item")

    item_agreement = ((counts ** 2).sum(axis=1) - n) / (n * (n - 1))
    p_bar = item_agreement.mean()
    proportions = counts.sum(axis=0) / counts.sum()
    p_e = float((proportions ** 2).sum())
    if p_e == 1.0:
        raise ValueError("expected agreement is 1 (a single category was used); kappa undefined")
    return float((p_bar - p_e) / (1.0 - p_e))


def leave_out_rhos(z: np.ndarray, rater_ids: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """
    Per-rater Spearman rho against the mean of the other raters.

    Args:
        z: raters x items matrix of z-scores, NaN for missing cells
        rater_ids: Row names (default r0, r1, ...)

    Returns:
        dict: rater id -> rho, for raters with at least 3 shared items
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("z must be a raters x items matrix")
    rater_ids = list(rater_ids) if rater_ids is not None else [f"r{i}" for i in range(z.shape[0])]
    present = ~np.isnan(z)
    if int((present.sum(axis=1) > 0).sum()) < 3:
        raise ValueError("leave-out agreement needs at least 3 raters")

    rhos = {}
    for i, rater in enumerate(rater_ids):
        others = np.delete(z, i, axis=0)
        shared = present[i] & (~np.isnan(others)).any(axis=0)
        if shared.sum() < 3:
            logger.warning("Rater '%s' shares %d item(s) with other raters; excluded",
                           rater, int(shared.sum()))
            continue
        with np.errstate(invalid='ignore'):
            others_mean = np.nanmean(others[:, shared], axis=0)
        try:
            rhos[rater] = spearman(z[i, shared], others_mean).rho
        except ValueError as e:
            logger.warning("Rater '%s' excluded: %s", rater, e)
    return rhos


def leave_out_agreement(z: np.ndarray, rater_ids: Optional[Sequence[str]] = None) -> float:
    """Mean over raters of the leave-out Spearman rho."""
    rhos = leave_out_rhos(z, rater_ids)
    if not rhos:
        raise ValueError("no rater shares enough items for leave-out agreement")
    return float(np.mean(list(rhos.values())))


# --- Distribution Comparison ---

def quantile_transform(values) -> np.ndarray:
    """Map values to (average rank - 0.5) / n."""
    array = _as_array(values, "values")
    if len(array) == 0:
        raise ValueError("quantile transform needs at least one value")
    return (sps.rankdata(array) - 0.5) / len(array)


def median_test(a, b) -> float:
    """
    Mood's median test p-value.

    Values equal to the pooled grand median count as "below". When every
    pooled value is identical the test is undefined and p = 1.0.
    """
    a = _as_array(a, "a")
    b = _as_array(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("median test needs two non-empty samples")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        logger.warning("Median test on identical values; p set to 1.0")
        return 1.0
    try:
        _, p_value, _, _ = sps.median_test(a, b, ties='below', correction=False)
    except ValueError as e:
        logger.warning("Median test undefined (%s); p set to 1.0", e)
        return 1.0
    return float(p_value) if math.isfinite(p_value) else 1.0


def _p_from_t(t_value: float, df: float) -> Tuple[float, str]:
    if df > STATS_SETTINGS['normal_approx_min_df']:
        return float(2.0 * sps.norm.sf(abs(t_value))), "normal"
    return float(2.0 * sps.t.sf(abs(t_value), df)), "student_t"


def ttest_two_sample(a, b) -> TTestResult:
    """
    Welch two-sample t-test.

    Past 30 degrees of freedom the p-value uses the normal approximation;
    otherwise the Student-t distribution, flagged as small-sample.
    """
    a = _as_array(a, "a")
    b = _as_array(b, "b")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("t-test needs at least 2 values per sample")
    var_a = a.var(ddof=1) / len(a)
    var_b = b.var(ddof=1) / len(b)
    if var_a == 0.0 and var_b == 0.0:
        raise ValueError("t-test undefined: both samples have zero variance")
    statistic = float((a.mean() - b.mean()) / math.sqrt(var_a + var_b))
    df = float((var_a + var_b) ** 2 / (var_a ** 2 / (len(a) - 1) + var_b ** 2 / (len(b) - 1)))
    p_value, method = _p_from_t(statistic, df)
    return TTestResult(statistic, df, p_value, method, method != "normal")


# --- Regression ---

def ols(y, x_main, controls: Sequence = (), names: Optional[Sequence[str]] = None) -> OlsResult:
    """
    Ordinary least squares with an intercept, via the normal equations.

    Args:
        y: Outcome values
        x_main: Main regressor
        controls: Additional regressors
        names: Names for [x_main, *controls] (default x, control_1, ...)

    Returns:
        OlsResult: Raw and standardized coefficients, standard errors,
            p-values (normal past 30 df, Student-t otherwise), R^2

    Raises:
        ValueError: Too few rows, or a column that is collinear with earlier ones
    """
    y = _as_array(y, "y")
    columns = [_as_array(x_main, "x")] + [_as_array(c, f"control {i}") for i, c in enumerate(controls, 1)]
    names = list(names) if names is not None else ["x"] + [f"control_{i}" for i in range(1, len(controls) + 1)]
    if len(names) != len(columns):
        raise ValueError("one name is needed per regressor")
    for name, column in zip(names, columns):
        if len(column) != len(y):
            raise ValueError(f"regressor '{name}' has {len(column)} values, y has {len(y)}")
    n, p = len(y), len(columns) + 1
    if n <= p:
        raise ValueError(f"ols needs more than {p} observations, got {n}")

    labels = ["intercept"] + names
    design = np.column_stack([np.ones(n)] + columns)
    for j in range(1, p + 1):
        if np.linalg.matrix_rank(design[:, :j]) < j:
            raise ValueError(f"design matrix is rank deficient: column '{labels[j - 1]}' is collinear")

    gram = design.T @ design
    beta = np.linalg.solve(gram, design.T @ y)
    fitted = design @ beta
    residuals = y - fitted
    ssr = float(residuals @ residuals)
    sst = float(((y - y.mean()) ** 2).sum())
    df = n - p
    cov = (ssr / df) * np.linalg.inv(gram)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    with np.errstate(divide='ignore', invalid='ignore'):
        t_values = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.sign(beta) * np.inf))
    p_pairs = [_p_from_t(t, df) for t in t_values]
    p_method = p_pairs[0][1]

    y_sd = y.std(ddof=1)
    standardized = {name: float(beta[j + 1] * column.std(ddof=1) / y_sd) if y_sd > 0 else float('nan')
                    for j, (name, column) in enumerate(zip(names, columns))}
    return OlsResult(
        coefficients=dict(zip(labels, map(float, beta))),
        std_errors=dict(zip(labels, map(float, se))),
        t_values=dict(zip(labels, map(float, t_values))),
        p_values={label: pv for label, (pv, _) in zip(labels, p_pairs)},
        standardized=standardized,
        r_squared=1.0 if ssr == 0.0 else (1.0 - ssr / sst if sst > 0 else float('nan')),
        n=n,
        df=df,
        p_method=p_method,
        small_sample=p_method != "normal",
        residuals=residuals,
        fitted=fitted,
    )


def residual_gap_table(labels: Mapping[str, float], pred_a: Mapping[str, float],
                       pred_b: Mapping[str, float], threshold_sd: float = STATS_SETTINGS['residual_threshold_sd'],
                       above_mean_only: bool = False) -> pd.DataFrame:
    """
    Per-item residuals of labels regressed on each model's predictions.

    Each model gets its own simple OLS (with intercept) over the items present
    in all three inputs; d = r_a - r_b. An item is selected when d exceeds
    mean(d) + threshold_sd * sd(d), computed over the eligible items (all, or
    only those with above-mean labels).

    Returns:
        DataFrame: pair_id, label, pred_a, pred_b, resid_a, resid_b, d, selected
    """
    ids = sorted(set(labels) & set(pred_a) & set(pred_b))
    if len(ids) < STATS_SETTINGS['min_residual_rows']:
        raise ValueError(f"residual comparison needs at least {STATS_SETTINGS['min_residual_rows']} "
                         f"complete rows, got {len(ids)}")
    y = np.asarray([labels[i] for i in ids], dtype=np.float64)
    a = np.asarray([pred_a[i] for i in ids], dtype=np.float64)
    b = np.asarray([pred_b[i] for i in ids], dtype=np.float64)
    resid_a = ols(y, a, names=["pred_a"]).residuals
    resid_b = ols(y, b, names=["pred_b"]).residuals
    d = resid_a - resid_b

    eligible = y > y.mean() if above_mean_only else np.ones(len(ids), dtype=bool)
    selected = np.zeros(len(ids), dtype=bool)
    if eligible.sum() >= 2:
        pool = d[eligible]
        threshold = pool.mean() + threshold_sd * pool.std(ddof=1)
        selected = eligible & (d > threshold)
    return pd.DataFrame({"pair_id": ids, "label": y, "pred_a": a, "pred_b": b,
                         "resid_a": resid_a, "resid_b": resid_b, "d": d, "selected": selected})


def residual_gap_set(labels: Mapping[str, float], pred_a: Mapping[str, float], pred_b: Mapping[str, float],
                     threshold_sd: float = STATS_SETTINGS['residual_threshold_sd'],
                     above_mean_only: bool = False) -> Set[str]:
    """Ids where model a's residual exceeds model b's by more than the threshold."""
    table = residual_gap_table(labels, pred_a, pred_b, threshold_sd, above_mean_only)
    return set(table.loc[table["selected"], "pair_id"])


# --- Dialog Acts ---

PHENOMENA = ("acknowledgment", "answer", "reformulation", "collaborative_completion", "repetition")


@dataclass(frozen=True)
class PhenomenonRule:
    """
    One tag matcher.

    kind "exact": the whole tag is one of `patterns`; "marker": a pattern
    occurs anywhere in the tag; "substring": a pattern occurs in the base
    tag (the part before the first "^").
    """
    kind: str
    patterns: Tuple[str, ...]
    phenomenon: str

    def matches(self, tag: str) -> bool:
        if self.kind == "exact":
            return tag in self.patterns
        if self.kind == "marker":
            return any(pattern in tag for pattern in self.patterns)
        if self.kind == "substring":
            base = tag.split("^", 1)[0]
            return any(pattern in base for pattern in self.patterns)
        raise ValueError(f"unknown rule kind '{self.kind}'")


@dataclass(frozen=True)
class PhenomenonMapping:
    rules: Tuple[PhenomenonRule, ...]


DEFAULT_MAPPING = PhenomenonMapping((
    PhenomenonRule("exact", ("b", "bh", "bk"), "acknowledgment"),
    PhenomenonRule("marker", ("^2",), "collaborative_completion"),
    PhenomenonRule("marker", ("^m",), "repetition"),
    PhenomenonRule("exact", ("bf",), "reformulation"),
    PhenomenonRule("substring", ("n",), "answer"),
))


def map_damsl(tag: str, mapping: PhenomenonMapping = DEFAULT_MAPPING) -> Optional[str]:
    """First phenomenon whose rule matches the tag, or None."""
    tag = tag.strip()
    for rule in mapping.rules:
        if rule.matches(tag):
            return rule.phenomenon
    return None


@dataclass
class PhenomenonDelta:
    phenomenon: str
    n: int
    delta: Optional[float]
    p_value: Optional[float]

    @property
    def defined(self) -> bool:
        return self.delta is not None


def phenomenon_delta(scores_a: Mapping[str, float], scores_b: Mapping[str, float], tags: Mapping[str, str],
                     mapping: PhenomenonMapping = DEFAULT_MAPPING) -> Dict[str, PhenomenonDelta]:
    """
    Median difference of two (quantile-transformed) score columns per phenomenon.

    Only tagged pairs scored by both models count. A phenomenon with fewer
    than 2 matching pairs is reported as undefined.
    """
    matched: Dict[str, List[str]] = defaultdict(list)
    for pair_id in sorted(tags):
        if pair_id not in scores_a or pair_id not in scores_b:
            continue
        phenomenon = map_damsl(tags[pair_id], mapping)
        if phenomenon is not None:
            matched[phenomenon].append(pair_id)

    results = {}
    for phenomenon in PHENOMENA:
        ids = matched.get(phenomenon, [])
        if len(ids) < 2:
            results[phenomenon] = PhenomenonDelta(phenomenon, len(ids), None, None)
            continue
        a = np.asarray([scores_a[i] for i in ids])
        b = np.asarray([scores_b[i] for i in ids])
        results[phenomenon] = PhenomenonDelta(phenomenon, len(ids), float(np.median(a) - np.median(b)),
                                              median_test(a, b))
    return results


# --- Conversation-level Analyses ---

@dataclass
class CueRates:
    conversation_id: str
    n_pairs: int
    question_rate: float
    exclamation_rate: float


def cue_rates(pairs: Iterable) -> Dict[str, CueRates]:
    """Share of each conversation's pairs whose teacher reply contains "?" / "!"."""
    counts: Dict[str, List[int]] = defaultdict(lambda: [0, 0, 0])
    for pair in pairs:
        entry = counts[pair.conversation_id]
        entry[0] += 1
        entry[1] += "?" in pair.t.text
        entry[2] += "!" in pair.t.text
    return {cid: CueRates(cid, n, q / n, e / n) for cid, (n, q, e) in sorted(counts.items())}


def compare_cue_rates(pairs: Iterable, conversation_ids: Set[str]) -> Dict[str, TTestResult]:
    """Welch t-tests of cue rates for conversations inside vs outside a set."""
    rates = cue_rates(pairs)
    inside = [r for cid, r in rates.items() if cid in conversation_ids]
    outside = [r for cid, r in rates.items() if cid not in conversation_ids]
    return {
        "question_rate": ttest_two_sample([r.question_rate for r in inside], [r.question_rate for r in outside]),
        "exclamation_rate": ttest_two_sample([r.exclamation_rate for r in inside],
                                             [r.exclamation_rate for r in outside]),
    }


def conversation_aggregate(scores, pairs: Iterable, metric: str, min_pairs: int = 1) -> pd.DataFrame:
    """
    Mean of present scores per conversation and the number of contributing pairs.

    Args:
        scores (ScoreTable): Pair-level scores
        pairs: ExchangePairs mapping every scored pair to its conversation
        metric (str): Column to aggregate
        min_pairs (int): Conversations with fewer present scores are dropped

    Returns:
        DataFrame: conversation_id, <metric>, n_pairs (sorted by conversation)
    """
    conversation = {pair.id: pair.conversation_id for pair in pairs}
    values: Dict[str, List[float]] = defaultdict(list)
    seen = set()
    for pair_id, value in scores.column(metric).items():
        if pair_id not in conversation:
            raise ValueError(f"scored pair '{pair_id}' has no conversation")
        cid = conversation[pair_id]
        seen.add(cid)
        if value is not None:
            values[cid].append(value)

    rows = []
    for cid in sorted(seen):
        present = values.get(cid, [])
        if not present:
            logger.warning("Conversation '%s' has no present %s scores; omitted", cid, metric)
            continue
        if len(present) < min_pairs:
            continue
        rows.append((cid, float(np.mean(present)), len(present)))
    return pd.DataFrame(rows, columns=["conversation_id", metric, "n_pairs"])
