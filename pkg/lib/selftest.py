"""
Embedded oracle fixtures for `control.py selftest`.

Each check compares a library result against an independent computation or a
hand-derived constant. The run is deterministic: same code, same report.
"""

import os
import sys
import math
import logging
from collections import Counter
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Callable, List, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from common_utils import write_json
from embeddings import cosine
from nuc import LN2, class_weights, loss_and_gradient, pjsd_estimate
from similarity import bleu, jaccard, lcs_norm, pct_s_in_t, pct_t_in_s
from stats import fleiss_kappa, map_damsl, median_test, ols, quantile_transform, spearman
from textprep import TokenSequence, stem, tokenize

logger = logging.getLogger(__name__)

DAMSL_FIXTURE = [
    ("b", "acknowledgment"), ("bh", "acknowledgment"), ("bf", "reformulation"),
    ("sd^2", "collaborative_completion"), ("sd^m", "repetition"), ("nn", "answer"),
    ("sd", None), ("qy", None), ("%", None), ("ad", None),
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def brute_force_lcs(s: Tuple[str, ...], t: Tuple[str, ...]) -> int:
    """Longest subsequence of s that is also a subsequence of t, by enumeration."""
    def is_subsequence(candidate, target):
        it = iter(target)
        return all(token in it for token in candidate)

    for size in range(len(s), 0, -1):
        for indices in combinations(range(len(s)), size):
            if is_subsequence([s[i] for i in indices], t):
                return size
    return 0


def reference_bleu(reference, hypothesis, max_n=4, epsilon=1e-9) -> float:
    """Straightforward smoothed sentence BLEU used as an oracle."""
    orders = min(max_n, len(hypothesis))
    product = 1.0
    for n in range(1, orders + 1):
        hyp = Counter(tuple(hypothesis[i:i + n]) for i in range(len(hypothesis) - n + 1))
        ref = Counter(tuple(reference[i:i + n]) for i in range(len(reference) - n + 1))
        clipped = sum(min(c, ref[g]) for g, c in hyp.items())
        product *= (clipped / sum(hyp.values())) or epsilon
    bp = 1.0 if len(hypothesis) > len(reference) else math.exp(1 - len(reference) / len(hypothesis))
    return bp * product ** (1.0 / orders)


def _seq(tokens) -> TokenSequence:
    return TokenSequence(tuple(tokens))


def check_tokenizer() -> str:
    assert list(tokenize("You would multiply 4 times 3.")) == ["you", "would", "multiply", "4", "times", "3", "."]
    assert list(tokenize("don't stop")) == ["don't", "stop"]
    tokens = tokenize("14 plus 14 is 28.")
    assert len(tokens) == 6 and sum(1 for tok in tokens if tok != ".") == 5
    return "3 fixtures"


def check_stemmer() -> str:
    expected = {"multiplied": "multipli", "cat": "cat", "fractions": "fraction", "running": "run"}
    for word, root in expected.items():
        assert stem(word) == root, f"stem({word}) = {stem(word)}"
    return f"{len(expected)} words"


def check_metric_oracles(n_cases: int = 300) -> str:
    rng = np.random.default_rng(0)
    alphabet = list("abcde")
    for _ in range(n_cases):
        s = tuple(str(tok) for tok in rng.choice(alphabet, size=int(rng.integers(1, 9))))
        t = tuple(str(tok) for tok in rng.choice(alphabet, size=int(rng.integers(1, 9))))
        S, T = _seq(s), _seq(t)
        assert lcs_norm(S, T) == brute_force_lcs(s, t) / len(s)
        assert pct_s_in_t(S, T) == sum(tok in set(t) for tok in s) / len(s)
        assert pct_t_in_s(S, T) == sum(tok in set(s) for tok in t) / len(t)
        assert jaccard(S, T) == len(set(s) & set(t)) / len(set(s) | set(t))
        assert abs(bleu(S, T) - reference_bleu(s, t)) <= 1e-9
    return f"{n_cases} random pairs"


def check_pjsd_calibration() -> str:
    assert abs(pjsd_estimate(0.5, [0.5, 0.5, 0.5]).value) <= 1e-12
    assert abs(pjsd_estimate(1 - 1e-6, [1e-6]).value - LN2) <= 1e-3
    assert abs(pjsd_estimate(0.8, [0.3, 0.1, 0.4]).value - 0.41942) <= 1e-4
    return "chance, saturation, worked example"


def check_gradient(n_points: int = 5, h: float = 1e-6) -> str:
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 4))
    y = (rng.random(40) < 0.3).astype(float)
    weights = class_weights(y)
    for _ in range(n_points):
        w, b = rng.normal(size=4), float(rng.normal())
        _, grad_w, grad_b = loss_and_gradient(w, b, X, y, weights, 0.01)
        numeric = []
        for j in range(4):
            step = np.zeros(4)
            step[j] = h
            up = loss_and_gradient(w + step, b, X, y, weights, 0.01)[0]
            down = loss_and_gradient(w - step, b, X, y, weights, 0.01)[0]
            numeric.append((up - down) / (2 * h))
        numeric_b = (loss_and_gradient(w, b + h, X, y, weights, 0.01)[0]
                     - loss_and_gradient(w, b - h, X, y, weights, 0.01)[0]) / (2 * h)
        analytic = np.append(grad_w, grad_b)
        approx = np.append(numeric, numeric_b)
        error = np.linalg.norm(analytic - approx) / max(np.linalg.norm(analytic) + np.linalg.norm(approx), 1e-12)
        assert error < 1e-5, f"relative error {error:.2e}"
    return f"{n_points} points"


def check_spearman_ties() -> str:
    rho = spearman([1, 2, 2, 3], [1, 3, 2, 4]).rho
    assert abs(rho - 4.5 / math.sqrt(22.5)) <= 1e-12, rho
    return f"rho={rho:.6f}"


def check_fleiss() -> str:
    kappa = fleiss_kappa([[3, 0, 0], [0, 3, 0], [1, 1, 1], [2, 1, 0]])
    assert abs(kappa - 11 / 41) <= 1e-12, kappa
    return f"kappa={kappa:.6f}"


def check_quantiles() -> str:
    values = np.random.default_rng(2).normal(size=50)
    transformed = np.sort(quantile_transform(values))
    assert np.array_equal(transformed, (np.arange(1, 51) - 0.5) / 50)
    assert np.allclose(quantile_transform([7, 7, 7, 7]), 0.5)
    return "n=50 and full tie"


def check_damsl() -> str:
    for tag, phenomenon in DAMSL_FIXTURE:
        assert map_damsl(tag) == phenomenon, f"{tag} -> {map_damsl(tag)}"
    return f"{len(DAMSL_FIXTURE)}/{len(DAMSL_FIXTURE)} tags"


def check_ols() -> str:
    x = np.arange(1.0, 11.0)
    result = ols(2.0 * x, x)
    assert abs(result.coefficients["x"] - 2.0) <= 1e-9 and abs(result.r_squared - 1.0) <= 1e-9
    return "y = 2x"


def check_vectors_and_median() -> str:
    assert abs(cosine(np.array([1.0, 2.0]), np.array([2.0, 1.0])) - 0.8) <= 1e-12
    assert median_test([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]) == 1.0
    return "cosine 0.8, identical samples p=1"


CHECKS: List[Tuple[str, Callable[[], str]]] = [
    ("tokenizer", check_tokenizer),
    ("stemmer", check_stemmer),
    ("metric oracles", check_metric_oracles),
    ("pjsd calibration", check_pjsd_calibration),
    ("gradient check", check_gradient),
    ("spearman ties", check_spearman_ties),
    ("fleiss kappa", check_fleiss),
    ("quantile uniformity", check_quantiles),
    ("damsl mapping", check_damsl),
    ("ols exact fit", check_ols),
    ("cosine and median test", check_vectors_and_median),
]


def run_selftest() -> List[CheckResult]:
    results = []
    for name, check in CHECKS:
        try:
            results.append(CheckResult(name, True, check()))
        except Exception as e:
            logger.error("Self-test '%s' failed: %s", name, e)
            results.append(CheckResult(name, False, f"{type(e).__name__}: {e}"))
    return results


def render_results(results: List[CheckResult], console: Console) -> None:
    table = Table(title="Self-test")
    table.add_column("Check", style="cyan", no_wrap=True)
    table.add_column("Result")
    table.add_column("Detail", style="white")
    for result in results:
        table.add_row(result.name, "[green]pass[/green]" if result.passed else "[red]FAIL[/red]", result.detail)
    console.print(table)


def write_report(filepath: str, results: List[CheckResult]) -> None:
    write_json(filepath, {"passed": all(r.passed for r in results), "checks": [asdict(r) for r in results]})
