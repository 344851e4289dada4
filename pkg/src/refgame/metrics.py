"""Structure and success metrics for signal-meaning vocabularies.

TopSim is reported as the Z-score of a Mantel permutation test between the
pairwise semantic distances of meanings (3 minus the number of equal
attributes) and the pairwise normalized Levenshtein distances of signals.
Ngram diversity, the generalisation score, and communicative success follow
the same distance conventions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .domain import Signal, Stimulus, Vocabulary

# Exhaustive Mantel enumeration is used at or below this size (7! = 5040).
EXHAUSTIVE_MANTEL_MAX_N = 7
DEFAULT_PERMUTATIONS = 10_000
NGRAM_ORDERS = (1, 2, 3, 4, 5)


class MetricError(Exception):
    """Base class for metric computation failures."""


class DegenerateMatrixError(MetricError):
    """A distance matrix has zero variance, e.g. all signals identical."""


class DegenerateVarianceError(MetricError):
    """A correlation input vector is constant."""


class EmptyInputError(MetricError):
    """No data to compute over."""


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute edit distance."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def normalized_levenshtein(a: str, b: str) -> float:
    """Edit distance divided by max(len(a), len(b)); 0 when both empty."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def semantic_similarity(a: Stimulus, b: Stimulus) -> int:
    """Number of equal attributes among shape, colour, amount."""
    return sum(x == y for x, y in zip(a.attributes(), b.attributes()))


def semantic_distance(a: Stimulus, b: Stimulus) -> int:
    return 3 - semantic_similarity(a, b)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation; raises DegenerateVarianceError on constant input."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("pearson needs two equal-length vectors")
    if xa.size < 2:
        raise ValueError("pearson needs at least 2 observations")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise DegenerateVarianceError("constant input vector")
    return float(xc @ yc) / denom


@dataclass(frozen=True)
class PairedTTestResult:
    statistic: float
    p_value: float
    df: int


def paired_t_test(x: Sequence[float], y: Sequence[float]) -> PairedTTestResult:
    """Two-sided paired t-test on the differences x - y, df = n - 1."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("paired_t_test needs two equal-length vectors")
    n = xa.size
    if n < 2:
        raise ValueError("paired_t_test needs at least 2 pairs")
    diffs = xa - ya
    sd = diffs.std(ddof=1)
    if sd == 0.0:
        raise DegenerateVarianceError("zero-variance differences")
    t = float(diffs.mean() / (sd / math.sqrt(n)))
    df = n - 1
    p = float(2.0 * scipy_stats.t.sf(abs(t), df))
    return PairedTTestResult(statistic=t, p_value=p, df=df)


def semantic_distance_matrix(stimuli: Sequence[Stimulus]) -> np.ndarray:
    n = len(stimuli)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = semantic_distance(stimuli[i], stimuli[j])
    return m


def signal_distance_matrix(signals: Sequence[Signal]) -> np.ndarray:
    n = len(signals)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = normalized_levenshtein(signals[i], signals[j])
    return m


@dataclass(frozen=True)
class TopSimResult:
    z_score: float
    p_value: float
    observed_r: float
    permutations: int
    method: str  # "exact" or "sampled"


def _as_pairs(vocab) -> list[tuple[Stimulus, Signal]]:
    if isinstance(vocab, Vocabulary):
        return vocab.pairs()
    return [(s, w) for s, w in vocab]


def mantel_test(
    semantic: np.ndarray,
    signal: np.ndarray,
    permutations: int = DEFAULT_PERMUTATIONS,
    rng=None,
    method: str = "auto",
) -> TopSimResult:
    """Mantel permutation test between two symmetric distance matrices.

    The observed statistic is the Pearson correlation of the upper-triangle
    entries. One matrix is permuted by joint row/column relabelings; the
    Z-score standardizes the observed r against the permutation distribution.
    For "auto", enumeration is exhaustive up to n=7 and sampled above.
    """
    n = semantic.shape[0]
    if semantic.shape != (n, n) or signal.shape != (n, n):
        raise ValueError("matrices must be square and equally sized")
    if n < 3:
        raise ValueError("mantel test needs at least 3 items")
    iu = np.triu_indices(n, k=1)
    sem_vec = semantic[iu]
    sig_vec = signal[iu]
    if np.ptp(sig_vec) == 0.0:
        raise DegenerateMatrixError("signal distance matrix has zero variance")
    if np.ptp(sem_vec) == 0.0:
        raise DegenerateMatrixError("semantic distance matrix has zero variance")

    sem_centered = sem_vec - sem_vec.mean()
    sem_norm = math.sqrt(float(sem_centered @ sem_centered))

    def corr_with_sem(vectors: np.ndarray) -> np.ndarray:
        centered = vectors - vectors.mean(axis=1, keepdims=True)
        norms = np.sqrt((centered * centered).sum(axis=1))
        return (centered @ sem_centered) / (norms * sem_norm)

    observed_r = float(corr_with_sem(sig_vec[None, :])[0])

    if method == "auto":
        method = "exact" if n <= EXHAUSTIVE_MANTEL_MAX_N else "sampled"
    if method == "exact":
        perms = np.array(list(itertools.permutations(range(n))))
    elif method == "sampled":
        gen = np.random.default_rng(rng)
        perms = np.array([gen.permutation(n) for _ in range(permutations)])
    else:
        raise ValueError(f"unknown method {method!r}")

    permuted = signal[perms[:, :, None], perms[:, None, :]][:, iu[0], iu[1]]
    permuted_r = corr_with_sem(permuted)
    spread = float(permuted_r.std())
    if spread == 0.0:
        raise DegenerateMatrixError("permutation distribution has zero variance")
    z = (observed_r - float(permuted_r.mean())) / spread

    at_least = int((permuted_r >= observed_r - 1e-12).sum())
    if method == "exact":
        # the identity permutation is part of the enumeration
        p = at_least / len(perms)
    else:
        p = (1 + at_least) / (len(perms) + 1)
    return TopSimResult(
        z_score=float(z),
        p_value=float(p),
        observed_r=observed_r,
        permutations=len(perms),
        method=method,
    )


def topsim_mantel(
    vocab,
    permutations: int = DEFAULT_PERMUTATIONS,
    rng=None,
    method: str = "auto",
) -> TopSimResult:
    """TopSim of a vocabulary (or iterable of (stimulus, signal) pairs).

    rng may be a numpy Generator or an integer seed; it only matters in
    sampled mode.
    """
    pairs = _as_pairs(vocab)
    if len(pairs) < 3:
        raise ValueError("topsim needs at least 3 entries")
    sem = semantic_distance_matrix([s for s, _ in pairs])
    sig = signal_distance_matrix([w for _, w in pairs])
    return mantel_test(sem, sig, permutations=permutations, rng=rng, method=method)


def ngram_diversity(signals: Sequence[str], orders: Sequence[int] = NGRAM_ORDERS) -> float:
    """Mean over N of distinct/total character N-grams pooled across signals.

    Orders with no grams at all (every signal shorter than N) are excluded
    from the mean.
    """
    fractions = []
    for n in orders:
        grams: list[str] = []
        for signal in signals:
            grams.extend(signal[i : i + n] for i in range(len(signal) - n + 1))
        if grams:
            fractions.append(len(set(grams)) / len(grams))
    if not fractions:
        raise EmptyInputError("no signals long enough for any N-gram order")
    return float(np.mean(fractions))


def generalization_score(
    train: Sequence[tuple[Stimulus, Signal]],
    test: Sequence[tuple[Stimulus, Signal]],
    pairs: str = "cross",
) -> float:
    """Correlation between semantic and signal distances over stimulus pairs.

    pairs="cross" uses all train x test pairs; pairs="all" uses every
    unordered pair within the pooled train+test items.
    """
    if not train or not test:
        raise EmptyInputError("train and test must be non-empty")
    if pairs == "cross":
        pair_list = [(a, b) for a in train for b in test]
    elif pairs == "all":
        pair_list = list(itertools.combinations(list(train) + list(test), 2))
    else:
        raise ValueError(f"unknown pair definition {pairs!r}")
    sem = [semantic_distance(a[0], b[0]) for a, b in pair_list]
    sig = [normalized_levenshtein(a[1], b[1]) for a, b in pair_list]
    return pearson(sem, sig)


def communicative_success_rate(records: Iterable, round: int | None = None) -> float:
    """Fraction of interaction records with success; optionally one round only."""
    selected = [r for r in records if round is None or r.round == round]
    if not selected:
        raise EmptyInputError("no interaction records" + (f" for round {round}" if round else ""))
    return sum(1 for r in selected if r.success) / len(selected)


def unique_signal_ratio(signals: Sequence[str]) -> float:
    if not signals:
        raise EmptyInputError("no signals")
    return len(set(signals)) / len(signals)


def mean_signal_length(signals: Sequence[str]) -> float:
    if not signals:
        raise EmptyInputError("no signals")
    return float(np.mean([len(s) for s in signals]))


@dataclass
class MetricReport:
    """Structure measurements of one vocabulary snapshot."""

    topsim: TopSimResult | None
    ngram_diversity: float
    mean_signal_length: float
    unique_signal_ratio: float
    perc_com: float | None = None
    gen_score: float | None = None
    degenerate: bool = False


def vocabulary_report(
    pairs: Sequence[tuple[Stimulus, Signal]],
    permutations: int = DEFAULT_PERMUTATIONS,
    rng=None,
    perc_com: float | None = None,
    gen_score: float | None = None,
) -> MetricReport:
    """MetricReport over (stimulus, signal) pairs; degenerate TopSim is flagged,
    not raised, so reporting never aborts a run."""
    signals = [w for _, w in pairs]
    try:
        topsim = topsim_mantel(pairs, permutations=permutations, rng=rng)
        degenerate = False
    except DegenerateMatrixError:
        topsim = None
        degenerate = True
    return MetricReport(
        topsim=topsim,
        ngram_diversity=ngram_diversity(signals),
        mean_signal_length=mean_signal_length(signals),
        unique_signal_ratio=unique_signal_ratio(signals),
        perc_com=perc_com,
        gen_score=gen_score,
        degenerate=degenerate,
    )
