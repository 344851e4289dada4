import itertools
import math
from random import Random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from helpers import recursive_levenshtein
from refgame.agents import CompositionalOracle
from refgame.domain import Stimulus, enumerate_stimuli, generate_language, random_signal, sample_training_set
from refgame.metrics import (
    DegenerateMatrixError,
    DegenerateVarianceError,
    EmptyInputError,
    communicative_success_rate,
    generalization_score,
    levenshtein,
    mean_signal_length,
    ngram_diversity,
    normalized_levenshtein,
    paired_t_test,
    pearson,
    semantic_distance,
    semantic_similarity,
    topsim_mantel,
    unique_signal_ratio,
    vocabulary_report,
)

short_strings = st.text(alphabet="ghklmnpwaeiou", max_size=6)


class TestLevenshtein:
    def test_identity(self):
        assert normalized_levenshtein("wipisu", "wipisu") == 0

    def test_kitten_sitting(self):
        assert levenshtein("kitten", "sitting") == 3
        assert normalized_levenshtein("kitten", "sitting") == pytest.approx(3 / 7)

    def test_all_insertions(self):
        assert normalized_levenshtein("", "abc") == 1.0

    def test_both_empty(self):
        assert normalized_levenshtein("", "") == 0.0

    @given(short_strings, short_strings)
    def test_symmetry(self, a, b):
        assert normalized_levenshtein(a, b) == normalized_levenshtein(b, a)

    @given(short_strings, short_strings, short_strings)
    def test_triangle_inequality(self, a, b, c):
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)

    @given(short_strings, short_strings)
    def test_matches_recursive_oracle(self, a, b):
        assert levenshtein(a, b) == recursive_levenshtein(a, b)


class TestSemanticSimilarity:
    def test_identity(self):
        s = Stimulus(1, "blue", 1)
        assert semantic_similarity(s, s) == 3

    def test_all_differ(self):
        assert semantic_similarity(Stimulus(1, "blue", 1), Stimulus(2, "green", 2)) == 0

    def test_amount_differs_only(self):
        assert semantic_similarity(Stimulus(1, "blue", 1), Stimulus(1, "blue", 3)) == 2

    def test_symmetric_and_distance_complement(self):
        a, b = Stimulus(1, "green", 2), Stimulus(3, "green", 1)
        assert semantic_similarity(a, b) == semantic_similarity(b, a)
        assert semantic_distance(a, b) == 3 - semantic_similarity(a, b)


class TestPearson:
    def test_perfect_positive(self):
        assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_perfect_negative(self):
        assert pearson([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)

    def test_hand_values(self):
        # closed form: cov=5, var_x=2, var_y=114/9
        assert pearson([1, 2, 3], [2, 4, 7]) == pytest.approx(5 / math.sqrt(2 * 114 / 9), abs=1e-12)
        # closed form: cov=3, var_x=2, var_y=42/9
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9820, abs=1e-4)

    def test_degenerate(self):
        with pytest.raises(DegenerateVarianceError):
            pearson([1, 1, 1], [1, 2, 3])


def t_density(x: float, df: int) -> float:
    # hand-written Student-t density, independent of scipy.stats
    log_norm = (
        math.lgamma((df + 1) / 2)
        - math.lgamma(df / 2)
        - 0.5 * math.log(df * math.pi)
    )
    return math.exp(log_norm) * (1 + x * x / df) ** (-(df + 1) / 2)


class TestPairedTTest:
    def test_zero_variance_differences(self):
        with pytest.raises(DegenerateVarianceError):
            paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])

    def test_df_is_n_minus_1(self):
        result = paired_t_test([1, 2, 3, 4, 5, 7], [0, 1, 2, 3, 4, 5])
        assert result.df == 5

    def test_against_numerical_integration(self):
        # differences (1,1,1,1,1,2): t = 7 exactly, p from quadrature of the density
        x = [1.0, 1.0, 1.0, 1.0, 1.0, 2.0]
        y = [0.0] * 6
        result = paired_t_test(x, y)
        assert result.statistic == pytest.approx(7.0, abs=1e-12)
        tail, _ = integrate.quad(lambda v: t_density(v, result.df), result.statistic, np.inf)
        assert result.p_value == pytest.approx(2 * tail, rel=1e-8)


class TestNgramDiversity:
    def test_single_aa(self):
        # grams: N=1 -> a,a (1/2); N=2 -> aa (1/1); N>=3 empty
        assert ngram_diversity(["aa"]) == pytest.approx(0.75)

    def test_repetition_lowers_diversity(self):
        assert ngram_diversity(["na", "na", "na"]) < ngram_diversity(["na", "gi", "wo"])

    def test_identical_vs_golden(self, golden_train):
        identical = ["wipisu"] * 15
        assert ngram_diversity(identical) < ngram_diversity(golden_train.signals())

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            ngram_diversity([""])

    def test_hand_count_two_signals(self):
        # "ab", "ab": N=1 -> a,b,a,b (2/4); N=2 -> ab,ab (1/2); mean = 0.5
        assert ngram_diversity(["ab", "ab"]) == pytest.approx(0.5)


def exhaustive_mantel_oracle(pairs):
    """Brute-force Mantel enumeration independent of the library path."""
    stimuli = [s for s, _ in pairs]
    signals = [w for _, w in pairs]
    n = len(pairs)
    sem = [[semantic_distance(a, b) for b in stimuli] for a in stimuli]
    sig = [[normalized_levenshtein(a, b) for b in signals] for a in signals]

    def upper(matrix, perm):
        return [matrix[perm[i]][perm[j]] for i in range(n) for j in range(i + 1, n)]

    def plain_pearson(x, y):
        mx, my = sum(x) / len(x), sum(y) / len(y)
        cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
        vx = sum((a - mx) ** 2 for a in x)
        vy = sum((b - my) ** 2 for b in y)
        return cov / math.sqrt(vx * vy)

    base = upper(sem, list(range(n)))
    observed = plain_pearson(base, upper(sig, list(range(n))))
    rs = [plain_pearson(base, upper(sig, list(p))) for p in itertools.permutations(range(n))]
    mean = sum(rs) / len(rs)
    std = math.sqrt(sum((r - mean) ** 2 for r in rs) / len(rs))
    z = (observed - mean) / std
    p = sum(1 for r in rs if r >= observed - 1e-12) / len(rs)
    return observed, z, p, mean, std


TOY_PAIRS = [
    (Stimulus(1, "blue", 1), "gali"),
    (Stimulus(1, "blue", 2), "game"),
    (Stimulus(2, "green", 1), "hopu"),
    (Stimulus(3, "orange", 3), "nuwa"),
]


class TestTopSimMantel:
    def test_exhaustive_matches_oracle(self):
        observed, z, p, mean, std = exhaustive_mantel_oracle(TOY_PAIRS)
        result = topsim_mantel(TOY_PAIRS, method="exact")
        assert result.method == "exact"
        assert result.permutations == 24
        assert result.observed_r == pytest.approx(observed, abs=1e-12)
        assert result.z_score == pytest.approx(z, abs=1e-9)
        assert result.p_value == pytest.approx(p, abs=1e-12)

    def test_auto_uses_exact_for_small_n(self):
        assert topsim_mantel(TOY_PAIRS).method == "exact"
        train = sample_training_set(Random(0)).train
        vocab = generate_language(Random(0), train)
        assert topsim_mantel(vocab, permutations=100, rng=0).method == "sampled"

    def test_degenerate_identical_signals(self):
        pairs = [(s, "gigi") for s in enumerate_stimuli()[:5]]
        with pytest.raises(DegenerateMatrixError):
            topsim_mantel(pairs)

    def test_degenerate_semantics(self):
        # three stimuli pairwise differing in exactly two attributes
        pairs = [
            (Stimulus(1, "blue", 1), "gali"),
            (Stimulus(2, "green", 1), "hopu"),
            (Stimulus(3, "orange", 1), "nuwa"),
        ]
        with pytest.raises(DegenerateMatrixError):
            topsim_mantel(pairs)

    def test_needs_three_entries(self):
        with pytest.raises(ValueError):
            topsim_mantel(TOY_PAIRS[:2])

    def test_relabeling_invariance(self):
        # applying one relabeling to both sides leaves observed r unchanged
        rng = Random(11)
        train = sample_training_set(rng).train
        vocab = generate_language(rng, train)
        pairs = vocab.pairs()
        base = topsim_mantel(pairs, permutations=10, rng=0).observed_r
        perm = list(range(len(pairs)))
        Random(5).shuffle(perm)
        shuffled = [pairs[i] for i in perm]
        assert topsim_mantel(shuffled, permutations=10, rng=0).observed_r == pytest.approx(
            base, abs=1e-12
        )

    def test_perfect_structure_detected(self):
        oracle = CompositionalOracle("X")
        train = sample_training_set(Random(21)).train
        pairs = [(s, oracle.rule_signal(s)) for s in train]
        result = topsim_mantel(pairs, permutations=1000, rng=7)
        assert result.p_value < 0.05

    def test_seed_stability(self):
        train = sample_training_set(Random(2)).train
        vocab = generate_language(Random(2), train)
        a = topsim_mantel(vocab, permutations=500, rng=42)
        b = topsim_mantel(vocab, permutations=500, rng=42)
        assert a == b


class TestGeneralizationScore:
    def _compositional_sets(self, seed=3):
        oracle = CompositionalOracle("X")
        split = sample_training_set(Random(seed))
        train = [(s, oracle.rule_signal(s)) for s in split.train]
        test = [(s, oracle.rule_signal(s)) for s in split.test]
        return train, test

    def test_compositional_scores_high(self):
        train, test = self._compositional_sets()
        assert generalization_score(train, test) > 0.7

    def test_random_test_signals_score_near_zero(self):
        split = sample_training_set(Random(1))
        oracle = CompositionalOracle("X")
        train = [(s, oracle.rule_signal(s)) for s in split.train]
        values = []
        for seed in range(20):
            rng = Random(seed)
            test = [(s, random_signal(rng)) for s in split.test]
            values.append(generalization_score(train, test))
        assert abs(float(np.mean(values))) < 0.15

    def test_order_invariance(self):
        train, test = self._compositional_sets()
        shuffled_train = list(train)
        shuffled_test = list(test)
        Random(9).shuffle(shuffled_train)
        Random(10).shuffle(shuffled_test)
        assert generalization_score(shuffled_train, shuffled_test) == pytest.approx(
            generalization_score(train, test), abs=1e-12
        )

    def test_degenerate_signals(self):
        split = sample_training_set(Random(4))
        train = [(s, "gigi") for s in split.train]
        test = [(s, "gigi") for s in split.test]
        with pytest.raises(DegenerateVarianceError):
            generalization_score(train, test)

    def test_empty_inputs(self):
        train, test = self._compositional_sets()
        with pytest.raises(EmptyInputError):
            generalization_score([], test)

    def test_all_pairs_variant(self, golden_train, golden_test):
        cross = generalization_score(golden_train.pairs(), golden_test.pairs(), pairs="cross")
        allp = generalization_score(golden_train.pairs(), golden_test.pairs(), pairs="all")
        assert cross != allp


class _Rec:
    def __init__(self, success, round=1):
        self.success = success
        self.round = round


class TestSuccessRate:
    def test_21_of_30(self):
        records = [_Rec(i < 21) for i in range(30)]
        assert communicative_success_rate(records) == pytest.approx(0.7)

    def test_all_success(self):
        assert communicative_success_rate([_Rec(True)] * 5) == 1.0

    def test_round_filter(self):
        records = [_Rec(True, round=1), _Rec(False, round=2)]
        assert communicative_success_rate(records, round=1) == 1.0
        assert communicative_success_rate(records, round=2) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            communicative_success_rate([])
        with pytest.raises(EmptyInputError):
            communicative_success_rate([_Rec(True, round=1)], round=3)


class TestReportHelpers:
    def test_unique_ratio_and_length(self):
        assert unique_signal_ratio(["a", "a", "b", "c"]) == pytest.approx(0.75)
        assert mean_signal_length(["ab", "abcd"]) == pytest.approx(3.0)

    def test_vocabulary_report_flags_degenerate(self):
        pairs = [(s, "gigi") for s in enumerate_stimuli()[:5]]
        report = vocabulary_report(pairs, permutations=10, rng=0)
        assert report.degenerate
        assert report.topsim is None
        assert report.unique_signal_ratio == pytest.approx(0.2)

    def test_random_languages_mean_z_near_zero(self):
        zs = []
        for seed in range(20):
            vocab = generate_language(Random(100 + seed), enumerate_stimuli())
            zs.append(topsim_mantel(vocab, permutations=300, rng=seed).z_score)
        assert -1.0 < float(np.mean(zs)) < 1.0
