import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from src.exceptions import (
    ColumnSumViolation,
    DimensionMismatch,
    NegativeEntry,
    NotErgodic,
    NotReversible,
    NotSquare,
    PreconditionViolated,
    TooFewStates,
    ZeroStationaryProbability,
)
from src.markov import (
    Distribution,
    Regime,
    classical_mixing_bound,
    extremal_distribution,
    f_value,
    fidelity_coherent,
    is_reversible,
    lemma1_classify,
    lemma2_witness_set,
    mode,
    spectral_gap,
    stationary_distribution,
    time_reversal,
    total_variation,
    truncated_distribution,
    uniform_distribution,
    validate_stochastic,
)

TWO_STATE = [[0.9, 0.2], [0.1, 0.8]]
THREE_CYCLE = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]


def weights_strategy(min_size=2, max_size=64):
    """Non-negative weight vectors with positive total."""
    return st.lists(
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False, allow_infinity=False),
        min_size=min_size,
        max_size=max_size,
    ).filter(lambda w: sum(w) > 1e-6)


class TestValidation(unittest.TestCase):
    """Tests for validate_stochastic."""

    def test_valid_matrices(self):
        """Column-stochastic grids validate."""
        for grid in [TWO_STATE, np.eye(3)]:
            with self.subTest(grid=grid):
                self.assertEqual(validate_stochastic(grid).n, len(grid))

    def test_column_sum_violation_names_the_column(self):
        """The offending column is reported."""
        with self.assertRaises(ColumnSumViolation) as context:
            validate_stochastic([[0.5, 0.6], [0.5, 0.6]])
        self.assertEqual(context.exception.column, 1)
        self.assertAlmostEqual(context.exception.total, 1.2)

    def test_negative_and_non_square(self):
        """Negative entries and non-square grids are rejected."""
        with self.assertRaises(NegativeEntry) as context:
            validate_stochastic([[1.1, 0.0], [-0.1, 1.0]])
        self.assertEqual((context.exception.row, context.exception.column), (1, 0))
        with self.assertRaises(NotSquare):
            validate_stochastic([[0.5, 0.5, 0.0], [0.5, 0.5, 1.0]])

    def test_entries_are_read_only(self):
        """A validated matrix cannot be changed in place."""
        P = validate_stochastic(TWO_STATE)
        with self.assertRaises(ValueError):
            P.entries[0, 0] = 0.5


class TestStationaryAndSpectrum(unittest.TestCase):
    """Tests for stationary distributions, spectral gaps and reversibility."""

    def test_stationary_distribution(self):
        """Known chains have the expected stationary distributions."""
        cases = [
            (TWO_STATE, [2 / 3, 1 / 3]),
            ([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5]),
        ]
        for grid, expected in cases:
            with self.subTest(grid=grid):
                pi = stationary_distribution(validate_stochastic(grid))
                np.testing.assert_allclose(pi.probs, expected, atol=1e-12)

    def test_non_ergodic_chains(self):
        """A degenerate or periodic chain has no unique limit."""
        for grid in [np.eye(2), [[0.0, 1.0], [1.0, 0.0]], THREE_CYCLE]:
            with self.subTest(grid=grid), self.assertRaises(NotErgodic):
                stationary_distribution(validate_stochastic(grid))

    def test_spectral_gap(self):
        """Gaps of two-state chains follow from the second eigenvalue."""
        cases = [(TWO_STATE, 0.3), ([[0.5, 0.5], [0.5, 0.5]], 1.0), ([[0.75, 0.25], [0.25, 0.75]], 0.5)]
        for grid, expected in cases:
            with self.subTest(grid=grid):
                summary = spectral_gap(validate_stochastic(grid))
                self.assertAlmostEqual(summary.spectral_gap, expected, places=10)
                self.assertAlmostEqual(summary.phase_gap, 2 * math.acos(1 - expected), places=10)

    def test_gap_recomputable_from_eigenvalues(self):
        """The gap equals one minus the largest non-unit eigenvalue modulus."""
        summary = spectral_gap(validate_stochastic(TWO_STATE))
        np.testing.assert_allclose(summary.eigenvalues, [0.7, 1.0], atol=1e-10)
        self.assertAlmostEqual(summary.spectral_gap, 1 - max(abs(v) for v in summary.eigenvalues[:-1]))

    def test_reversibility(self):
        """Detailed balance holds for birth-death chains, not for a directed cycle."""
        P = validate_stochastic(TWO_STATE)
        self.assertTrue(is_reversible(P, Distribution(np.array([2 / 3, 1 / 3]))))
        cycle = validate_stochastic(THREE_CYCLE)
        self.assertFalse(is_reversible(cycle, uniform_distribution(3)))
        with self.assertRaises(DimensionMismatch):
            is_reversible(P, uniform_distribution(3))

    def test_time_reversal(self):
        """Reversible chains are their own reversal; the directed cycle reverses direction."""
        P = validate_stochastic(TWO_STATE)
        self.assertTrue(time_reversal(P, stationary_distribution(P)).allclose(P))
        reversed_cycle = time_reversal(validate_stochastic(THREE_CYCLE), uniform_distribution(3))
        np.testing.assert_allclose(reversed_cycle.entries, np.array(THREE_CYCLE).T, atol=1e-12)
        with self.assertRaises(ZeroStationaryProbability):
            time_reversal(P, Distribution(np.array([1.0, 0.0])))

    def test_non_reversible_gap_raises(self):
        """A lazy directed cycle is ergodic but not reversible."""
        lazy_cycle = validate_stochastic(0.5 * np.eye(3) + 0.5 * np.array(THREE_CYCLE))
        with self.assertRaises(NotReversible):
            spectral_gap(lazy_cycle)

    def test_random_reversible_chains(self):
        """Weight-ratio chains are reversible and equal their time reversal."""
        generator = np.random.default_rng(7)
        for n in [2, 5, 9, 16]:
            with self.subTest(n=n):
                weights = generator.uniform(0.1, 1.0, size=(n, n))
                weights = weights + weights.T
                P = validate_stochastic(weights / weights.sum(axis=0))
                pi = stationary_distribution(P)
                self.assertTrue(is_reversible(P, pi))
                self.assertTrue(time_reversal(P, pi).allclose(P))


class TestDistributionFunctions(unittest.TestCase):
    """Tests for fidelity, f, mode and related helpers."""

    def test_fidelity_coherent(self):
        """Fidelity of the coherent encodings."""
        cases = [
            ([0.5, 0.5], [0.5, 0.5], 1.0),
            ([1.0, 0.0], [0.5, 0.5], 0.5),
            ([0.64, 0.36], [0.36, 0.64], 0.9216),
        ]
        for a, b, expected in cases:
            with self.subTest(a=a, b=b):
                self.assertAlmostEqual(fidelity_coherent(Distribution(np.array(a)), Distribution(np.array(b))), expected)
        with self.assertRaises(DimensionMismatch):
            fidelity_coherent(uniform_distribution(2), uniform_distribution(3))

    def test_f_value(self):
        """Sum of square roots of the probabilities."""
        self.assertAlmostEqual(f_value(uniform_distribution(4)), 2.0)
        self.assertAlmostEqual(f_value(Distribution(np.array([0.0, 1.0, 0.0]))), 1.0)
        self.assertAlmostEqual(f_value(Distribution(np.array([0.5, 0.3, 0.2]))), 1.70200, delta=1e-4)

    def test_mode_breaks_ties_to_smallest_index(self):
        """The mode is the first maximal entry."""
        cases = [([0.2, 0.5, 0.3], (1, 0.5)), ([0.25] * 4, (0, 0.25)), ([0.0, 0.0, 1.0], (2, 1.0))]
        for probs, expected in cases:
            with self.subTest(probs=probs):
                self.assertEqual(mode(Distribution(np.array(probs))), expected)

    def test_total_variation_and_truncation(self):
        """Truncation conditions on the marked states."""
        pi = Distribution(np.array([0.5, 0.3, 0.2]))
        truncated = truncated_distribution(pi, [1, 2])
        np.testing.assert_allclose(truncated.probs, [0.0, 0.6, 0.4])
        self.assertAlmostEqual(total_variation(pi, truncated), 0.5)

    def test_classical_mixing_bound(self):
        """The classical estimate is log(1/pi_min) / delta."""
        self.assertAlmostEqual(classical_mixing_bound(0.5, uniform_distribution(4)), 2 * math.log(4))

    def test_invalid_distributions(self):
        """Negative entries and wrong sums are rejected."""
        for probs in [[0.5, 0.6], [1.2, -0.2], []]:
            with self.subTest(probs=probs), self.assertRaises(ValueError):
                Distribution(np.array(probs))


class TestLemmas(unittest.TestCase):
    """Tests for the two classification lemmas and the extremal distribution."""

    def test_lemma1_examples(self):
        """Point masses are mode-accessible, near-uniform distributions uniform-accessible."""
        point = lemma1_classify(Distribution(np.array([1.0, 0.0, 0.0, 0.0])))
        self.assertEqual(point.regime, Regime.ModeAccessible)
        self.assertAlmostEqual(point.fidelity_to_uniform, 0.25)
        self.assertEqual((point.mode_index, point.mode_prob), (0, 1.0))

        uniform = lemma1_classify(uniform_distribution(4))
        self.assertEqual(uniform.regime, Regime.UniformAccessible)
        self.assertAlmostEqual(uniform.fidelity_to_uniform, 1.0)

        peaked = lemma1_classify(Distribution(np.array([0.7, 0.1, 0.1, 0.1])))
        self.assertEqual(peaked.regime, Regime.UniformAccessible)
        self.assertAlmostEqual(peaked.fidelity_to_uniform, ((math.sqrt(0.7) + 3 * math.sqrt(0.1)) / 2) ** 2)

    def test_lemma1_boundary_is_uniform_accessible(self):
        """The extremal distribution sits on the boundary and counts as uniform-accessible."""
        extremal = extremal_distribution(0.5, 4)
        label = lemma1_classify(extremal)
        self.assertAlmostEqual(label.fidelity_to_uniform, 0.5)
        self.assertEqual(label.regime, Regime.UniformAccessible)

    def test_lemma2_examples(self):
        """Witness sets of peaked distributions; uniform ones violate the precondition."""
        self.assertEqual(lemma2_witness_set(Distribution(np.array([0.0, 1.0, 0.0, 0.0]))), frozenset({1}))
        probs = np.full(16, 0.05 / 15)
        probs[0] = 0.95
        self.assertEqual(lemma2_witness_set(Distribution(probs)), frozenset({0}))
        with self.assertRaises(PreconditionViolated):
            lemma2_witness_set(uniform_distribution(4))

    def test_extremal_distribution(self):
        """k entries equal to p_max, the remainder on one more state."""
        cases = [
            (0.5, 4, [0.5, 0.5, 0.0, 0.0], math.sqrt(2)),
            (0.25, 16, [0.25] * 4 + [0.0] * 12, 2.0),
            (0.4, 4, [0.4, 0.4, 0.2, 0.0], 2 * math.sqrt(0.4) + math.sqrt(0.2)),
        ]
        for p_max, n, expected, f in cases:
            with self.subTest(p_max=p_max, n=n):
                extremal = extremal_distribution(p_max, n)
                np.testing.assert_allclose(extremal.probs, expected, atol=1e-12)
                self.assertAlmostEqual(f_value(extremal), f)
        with self.assertRaises(TooFewStates):
            extremal_distribution(0.3, 3)

    @settings(max_examples=300, deadline=None)
    @given(weights_strategy())
    def test_lemma1_never_violated(self, weights):
        """Low fidelity to uniform always comes with a heavy mode."""
        pi = Distribution.normalized(weights)
        label = lemma1_classify(pi)
        threshold = 1 / math.sqrt(pi.n)
        if label.regime is Regime.ModeAccessible:
            self.assertGreaterEqual(label.mode_prob, threshold * (1 - 1e-12))
        else:
            self.assertGreaterEqual(label.fidelity_to_uniform, threshold * (1 - 1e-12))

    @settings(max_examples=300, deadline=None)
    @given(weights_strategy(min_size=4, max_size=256), st.integers(min_value=0, max_value=255))
    def test_lemma2_holds_for_concentrated_distributions(self, weights, peak):
        """Whenever f is at most N^(1/4), the witness states carry half the mass."""
        weights = np.asarray(weights)
        weights[peak % weights.size] += 10.0 * weights.sum()
        pi = Distribution.normalized(weights)
        if f_value(pi) <= pi.n**0.25:
            witnesses = lemma2_witness_set(pi)
            self.assertGreaterEqual(pi.probs[sorted(witnesses)].sum(), 0.5)
            self.assertGreaterEqual(pi.probs[sorted(witnesses)].min(), 1 / (4 * math.sqrt(pi.n)))

    @settings(max_examples=200, deadline=None)
    @given(weights_strategy())
    def test_fidelity_matches_f(self, weights):
        """F(pi, u) * N equals f(pi)^2."""
        pi = Distribution.normalized(weights)
        self.assertAlmostEqual(fidelity_coherent(pi, uniform_distribution(pi.n)) * pi.n, f_value(pi) ** 2, delta=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=2, max_value=64), st.floats(min_value=0.02, max_value=1.0))
    def test_extremal_fidelity_bound(self, n, p_max):
        """The extremal distribution keeps fidelity at least 1 / (N p_max)."""
        if math.floor(1 / p_max + 1e-12) + 1 > n:
            return
        extremal = extremal_distribution(p_max, n)
        fidelity = fidelity_coherent(extremal, uniform_distribution(n))
        self.assertGreaterEqual(fidelity, 1 / (n * p_max) - 1e-10)

    @settings(max_examples=200, deadline=None)
    @given(weights_strategy(min_size=2, max_size=16), st.floats(min_value=0.0, max_value=1.0))
    def test_moving_mass_to_larger_entry_lowers_f(self, weights, fraction):
        """Shifting mass from a smaller probability to a larger one never increases f."""
        pi = Distribution.normalized(weights)
        order = np.argsort(pi.probs)
        small, large = order[0], order[-1]
        moved = pi.probs.copy()
        shift = fraction * moved[small]
        moved[small] -= shift
        moved[large] += shift
        self.assertLessEqual(f_value(Distribution.normalized(moved)), f_value(pi) + 1e-12)


if __name__ == "__main__":
    unittest.main()
