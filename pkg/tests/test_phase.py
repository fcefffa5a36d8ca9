import math
import unittest

import numpy as np

from src.chains import metropolis_chain, proposal_graph, random_reversible_chain
from src.exceptions import ConfigTooCoarse, DomainError
from src.markov import validate_stochastic
from src.models import CostLedger
from src.phase import (
    PhaseDetectionConfig,
    ancilla_bits_for,
    approximate_reflection,
    error_budget,
    leakage,
    pattern_amplitudes,
    perturbed_success_experiment,
    phase_detect,
    pi_projective_measurement,
    preparation_cost_estimate,
    zero_pattern_amplitude,
)
from src.statevector import RngStream, StateVector, apply, ledger_scope, overlap, random_state
from src.szegedy import build_walk, exact_reflection, uniform_encoding

TWO_STATE = validate_stochastic([[0.9, 0.2], [0.1, 0.8]])
HALF = validate_stochastic([[0.5, 0.5], [0.5, 0.5]])


def moving_eigenvector(bundle) -> StateVector:
    """A walk eigenvector with nonzero eigenphase."""
    index = int(np.flatnonzero(bundle.spectrum.phases != 0.0)[0])
    return StateVector(bundle.n, bundle.spectrum.vectors[:, index], normalize=True)


def busy_state(bundle, rng: RngStream) -> StateVector:
    """A random state inside the busy subspace."""
    coefficients, residual = bundle.spectrum.project(random_state(bundle.n, rng).amplitudes)
    return StateVector(bundle.n, bundle.spectrum.assemble(coefficients, np.zeros_like(residual)), normalize=True)


def state_in_A(bundle, rng: RngStream) -> StateVector:
    """A random superposition of the diffusion images ``U_P|i>|0>``."""
    register = rng.generator.normal(size=bundle.n) + 1j * rng.generator.normal(size=bundle.n)
    return apply(bundle.U_P, StateVector.from_register_amplitudes(register / np.linalg.norm(register)))


class TestDetectionKernel(unittest.TestCase):
    """Tests for the ancilla pattern amplitudes and the leakage bound."""

    def test_zero_phase_always_reads_zero(self):
        """Phase zero puts all weight on the zero pattern."""
        for bits in [1, 2, 4]:
            with self.subTest(bits=bits):
                self.assertAlmostEqual(abs(zero_pattern_amplitude([0.0], bits)[0]), 1.0)

    def test_patterns_are_normalized(self):
        """Every eigenphase yields a normalized pattern distribution."""
        patterns = pattern_amplitudes(np.linspace(-math.pi, math.pi, 9), 3)
        np.testing.assert_allclose((np.abs(patterns) ** 2).sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(
            patterns[:, 0], zero_pattern_amplitude(np.linspace(-math.pi, math.pi, 9), 3), rtol=1e-12, atol=1e-12
        )

    def test_ancilla_bits(self):
        """At least two ancillas, and enough to resolve the gap."""
        self.assertEqual(ancilla_bits_for(math.pi), 2)
        self.assertEqual(ancilla_bits_for(0.1), 6)

    def test_leakage_vanishes_at_half_turn(self):
        """Two ancillas distinguish phase pi from zero exactly."""
        self.assertAlmostEqual(leakage(2, math.pi), 0.0)
        with self.assertRaises(DomainError):
            leakage(2, 0.0)

    def test_halving_error_at_most_doubles_cost(self):
        """Precision enters the walk count only logarithmically."""
        for gap in [math.pi, 1.5, 0.4, 0.05]:
            for exponent in range(1, 20):
                epsilon = 2.0**-exponent
                with self.subTest(gap=gap, epsilon=epsilon):
                    coarse = PhaseDetectionConfig.for_reflection(gap, epsilon)
                    fine = PhaseDetectionConfig.for_reflection(gap, epsilon / 2)
                    self.assertLessEqual(fine.controlled_walk_calls, 2 * coarse.controlled_walk_calls)
                    self.assertLessEqual(fine.reflection_error(), epsilon / 2 * (1 + 1e-9))


class TestPhaseDetection(unittest.TestCase):
    """Tests for phase_detect in its spectral and circuit forms."""

    def test_stationary_state_always_passes(self):
        """|pi> reads phase zero and is left unchanged."""
        bundle = build_walk(TWO_STATE)
        cfg = PhaseDetectionConfig.for_measurement(bundle.phase_gap, 0.01)
        target = bundle.stationary_state()
        for circuit in [False, True]:
            with self.subTest(circuit=circuit):
                zero_phase, post = phase_detect(bundle, target, cfg, RngStream(1), circuit=circuit)
                self.assertTrue(zero_phase)
                self.assertAlmostEqual(abs(overlap(post, target)), 1.0)

    def test_moving_eigenvector_never_passes_at_half_turn(self):
        """The phase-pi eigenvector of the two-state uniform chain is always rejected."""
        bundle = build_walk(HALF)
        cfg = PhaseDetectionConfig(ancilla_bits=2, repetitions=1, epsilon=0.5, phase_gap=bundle.phase_gap)
        vector = moving_eigenvector(bundle)
        for circuit in [False, True]:
            with self.subTest(circuit=circuit):
                self.assertFalse(phase_detect(bundle, vector, cfg, RngStream(2), circuit=circuit)[0])

    def test_rounds_are_charged(self):
        """Each detection round costs 2^r - 1 controlled walks."""
        bundle = build_walk(TWO_STATE)
        cfg = PhaseDetectionConfig.for_measurement(bundle.phase_gap, 0.001)
        ledger = CostLedger()
        with ledger_scope(ledger):
            phase_detect(bundle, bundle.stationary_state(), cfg, RngStream(3))
        self.assertEqual(ledger.walk_calls, cfg.controlled_walk_calls)

    def test_too_coarse_configuration(self):
        """One ancilla cannot resolve a gap below pi."""
        bundle = build_walk(TWO_STATE)
        cfg = PhaseDetectionConfig(ancilla_bits=1, repetitions=1, epsilon=0.01, phase_gap=bundle.phase_gap)
        with self.assertRaises(ConfigTooCoarse):
            phase_detect(bundle, bundle.stationary_state(), cfg, RngStream(4))


class TestProjectiveMeasurement(unittest.TestCase):
    """Tests for the approximate projective measurement onto |pi>."""

    def test_stationary_state_succeeds(self):
        """|pi> passes every time."""
        bundle = build_walk(TWO_STATE)
        rng = RngStream(5)
        target = bundle.stationary_state()
        self.assertTrue(all(pi_projective_measurement(bundle, target, 8, rng)[0] for _ in range(200)))

    def test_uniform_input_succeeds_with_fidelity(self):
        """|u> passes with frequency close to |<u|pi>|^2 = 0.97140."""
        bundle = build_walk(TWO_STATE)
        c = 10
        rng = RngStream(6)
        shots = 10_000
        uniform = uniform_encoding(bundle)
        hits = sum(pi_projective_measurement(bundle, uniform, c, rng)[0] for _ in range(shots))
        fidelity = (math.sqrt(2 / 3) + math.sqrt(1 / 3)) ** 2 / 2
        sigma = math.sqrt(fidelity * (1 - fidelity) / shots)
        self.assertLess(abs(hits / shots - fidelity), 4 * sigma + 2.0**-c)

    def test_orthogonal_input_rarely_succeeds(self):
        """A busy-subspace state orthogonal to |pi> passes at most 2^-c of the time."""
        bundle = build_walk(TWO_STATE)
        c = 10
        rng = RngStream(7)
        shots = 2_000
        vector = moving_eigenvector(bundle)
        hits = sum(pi_projective_measurement(bundle, vector, c, rng)[0] for _ in range(shots))
        bound = 2.0**-c
        self.assertLessEqual(hits / shots, bound + 4 * math.sqrt(bound / shots) + 1 / shots)

    def test_success_on_A_tracks_fidelity(self):
        """On random states in A the success rate matches |<psi|pi>|^2 within 2^-c and 4 sigma."""
        c = 8
        shots = 2_000
        for k, n in enumerate([3, 5, 8]):
            with self.subTest(n=n):
                bundle = build_walk(random_reversible_chain(n, RngStream(600, k)))
                rng = RngStream(601, k)
                psi = state_in_A(bundle, rng)
                fidelity = abs(overlap(bundle.stationary_state(), psi)) ** 2
                shots_rng = rng.substream(0)
                hits = sum(pi_projective_measurement(bundle, psi, c, shots_rng)[0] for _ in range(shots))
                sigma = math.sqrt(max(fidelity * (1 - fidelity), 1e-4) / shots)
                self.assertLess(abs(hits / shots - fidelity), 4 * sigma + 2.0**-c)

    def test_successful_output_is_close_to_pi(self):
        """A successful projection leaves a state with fidelity at least 1 - 2^-c."""
        bundle = build_walk(TWO_STATE)
        c = 6
        rng = RngStream(8)
        for _ in range(20):
            succeeded, post = pi_projective_measurement(bundle, uniform_encoding(bundle), c, rng)
            if succeeded:
                self.assertGreaterEqual(abs(overlap(post, bundle.stationary_state())) ** 2, 1 - 2.0**-c)

    def test_ideal_projection(self):
        """The exact projection returns |pi> itself on success."""
        bundle = build_walk(TWO_STATE)
        succeeded, post = pi_projective_measurement(bundle, bundle.stationary_state(), 4, RngStream(9), ideal=True)
        self.assertTrue(succeeded)
        self.assertAlmostEqual(abs(overlap(post, bundle.stationary_state())), 1.0)

    def test_perturbation_bound(self):
        """A state epsilon away from |pi(t-1)> changes the success rate by at most 2 epsilon."""
        previous = build_walk(TWO_STATE)
        current = build_walk(validate_stochastic([[0.85, 0.25], [0.15, 0.75]]))
        for epsilon in [0.0, 0.1, 0.2]:
            with self.subTest(epsilon=epsilon):
                result = perturbed_success_experiment(previous, current, epsilon, 2_000, RngStream(10, int(epsilon * 10)))
                self.assertLessEqual(result.deviation, 2 * epsilon + 4 * result.sigma + 2.0**-10)


class TestApproximateReflection(unittest.TestCase):
    """Tests for the approximate reflection about |pi>."""

    def test_fixes_pi_and_negates_half_turn_eigenvector(self):
        """|pi> is fixed and the phase-pi eigenvector is negated exactly."""
        bundle = build_walk(HALF)
        reflection = approximate_reflection(bundle, PhaseDetectionConfig.for_reflection(bundle.phase_gap, 0.01))
        target = bundle.stationary_state()
        self.assertAlmostEqual(reflection.deviation(target), 0.0)
        reflected = reflection.apply_and_reset(target, RngStream(11))
        np.testing.assert_allclose(reflected.amplitudes, target.amplitudes, atol=1e-10)
        vector = moving_eigenvector(bundle)
        reflected = reflection.apply_and_reset(vector, RngStream(12))
        np.testing.assert_allclose(reflected.amplitudes, -vector.amplitudes, atol=1e-10)

    def test_deviation_within_epsilon(self):
        """On random busy-subspace states the reflection is epsilon-close to 2|pi><pi| - 1."""
        bundle = build_walk(random_reversible_chain(4, RngStream(700)))
        epsilon = 0.05
        reflection = approximate_reflection(bundle, PhaseDetectionConfig.for_reflection(bundle.phase_gap, epsilon))
        exact = exact_reflection(bundle)
        rng = RngStream(701)
        for k in range(100):
            state = busy_state(bundle, rng.substream(k))
            extended = reflection.apply_extended(state)
            self.assertAlmostEqual(extended.norm(), 1.0, delta=1e-10)
            difference = extended.tensor.copy()
            difference[0] -= apply(exact, state).tensor[0]
            distance = float(np.linalg.norm(difference))
            self.assertAlmostEqual(distance, reflection.deviation(state), delta=1e-9)
            self.assertLessEqual(distance, epsilon + 1e-6)

    def test_circuit_matches_spectral_form(self):
        """The explicit ancilla circuit and the spectral evaluation give the same state."""
        bundle = build_walk(TWO_STATE)
        reflection = approximate_reflection(bundle, PhaseDetectionConfig.for_reflection(bundle.phase_gap, 0.1))
        state = random_state(2, RngStream(13))
        spectral_ledger, circuit_ledger = CostLedger(), CostLedger()
        with ledger_scope(spectral_ledger):
            spectral = reflection.apply_extended(state)
        with ledger_scope(circuit_ledger):
            circuit = reflection.apply_extended(state, circuit=True)
        np.testing.assert_allclose(circuit.amplitudes, spectral.amplitudes, atol=1e-9)
        self.assertEqual(spectral_ledger.walk_calls, circuit_ledger.walk_calls)
        self.assertEqual(spectral_ledger.walk_calls, reflection.walk_calls)

    def test_residue_above_epsilon_warns(self):
        """Ancillas left with more than epsilon residue are reported at WARNING."""
        bundle = build_walk(TWO_STATE)
        reflection = approximate_reflection(bundle, PhaseDetectionConfig.for_reflection(bundle.phase_gap, 0.05))
        state = moving_eigenvector(bundle)
        moving = bundle.spectrum.phases != 0.0
        reflection.zero_amplitudes = np.where(moving, 0.9, reflection.zero_amplitudes)
        with self.assertLogs("src.phase", "WARNING") as logs:
            reflection.apply_and_reset(state, RngStream(15))
        self.assertIn("residue", logs.output[0])


ANNEALING_ENERGIES = [0.0, 1.4, 1.1, 1.9, 1.2, 1.6, 1.0, 1.8]


def annealing_bundle(temperature: float = 2.0):
    """An eight-state Metropolis walk like the early steps of an annealing run."""
    return build_walk(metropolis_chain(ANNEALING_ENERGIES, temperature, proposal_graph(8)))


class TestAnnealingChain(unittest.TestCase):
    """Approximate routines on an eight-state Metropolis walk."""

    def test_measurement_accepts_stationary_state(self):
        """The approximate measurement accepts the exact |pi> on every shot."""
        bundle = annealing_bundle()
        rng = RngStream(800)
        target = bundle.stationary_state()
        hits = sum(pi_projective_measurement(bundle, target, 6, rng)[0] for _ in range(100))
        self.assertEqual(hits, 100)

    def test_measurement_on_uniform_tracks_fidelity(self):
        """The uniform encoding passes with frequency close to its fidelity with |pi>."""
        bundle = annealing_bundle()
        c = 8
        shots = 2_000
        uniform = uniform_encoding(bundle)
        fidelity = abs(overlap(bundle.stationary_state(), uniform)) ** 2
        rng = RngStream(801)
        hits = sum(pi_projective_measurement(bundle, uniform, c, rng)[0] for _ in range(shots))
        sigma = math.sqrt(max(fidelity * (1 - fidelity), 1e-4) / shots)
        self.assertLess(abs(hits / shots - fidelity), 4 * sigma + 2.0**-c)

    def test_reflection_fixes_stationary_state(self):
        """<pi|R|pi> = 1 for the approximate reflection, as for the exact one."""
        for temperature in [2.0, 0.5]:
            with self.subTest(temperature=temperature):
                bundle = annealing_bundle(temperature)
                reflection = approximate_reflection(bundle, PhaseDetectionConfig.for_reflection(bundle.phase_gap, 0.05))
                target = bundle.stationary_state()
                reflected = reflection.apply_and_reset(target, RngStream(802))
                self.assertAlmostEqual(overlap(target, reflected).real, 1.0, places=9)
                exact = apply(exact_reflection(bundle), target)
                self.assertAlmostEqual(overlap(target, exact).real, 1.0, places=9)

    def test_reflection_negates_orthogonal_busy_states(self):
        """Busy-subspace states orthogonal to |pi> come back negated up to epsilon."""
        bundle = annealing_bundle()
        epsilon = 0.05
        reflection = approximate_reflection(bundle, PhaseDetectionConfig.for_reflection(bundle.phase_gap, epsilon))
        target = bundle.stationary_state()
        rng = RngStream(803)
        for k in range(10):
            state = busy_state(bundle, rng.substream(k))
            orthogonal = state.amplitudes - overlap(target, state) * target.amplitudes
            state = StateVector(bundle.n, orthogonal, normalize=True)
            self.assertLessEqual(reflection.deviation(state), epsilon + 1e-9)


class TestErrorBudget(unittest.TestCase):
    """Tests for the per-step precision choices."""

    def test_budget_examples(self):
        """Measurement precision eta/4 and sample precision 2^-2c."""
        budget = error_budget(3, 0.5, 0.1)
        self.assertAlmostEqual(budget.epsilon_meas, 0.125)
        self.assertAlmostEqual(budget.epsilon_samp, 2.0**-6)
        self.assertAlmostEqual(error_budget(3, 1.0, 0.1).epsilon_meas, 0.25)
        self.assertAlmostEqual(error_budget(6, 0.5, 0.1).epsilon_samp, budget.epsilon_samp**2)

    def test_budget_domain(self):
        """Out-of-range confidence, eta or delta raise DomainError."""
        for args in [(0, 0.5, 0.1), (3, 0.0, 0.1), (3, 0.5, 0.0), (3, 0.5, 1.5)]:
            with self.subTest(args=args), self.assertRaises(DomainError):
                error_budget(*args)

    def test_preparation_cost_estimate(self):
        """sqrt(1/delta) sqrt(1/xi) (log(1/eps) + log sqrt(1/xi))."""
        self.assertAlmostEqual(preparation_cost_estimate(0.25, 0.25, math.exp(-1)), 4 * (1 + math.log(2)))


if __name__ == "__main__":
    unittest.main()
