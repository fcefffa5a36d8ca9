"""
Phase detection on the walk operator, the approximate projective measurement onto the
stationary state, and the approximate reflection about it.

One detection round attaches ``r`` ancilla qubits, applies Hadamards, controlled powers
``W^(2^j)`` for ``j = 0..r-1`` and Hadamards again. For an eigenvector with eigenphase
``phi`` the all-zero ancilla pattern then has amplitude ``(1/M) sum_b exp(i b phi)`` with
``M = 2^r``, whose square is the Fejer kernel. It equals one for ``phi = 0`` and is small
for ``|phi|`` at least the phase gap once ``M >= 2 pi / gap``. Rounds are repeated to push
the leakage of nonzero phases below the requested error.

Two evaluations of the same circuit are provided. The circuit form builds the ancilla
register explicitly and is used to cross-check; the spectral form evaluates the
identical measurement statistics in the eigenbasis of ``W`` and is what the protocol uses.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from src.constants import LEAKAGE_GRID_POINTS, MAX_DENSE_ANCILLA_BITS, MIN_ANCILLA_BITS
from src.exceptions import ConfigTooCoarse, DomainError
from src.markov import predicted_phase_gap
from src.statevector import (
    RngStream,
    StateVector,
    apply,
    apply_controlled,
    charge,
    overlap,
    random_state,
)
from src.szegedy import WalkBundle, exact_reflection, membership_test_A

logger = logging.getLogger(__name__)


def zero_pattern_amplitude(phases, ancilla_bits: int) -> np.ndarray:
    """``(1/M) sum_b exp(i b phi)`` for each eigenphase ``phi``."""
    phases = np.asarray(phases, dtype=float)
    m = 2**ancilla_bits
    return np.exp(1j * np.outer(phases, np.arange(m))).mean(axis=1)


def pattern_amplitudes(phases, ancilla_bits: int) -> np.ndarray:
    """Amplitudes of every ancilla pattern after one round, shape ``(len(phases), M)``."""
    phases = np.asarray(phases, dtype=float)
    m = 2**ancilla_bits
    kicked = np.exp(1j * np.outer(phases, np.arange(m))) / math.sqrt(m)
    return kicked @ scipy.linalg.hadamard(m) / math.sqrt(m)


def leakage(ancilla_bits: int, phase_gap: float) -> float:
    """Largest zero-pattern probability of a phase in ``[phase_gap, pi]`` for one round."""
    if not 0 < phase_gap <= math.pi:
        raise DomainError(f"phase gap must lie in (0, pi], got {phase_gap}")
    m = 2**ancilla_bits
    grid = np.append(np.linspace(phase_gap, math.pi, LEAKAGE_GRID_POINTS), math.pi)
    half = grid / 2.0
    fejer = np.sin(m * half) ** 2 / (m * m * np.sin(half) ** 2)
    return float(min(fejer.max(), 1.0))


def ancilla_bits_for(phase_gap: float) -> int:
    return max(MIN_ANCILLA_BITS, math.ceil(math.log2(2.0 * math.pi / phase_gap) - 1e-12))


def _rounds_for(log_target: float, leak: float) -> int:
    if leak <= 0.0:
        return 1
    return max(1, math.ceil(log_target / math.log(leak) - 1e-12))


@dataclass(frozen=True)
class PhaseDetectionConfig:
    """Ancilla count, repetition count and target error of a phase-detection routine."""

    ancilla_bits: int
    repetitions: int
    epsilon: float
    phase_gap: float

    def __post_init__(self):
        if self.ancilla_bits < 1 or self.repetitions < 1:
            raise DomainError("ancilla_bits and repetitions must be positive")
        if not 0 < self.epsilon < 1:
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @classmethod
    def for_measurement(cls, phase_gap: float, epsilon: float) -> "PhaseDetectionConfig":
        """Smallest configuration whose projective measurement errs by at most ``epsilon``."""
        if not 0 < epsilon < 1:
            raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
        bits = ancilla_bits_for(phase_gap)
        repetitions = _rounds_for(math.log(epsilon), leakage(bits, phase_gap))
        return cls(bits, repetitions, epsilon, phase_gap)

    @classmethod
    def for_reflection(cls, phase_gap: float, epsilon: float) -> "PhaseDetectionConfig":
        """Smallest configuration whose reflection deviates by at most ``epsilon``."""
        if not 0 < epsilon < 1:
            raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
        bits = ancilla_bits_for(phase_gap)
        repetitions = _rounds_for(2.0 * math.log(epsilon / 2.0), leakage(bits, phase_gap))
        return cls(bits, repetitions, epsilon, phase_gap)

    def leakage(self, phase_gap: Optional[float] = None) -> float:
        return leakage(self.ancilla_bits, phase_gap if phase_gap is not None else self.phase_gap)

    def measurement_error(self, phase_gap: Optional[float] = None) -> float:
        return self.leakage(phase_gap) ** self.repetitions

    def reflection_error(self, phase_gap: Optional[float] = None) -> float:
        return 2.0 * self.leakage(phase_gap) ** (self.repetitions / 2.0)

    @property
    def calls_per_round(self) -> int:
        return 2**self.ancilla_bits - 1

    @property
    def controlled_walk_calls(self) -> int:
        """Controlled-W applications of one full detection (all repetitions)."""
        return self.repetitions * self.calls_per_round


def _check_resolution(bundle: WalkBundle, cfg: PhaseDetectionConfig, reflection: bool = False):
    # A walk with a wider gap than the configuration assumed is resolved at least as well.
    gap = min(bundle.phase_gap, cfg.phase_gap)
    error = cfg.reflection_error(gap) if reflection else cfg.measurement_error(gap)
    if 2**cfg.ancilla_bits < 2.0 * math.pi / gap - 1e-9 or error > cfg.epsilon * (1 + 1e-9):
        raise ConfigTooCoarse(
            f"{cfg.ancilla_bits} ancillas x {cfg.repetitions} rounds give error {error:.3g} "
            f"> {cfg.epsilon:.3g} at phase gap {gap:.4g}"
        )


def _round_circuit(bundle: WalkBundle, state: StateVector, ancilla_bits: int,
                   rng: RngStream) -> tuple[int, StateVector]:
    m = 2**ancilla_bits
    hadamard = scipy.linalg.hadamard(m) / math.sqrt(m)
    extended = state.attach_ancillas(ancilla_bits)
    extended = StateVector.from_tensor(np.tensordot(hadamard, extended.tensor, axes=1))
    for j in range(ancilla_bits):
        extended = apply_controlled(bundle.W, extended, j, power=2**j)
    extended = StateVector.from_tensor(np.tensordot(hadamard, extended.tensor, axes=1))
    return extended.discard_ancillas(rng)


def _round_spectral(bundle: WalkBundle, state: StateVector, ancilla_bits: int,
                    rng: RngStream) -> tuple[int, StateVector]:
    spectrum = bundle.spectrum
    coefficients, residual = spectrum.project(state.amplitudes)
    patterns = pattern_amplitudes(spectrum.phases, ancilla_bits)
    weights = (np.abs(coefficients[:, np.newaxis] * patterns) ** 2).sum(axis=0)
    weights[0] += float(np.vdot(residual, residual).real)
    outcome = rng.choice(weights.size, weights)
    charge("walk_calls", 2**ancilla_bits - 1)
    collapsed_residual = residual if outcome == 0 else np.zeros_like(residual)
    amplitudes = spectrum.assemble(coefficients * patterns[:, outcome], collapsed_residual)
    return outcome, StateVector(state.n, amplitudes, normalize=True)


def phase_detect(bundle: WalkBundle, state: StateVector, cfg: PhaseDetectionConfig, rng: RngStream,
                 circuit: bool = False) -> tuple[bool, StateVector]:
    """Run ``cfg.repetitions`` detection rounds; report whether every round read phase zero.

    Rounds stop at the first nonzero outcome.
    """
    _check_resolution(bundle, cfg)
    detect_round = _round_circuit if circuit else _round_spectral
    for round_index in range(cfg.repetitions):
        outcome, state = detect_round(bundle, state, cfg.ancilla_bits, rng)
        if outcome != 0:
            logger.debug("phase detection round %d read pattern %d", round_index, outcome)
            return False, state
    return True, state


def pi_projective_measurement(bundle: WalkBundle, state: StateVector, c: int, rng: RngStream,
                              cfg: Optional[PhaseDetectionConfig] = None,
                              ideal: bool = False) -> tuple[bool, StateVector]:
    """Approximate two-outcome measurement of ``|pi><pi|``.

    Checks membership in ``A`` first, then requires every phase-detection round to read
    zero. With ``ideal`` the projection is exact and charged as one detection round.
    """
    cfg = cfg or PhaseDetectionConfig.for_measurement(bundle.phase_gap, 2.0**-c)
    charge("projective_measurements")
    if ideal:
        charge("walk_calls", cfg.calls_per_round)
        target = bundle.stationary_state()
        success_probability = abs(overlap(target, state)) ** 2
        if rng.random() < success_probability:
            return True, target
        remainder = state.amplitudes - overlap(target, state) * target.amplitudes
        return False, StateVector(state.n, remainder, normalize=True)
    inside, state = membership_test_A(state, bundle.U_P, rng)
    if not inside:
        return False, state
    return phase_detect(bundle, state, cfg, rng)


def _hadamard_on_round(tensor: np.ndarray, round_index: int, ancilla_bits: int, rounds: int) -> np.ndarray:
    m = 2**ancilla_bits
    hadamard = scipy.linalg.hadamard(m) / math.sqrt(m)
    n = tensor.shape[-1]
    high = 2 ** ((rounds - round_index - 1) * ancilla_bits)
    low = 2 ** (round_index * ancilla_bits)
    split = tensor.reshape(high, m, low, n, n)
    return np.einsum("ab,xbyij->xayij", hadamard, split).reshape(tensor.shape)


class ApproximateReflection:
    """Phase detection, sign flip of every nonzero ancilla pattern, inverse detection.

    On walk-space inputs with ancillas at ``|0>`` it approximates ``2|pi><pi| - 1`` within
    ``cfg.epsilon``. One application costs ``2 * cfg.controlled_walk_calls`` walk calls.
    """

    def __init__(self, bundle: WalkBundle, cfg: PhaseDetectionConfig):
        _check_resolution(bundle, cfg, reflection=True)
        self.bundle = bundle
        self.cfg = cfg
        self.zero_amplitudes = zero_pattern_amplitude(bundle.spectrum.phases, cfg.ancilla_bits)
        self.patterns = pattern_amplitudes(bundle.spectrum.phases, cfg.ancilla_bits)

    @property
    def ancilla_bits(self) -> int:
        return self.cfg.ancilla_bits * self.cfg.repetitions

    @property
    def walk_calls(self) -> int:
        return 2 * self.cfg.controlled_walk_calls

    def _charge(self):
        charge("walk_calls", self.walk_calls)

    def _zero_return(self) -> np.ndarray:
        """``|a_m|^(2k)``: weight of the all-zero pattern before the flip."""
        return np.abs(self.zero_amplitudes) ** (2 * self.cfg.repetitions)

    def apply_extended(self, state: StateVector, circuit: bool = False) -> StateVector:
        """Full walk x ancilla output for a walk-space input with fresh ancillas."""
        if self.ancilla_bits > MAX_DENSE_ANCILLA_BITS:
            raise DomainError(f"{self.ancilla_bits} ancilla qubits exceed the dense limit")
        if circuit:
            return self._apply_circuit(state)
        spectrum = self.bundle.spectrum
        k = self.cfg.repetitions
        coefficients, residual = spectrum.project(state.amplitudes)
        tensor = np.zeros((2**self.ancilla_bits, state.n * state.n), dtype=complex)
        for m, coefficient in enumerate(coefficients):
            if coefficient == 0:
                continue
            chi = np.ones(1, dtype=complex)
            for _ in range(k):
                chi = np.kron(np.conj(self.patterns[m]), chi)
            ancilla = 2.0 * self.zero_amplitudes[m] ** k * chi
            ancilla[0] -= 1.0
            tensor += np.outer(ancilla, coefficient * spectrum.vectors[:, m])
        tensor[0] += residual
        self._charge()
        return StateVector(state.n, tensor, self.ancilla_bits)

    def _apply_circuit(self, state: StateVector) -> StateVector:
        r, k = self.cfg.ancilla_bits, self.cfg.repetitions
        walk, walk_inverse = self.bundle.W, self.bundle.W.adjoint()
        extended = state.attach_ancillas(r * k)
        for q in range(k):
            extended = StateVector.from_tensor(_hadamard_on_round(extended.tensor, q, r, k))
            for j in range(r):
                extended = apply_controlled(walk, extended, q * r + j, power=2**j)
            extended = StateVector.from_tensor(_hadamard_on_round(extended.tensor, q, r, k))
        tensor = -extended.tensor
        tensor[0] = -tensor[0]
        extended = StateVector.from_tensor(tensor)
        for q in reversed(range(k)):
            extended = StateVector.from_tensor(_hadamard_on_round(extended.tensor, q, r, k))
            for j in reversed(range(r)):
                extended = apply_controlled(walk_inverse, extended, q * r + j, power=2**j)
            extended = StateVector.from_tensor(_hadamard_on_round(extended.tensor, q, r, k))
        return extended

    def apply_and_reset(self, state: StateVector, rng: RngStream) -> StateVector:
        """Apply the reflection, then measure and reset the ancillas (one trajectory)."""
        spectrum = self.bundle.spectrum
        k = self.cfg.repetitions
        coefficients, residual = spectrum.project(state.amplitudes)
        weights = np.abs(coefficients) ** 2
        x = self._zero_return()
        self._charge()

        clean_probability = float((weights * (2 * x - 1) ** 2).sum() + np.vdot(residual, residual).real)
        dirty_weights = weights * 4 * x * (1 - x)
        residue = math.sqrt(float(dirty_weights.sum()))
        if residue > self.cfg.epsilon * (1 + 1e-9):
            logger.warning("reflection ancillas keep residue %.3g above epsilon %.3g", residue, self.cfg.epsilon)
        if rng.random() * (clean_probability + dirty_weights.sum()) < clean_probability:
            amplitudes = spectrum.assemble(coefficients * (2 * x - 1), residual)
            return StateVector(state.n, amplitudes, normalize=True)

        # Some ancilla ended nonzero: draw its full pattern round by round.
        source = rng.choice(dirty_weights.size, dirty_weights)
        round_probabilities = np.abs(self.patterns[source]) ** 2
        p0 = float(round_probabilities[0])
        first_weights = p0 ** np.arange(k) * (1.0 - p0)
        first_nonzero = rng.choice(k, first_weights)
        outcomes = []
        for q in range(k):
            if q < first_nonzero:
                outcomes.append(0)
            elif q == first_nonzero:
                conditioned = round_probabilities.copy()
                conditioned[0] = 0.0
                outcomes.append(rng.choice(conditioned.size, conditioned))
            else:
                outcomes.append(rng.choice(round_probabilities.size, round_probabilities))
        collapsed = coefficients * self.zero_amplitudes**k
        for outcome in outcomes:
            collapsed = collapsed * np.conj(self.patterns[:, outcome])
        logger.debug("reflection ancillas read %s", outcomes)
        amplitudes = spectrum.assemble(collapsed, np.zeros_like(residual))
        return StateVector(state.n, amplitudes, normalize=True)

    def reflect(self, state: StateVector, rng: RngStream) -> StateVector:
        return self.apply_and_reset(state, rng)

    def deviation(self, state: StateVector) -> float:
        """``||(ARO - R(P)) v||`` for a walk-space input ``v`` with fresh ancillas."""
        coefficients, _ = self.bundle.spectrum.project(state.amplitudes)
        moving = self.bundle.spectrum.phases != 0.0
        weights = np.abs(coefficients[moving]) ** 2 * 4 * self._zero_return()[moving]
        return float(np.sqrt(weights.sum()))


class IdealReflection:
    """Exact ``2|pi><pi| - 1``, charged as one unrepeated reflection."""

    def __init__(self, bundle: WalkBundle, cfg: Optional[PhaseDetectionConfig] = None):
        cfg = cfg or PhaseDetectionConfig.for_reflection(bundle.phase_gap, 0.5)
        self.bundle = bundle
        self.operator = exact_reflection(bundle, walk_cost=2 * cfg.calls_per_round)

    def reflect(self, state: StateVector, rng: RngStream) -> StateVector:
        return apply(self.operator, state)


def approximate_reflection(bundle: WalkBundle, cfg: PhaseDetectionConfig) -> ApproximateReflection:
    return ApproximateReflection(bundle, cfg)


@dataclass(frozen=True)
class ErrorBudget:
    epsilon_meas: float
    epsilon_samp: float
    measurement: PhaseDetectionConfig
    sampling: PhaseDetectionConfig
    reflection: PhaseDetectionConfig


def error_budget(c: int, eta: float, delta: float) -> ErrorBudget:
    """Precisions for one protocol step.

    Projections onto the next stationary state use ``eta / 4`` so a rebuilt previous
    state still succeeds with rate at least ``eta / 2``; the sample stage uses ``2^-2c``.
    """
    if int(c) != c or c < 1:
        raise DomainError(f"confidence c must be an integer >= 1, got {c}")
    if not 0 < eta <= 1:
        raise DomainError(f"eta must lie in (0, 1], got {eta}")
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    phase_gap = predicted_phase_gap(delta)
    epsilon_meas = eta / 4.0
    epsilon_samp = 2.0 ** (-2 * c)
    return ErrorBudget(
        epsilon_meas=epsilon_meas,
        epsilon_samp=epsilon_samp,
        measurement=PhaseDetectionConfig.for_measurement(phase_gap, epsilon_meas),
        sampling=PhaseDetectionConfig.for_measurement(phase_gap, epsilon_samp),
        reflection=PhaseDetectionConfig.for_reflection(phase_gap, epsilon_samp),
    )


def preparation_cost_estimate(delta: float, fidelity: float, epsilon: float) -> float:
    """``sqrt(1/delta) sqrt(1/xi) (log(1/eps) + log sqrt(1/xi))`` for initial fidelity ``xi``."""
    if not 0 < delta <= 1 or not 0 < fidelity <= 1 or not 0 < epsilon < 1:
        raise DomainError("delta and fidelity must lie in (0, 1], epsilon in (0, 1)")
    inverse_root = math.sqrt(1.0 / fidelity)
    return math.sqrt(1.0 / delta) * inverse_root * (math.log(1.0 / epsilon) + math.log(inverse_root))


@dataclass(frozen=True)
class PerturbationResult:
    eta: float
    eta_perturbed: float
    epsilon: float
    shots: int

    @property
    def sigma(self) -> float:
        p = min(max(self.eta_perturbed, 1.0 / self.shots), 1.0 - 1.0 / self.shots)
        return math.sqrt(p * (1 - p) / self.shots)

    @property
    def deviation(self) -> float:
        return abs(self.eta - self.eta_perturbed)


def perturbed_success_experiment(bundle_prev: WalkBundle, bundle_cur: WalkBundle, epsilon: float,
                                 shots: int, rng: RngStream, c: int = 10) -> PerturbationResult:
    """Success rate of the ``|pi(t)>`` measurement on a state ``epsilon``-far from ``|pi(t-1)>``."""
    if bundle_prev.n != bundle_cur.n:
        raise DomainError("bundles act on different walk spaces")
    if not 0 <= epsilon < 1:
        raise DomainError(f"epsilon must lie in [0, 1), got {epsilon}")
    previous = bundle_prev.stationary_state()
    noise = random_state(previous.n, rng.substream(0))
    orthogonal = noise.amplitudes - overlap(previous, noise) * previous.amplitudes
    orthogonal /= np.linalg.norm(orthogonal)
    perturbed = StateVector(
        previous.n,
        math.sqrt(1 - epsilon**2) * previous.amplitudes + epsilon * orthogonal,
        normalize=True,
    )
    eta = abs(overlap(bundle_cur.stationary_state(), previous)) ** 2
    cfg = PhaseDetectionConfig.for_measurement(bundle_cur.phase_gap, 2.0**-c)
    shots_rng = rng.substream(1)
    successes = sum(pi_projective_measurement(bundle_cur, perturbed, c, shots_rng, cfg)[0] for _ in range(shots))
    return PerturbationResult(eta=eta, eta_perturbed=successes / shots, epsilon=epsilon, shots=shots)
