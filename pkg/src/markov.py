"""
Classical Markov-chain and distribution mathematics.

Transition matrices are column-stochastic: entry ``P[j, i]`` is the probability of moving
from state ``i`` to state ``j``, so a distribution evolves as ``pi -> P @ pi``. This module
validates chains, computes stationary distributions and spectral quantities, checks detailed
balance, and implements the two classification lemmas that decide which preparation route is
guaranteed to be cheap for a given stationary distribution.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.linalg

from src.constants import (
    ERGODICITY_TOL,
    POWER_ITERATION_MAX_STEPS,
    REVERSIBILITY_TOL,
    STATIONARY_TOL,
    STOCHASTIC_TOL,
)
from src.exceptions import (
    ColumnSumViolation,
    DimensionMismatch,
    DomainError,
    LemmaViolation,
    NegativeEntry,
    NotErgodic,
    NotReversible,
    NotSquare,
    PreconditionViolated,
    TooFewStates,
    ZeroStationaryProbability,
)


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """A validated column-stochastic transition matrix over ``n`` states."""

    entries: np.ndarray
    tol: float = field(default=STOCHASTIC_TOL, repr=False)

    def __post_init__(self):
        raw = np.asarray(self.entries, dtype=float)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1] or raw.shape[0] == 0:
            raise NotSquare(f"transition matrix must be square, got shape {raw.shape}")
        negative = np.argwhere(raw < 0)
        if len(negative):
            row, column = (int(k) for k in negative[0])
            raise NegativeEntry(row, column, float(raw[row, column]))
        sums = raw.sum(axis=0)
        for column, total in enumerate(sums):
            if abs(total - 1.0) > self.tol:
                raise ColumnSumViolation(column, float(total))
        object.__setattr__(self, "entries", _frozen(raw))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def column(self, i: int) -> np.ndarray:
        """Outgoing transition probabilities of state ``i``."""
        return self.entries[:, i]

    def allclose(self, other: "StochasticMatrix", atol: float = 1e-10) -> bool:
        return self.n == other.n and np.allclose(self.entries, other.entries, atol=atol)


@dataclass(frozen=True, eq=False)
class Distribution:
    """A probability vector over ``n`` states."""

    probs: np.ndarray
    tol: float = field(default=STOCHASTIC_TOL, repr=False)

    def __post_init__(self):
        raw = np.asarray(self.probs, dtype=float)
        if raw.ndim != 1 or raw.size == 0:
            raise DomainError(f"distribution must be a non-empty vector, got shape {raw.shape}")
        if np.any(raw < 0):
            raise DomainError(f"distribution has negative entries: {raw.min()}")
        if abs(raw.sum() - 1.0) > self.tol:
            raise DomainError(f"distribution sums to {raw.sum()}, expected 1")
        object.__setattr__(self, "probs", _frozen(raw))

    @classmethod
    def normalized(cls, weights: Iterable[float]) -> "Distribution":
        """Build a distribution from non-negative weights."""
        weights = np.asarray(weights, dtype=float)
        return cls(weights / weights.sum())

    @property
    def n(self) -> int:
        return self.probs.size

    @property
    def p_min(self) -> float:
        return float(self.probs.min())

    @property
    def p_max(self) -> float:
        return float(self.probs.max())

    def mode(self) -> tuple[int, float]:
        return mode(self)

    def f_value(self) -> float:
        return f_value(self)

    def fidelity(self, other: "Distribution") -> float:
        return fidelity_coherent(self, other)

    def allclose(self, other: "Distribution", atol: float = 1e-10) -> bool:
        return self.n == other.n and np.allclose(self.probs, other.probs, atol=atol)


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: tuple[float, ...]
    spectral_gap: float
    phase_gap: float


class Regime(enum.Enum):
    UniformAccessible = "UniformAccessible"
    ModeAccessible = "ModeAccessible"


@dataclass(frozen=True)
class RegimeLabel:
    regime: Regime
    fidelity_to_uniform: float
    mode_index: int
    mode_prob: float


def validate_stochastic(raw, tol: float = STOCHASTIC_TOL) -> StochasticMatrix:
    """Validate a square grid of transition probabilities."""
    return StochasticMatrix(np.asarray(raw, dtype=float), tol=tol)


def uniform_distribution(n: int) -> Distribution:
    if n < 1:
        raise DomainError(f"state count must be positive, got {n}")
    return Distribution(np.full(n, 1.0 / n))


def _power_iteration(P: StochasticMatrix, start: np.ndarray, tol: float) -> np.ndarray:
    # The lazy chain shares the fixed point and cannot oscillate.
    lazy = 0.5 * (P.entries + np.eye(P.n))
    vector = start
    for _ in range(POWER_ITERATION_MAX_STEPS):
        vector = lazy @ vector
        vector = vector / vector.sum()
        if np.abs(P.entries @ vector - vector).sum() <= tol:
            return vector
    raise NotErgodic("power iteration did not converge to a stationary distribution")


def stationary_distribution(P: StochasticMatrix, tol: float = STATIONARY_TOL) -> Distribution:
    """Return the unique stationary distribution of an ergodic chain."""
    eigenvalues, eigenvectors = scipy.linalg.eig(P.entries)
    unit = np.abs(eigenvalues - 1.0) < ERGODICITY_TOL
    if unit.sum() != 1:
        raise NotErgodic(f"eigenvalue 1 has multiplicity {int(unit.sum())}")
    peripheral = np.abs(eigenvalues) > 1.0 - ERGODICITY_TOL
    if peripheral.sum() != 1:
        raise NotErgodic("chain is periodic: another eigenvalue lies on the unit circle")

    vector = np.real(eigenvectors[:, np.argmax(unit)])
    vector = vector / vector.sum()
    if vector.min() <= 1e-14:
        raise NotErgodic(f"fixed point has a zero-probability state ({vector.min():.3e})")
    if np.abs(P.entries @ vector - vector).sum() > tol:
        vector = _power_iteration(P, vector, tol)
    return Distribution(vector)


def is_reversible(P: StochasticMatrix, pi: Distribution, tol: float = REVERSIBILITY_TOL) -> bool:
    """Check detailed balance ``pi_i P_ij = pi_j P_ji`` for every pair of states."""
    if P.n != pi.n:
        raise DimensionMismatch(f"chain has {P.n} states, distribution has {pi.n}")
    flows = P.entries * pi.probs[np.newaxis, :]
    return bool(np.all(np.abs(flows - flows.T) <= tol))


def time_reversal(P: StochasticMatrix, pi: Distribution) -> StochasticMatrix:
    """Return ``P* = D(pi) P^T D(pi)^-1``."""
    if P.n != pi.n:
        raise DimensionMismatch(f"chain has {P.n} states, distribution has {pi.n}")
    if pi.p_min <= 0:
        raise ZeroStationaryProbability("time reversal needs a strictly positive distribution")
    reversed_entries = pi.probs[:, np.newaxis] * P.entries.T / pi.probs[np.newaxis, :]
    reversed_entries = reversed_entries / reversed_entries.sum(axis=0, keepdims=True)
    return StochasticMatrix(reversed_entries)


def spectral_gap(P: StochasticMatrix, pi: Optional[Distribution] = None) -> SpectralSummary:
    """Eigenvalues, spectral gap and predicted phase gap of a reversible ergodic chain."""
    pi = pi if pi is not None else stationary_distribution(P)
    if not is_reversible(P, pi):
        raise NotReversible("spectral gap requires a time-reversible chain")

    root = np.sqrt(pi.probs)
    symmetric = P.entries * root[np.newaxis, :] / root[:, np.newaxis]
    symmetric = 0.5 * (symmetric + symmetric.T)
    eigenvalues = np.sort(scipy.linalg.eigvalsh(symmetric))

    rest = np.delete(eigenvalues, np.argmin(np.abs(eigenvalues - 1.0)))
    gap = 1.0 - float(np.max(np.abs(rest))) if rest.size else 1.0
    gap = min(max(gap, 0.0), 1.0)
    if gap <= 0:
        raise NotErgodic("spectral gap is zero")
    return SpectralSummary(
        eigenvalues=tuple(float(v) for v in eigenvalues),
        spectral_gap=gap,
        phase_gap=predicted_phase_gap(gap),
    )


def predicted_phase_gap(delta: float) -> float:
    """Phase gap implied by a spectral gap: ``2 * arccos(1 - delta)``."""
    return 2.0 * math.acos(min(max(1.0 - delta, -1.0), 1.0))


def fidelity_coherent(a: Distribution, b: Distribution) -> float:
    """Fidelity of the coherent encodings, ``(sum_i sqrt(a_i b_i))^2``."""
    if a.n != b.n:
        raise DimensionMismatch(f"distributions have {a.n} and {b.n} states")
    overlap = float(np.sqrt(a.probs * b.probs).sum())
    return min(max(overlap * overlap, 0.0), 1.0)


def f_value(pi: Distribution) -> float:
    return float(np.sqrt(pi.probs).sum())


def mode(pi: Distribution) -> tuple[int, float]:
    """Most likely state (smallest index on ties) and its probability."""
    index = int(np.argmax(pi.probs))
    return index, float(pi.probs[index])


def total_variation(a: Distribution, b: Distribution) -> float:
    if a.n != b.n:
        raise DimensionMismatch(f"distributions have {a.n} and {b.n} states")
    return 0.5 * float(np.abs(a.probs - b.probs).sum())


def truncated_distribution(pi: Distribution, marked: Iterable[int]) -> Distribution:
    """Condition ``pi`` on the marked states."""
    mask = np.zeros(pi.n, dtype=bool)
    mask[list(marked)] = True
    mass = float(pi.probs[mask].sum())
    if mass <= 0:
        raise DomainError("marked set carries no stationary probability")
    return Distribution(np.where(mask, pi.probs / mass, 0.0))


def classical_mixing_bound(delta: float, pi: Distribution) -> float:
    """Classical reversible mixing estimate ``(1/delta) * ln(1/pi_min)``."""
    if not 0 < delta <= 1:
        raise DomainError(f"spectral gap must lie in (0, 1], got {delta}")
    if pi.p_min <= 0:
        raise ZeroStationaryProbability("mixing bound needs a strictly positive distribution")
    return math.log(1.0 / pi.p_min) / delta


def lemma1_classify(pi: Distribution) -> RegimeLabel:
    """Decide which preparation route is guaranteed for ``pi``.

    Distributions whose coherent encoding has fidelity at least ``1/sqrt(N)`` with the
    uniform encoding are reachable from uniform; all others have a mode of probability at
    least ``1/sqrt(N)`` and are reachable by unsearching from it.
    """
    threshold = 1.0 / math.sqrt(pi.n)
    fidelity = fidelity_coherent(pi, uniform_distribution(pi.n))
    index, probability = mode(pi)
    if fidelity >= threshold * (1.0 - 1e-12):
        regime = Regime.UniformAccessible
    else:
        regime = Regime.ModeAccessible
        if probability < threshold * (1.0 - 1e-12):
            raise LemmaViolation(
                f"fidelity {fidelity} < {threshold} but mode probability {probability} < {threshold}"
            )
    return RegimeLabel(
        regime=regime,
        fidelity_to_uniform=fidelity,
        mode_index=index,
        mode_prob=probability,
    )


def lemma2_witness_set(pi: Distribution) -> frozenset[int]:
    """States with probability at least ``1/(4 sqrt(N))``; they carry at least half the mass."""
    n = pi.n
    if f_value(pi) > n**0.25 * (1.0 + 1e-12):
        raise PreconditionViolated(f"f(pi) = {f_value(pi)} exceeds N^(1/4) = {n**0.25}")
    floor = 1.0 / (4.0 * math.sqrt(n))
    witnesses = frozenset(int(i) for i in np.flatnonzero(pi.probs >= floor))
    mass = float(pi.probs[list(witnesses)].sum()) if witnesses else 0.0
    if not witnesses or mass < 0.5:
        raise LemmaViolation(f"witness set {sorted(witnesses)} carries mass {mass} < 1/2")
    return witnesses


def extremal_distribution(p_max: float, n: int) -> Distribution:
    """The fidelity-minimizing distribution whose largest probability is ``p_max``."""
    if not 0 < p_max <= 1:
        raise DomainError(f"p_max must lie in (0, 1], got {p_max}")
    k = math.floor(1.0 / p_max + 1e-12)
    remainder = 1.0 - k * p_max
    if remainder < 1e-12:
        remainder = 0.0
    needed = k + (1 if remainder > 0 else 0)
    if needed > n:
        raise TooFewStates(f"p_max = {p_max} needs {needed} states, only {n} available")
    probs = np.zeros(n)
    probs[:k] = p_max
    if remainder > 0:
        probs[k] = remainder
    return Distribution(probs / probs.sum())
