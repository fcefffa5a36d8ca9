"""
Amplitude amplification over the walk space.

Every routine here is an instance of one engine: prepare a start state, apply a number of
Grover-type iterations built from two reflections, then run a verifying measurement, and
repeat over an iteration schedule until the measurement succeeds. The schedule is a fixed
optimal count when the overlap with the target is known, and the randomized growing
schedule of Boyer, Brassard, Hoyer and Tapp when only a lower bound is available.
"""

import contextlib
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from src.constants import BOYER_CAPPED_DRAWS, BOYER_GROWTH, DIRECT_ATTEMPTS_PER_CONFIDENCE, fallback_iteration_cap
from src.exceptions import DomainError, ExhaustedRetries
from src.models import AmplificationReport, CostLedger
from src.phase import (
    ApproximateReflection,
    IdealReflection,
    PhaseDetectionConfig,
    pi_projective_measurement,
)
from src.statevector import (
    ComposedOperator,
    DiagonalRegisterOperator,
    LinearOperator,
    Register,
    RngStream,
    StateVector,
    VectorReflection,
    active_ledger,
    apply,
    ledger_scope,
    measure_register,
)
from src.szegedy import WalkBundle, basis_encoding, coherent_encoding, uniform_encoding

logger = logging.getLogger(__name__)

Verification = tuple[bool, Optional[StateVector], Optional[int]]


@dataclass(frozen=True)
class MarkedSet:
    indices: frozenset[int]
    n: int

    def __post_init__(self):
        indices = frozenset(int(i) for i in self.indices)
        if not indices:
            raise DomainError("a marked set must be non-empty")
        if min(indices) < 0 or max(indices) >= self.n:
            raise DomainError(f"marked indices {sorted(indices)} out of range for n={self.n}")
        object.__setattr__(self, "indices", indices)

    def __contains__(self, index: int) -> bool:
        return index in self.indices

    def __len__(self):
        return len(self.indices)

    def weight(self, pi) -> float:
        """Stationary mass of the marked states."""
        return float(pi.probs[sorted(self.indices)].sum())


def marked_phase_flip(M: MarkedSet) -> DiagonalRegisterOperator:
    """``Z_M = 1 - 2 sum_{i in M} |i><i|`` on register I."""
    phases = np.ones(M.n, dtype=complex)
    phases[sorted(M.indices)] = -1.0
    return DiagonalRegisterOperator(M.n, phases, Register.I)


def uniform_reflection(bundle: WalkBundle) -> LinearOperator:
    """Exact ``2|u><u| - 1`` for ``|u> = U_P |uniform>|0>``, charged as two diffusion calls."""
    n = bundle.n
    flat = np.zeros((n, n), dtype=complex)
    flat[:, 0] = 1.0 / math.sqrt(n)
    about_input = VectorReflection(flat, n)
    return ComposedOperator([bundle.U_P, about_input, bundle.U_P.adjoint()], tag="diffusion", cost=2)


def grover_iterations(overlap: float) -> int:
    """Optimal iteration count ``floor((pi/4) / asin(sqrt(F)))`` for a known overlap ``F``."""
    if not 0 < overlap <= 1:
        raise DomainError(f"overlap must lie in (0, 1], got {overlap}")
    return math.floor((math.pi / 4) / math.asin(math.sqrt(overlap)) + 1e-12) if overlap < 1 else 0


def boyer_schedule(max_iterations: int, rng: RngStream) -> Iterator[int]:
    """One sweep of iteration counts for an unknown overlap.

    Counts are drawn uniformly from ``[1, ceil(m)]`` while ``m`` grows geometrically from 1
    up to ``max_iterations``; the sweep ends with a few draws over the full capped range.
    """
    if max_iterations < 1:
        raise DomainError(f"max_iterations must be >= 1, got {max_iterations}")
    bound = 1.0
    while math.ceil(bound) < max_iterations:
        yield rng.integers(1, math.ceil(bound) + 1)
        bound *= BOYER_GROWTH
    for _ in range(BOYER_CAPPED_DRAWS):
        yield rng.integers(1, max_iterations + 1)


def boyer_sweeps(max_iterations: int, rng: RngStream, sweeps: int) -> Iterator[int]:
    return itertools.chain.from_iterable(boyer_schedule(max_iterations, rng) for _ in range(sweeps))


def reflector_for(bundle: WalkBundle, epsilon: float, ideal: bool = False):
    """The reflection about ``|pi>`` used by the amplification loops."""
    if ideal:
        return IdealReflection(bundle)
    return ApproximateReflection(bundle, PhaseDetectionConfig.for_reflection(bundle.predicted_phase_gap, epsilon))


@contextlib.contextmanager
def _metered() -> Iterator[CostLedger]:
    ledger = active_ledger()
    if ledger is not None:
        yield ledger
        return
    with ledger_scope(CostLedger()) as scoped:
        yield scoped


def amplify(start: Callable[[], StateVector], iterate: Callable[[StateVector], StateVector],
            verify: Callable[[StateVector], Verification], schedule: Iterable[int],
            direct_attempts: int = 0) -> AmplificationReport:
    """Try ``iterate^t start()`` for every ``t`` of the schedule until ``verify`` accepts."""
    with _metered() as ledger:
        before = ledger.snapshot()
        iterations_used = 0
        attempts = 0
        for iterations in itertools.chain(itertools.repeat(0, direct_attempts), schedule):
            attempts += 1
            ledger.record("wall_steps")
            state = start()
            for _ in range(iterations):
                state = iterate(state)
            ledger.record("amplification_iterations", iterations)
            iterations_used += iterations
            succeeded, output_state, index = verify(state)
            logger.debug("attempt %d with %d iterations: %s", attempts, iterations, succeeded)
            if succeeded:
                return AmplificationReport(
                    succeeded=True,
                    iterations_used=iterations_used,
                    walk_calls=ledger.since(before).walk_calls,
                    attempts=attempts,
                    output_state=output_state,
                    sampled_index=index,
                )
        return AmplificationReport(
            succeeded=False,
            iterations_used=iterations_used,
            walk_calls=ledger.since(before).walk_calls,
            attempts=attempts,
        )


def _projective_verifier(bundle: WalkBundle, c: int, rng: RngStream, ideal: bool,
                         cfg: Optional[PhaseDetectionConfig]) -> Callable[[StateVector], Verification]:
    cfg = cfg or PhaseDetectionConfig.for_measurement(bundle.predicted_phase_gap, 2.0**-c)

    def verify(state: StateVector) -> Verification:
        succeeded, collapsed = pi_projective_measurement(bundle, state, c, rng, cfg, ideal=ideal)
        return succeeded, collapsed, None

    return verify


def _exhausted(report: AmplificationReport, what: str) -> ExhaustedRetries:
    return ExhaustedRetries(
        f"{what} failed after {report.attempts} attempts ({report.iterations_used} iterations)",
        walk_calls=report.walk_calls,
    )


def search(bundle: WalkBundle, M: MarkedSet, c: int, rng: RngStream,
           start: Optional[StateVector] = None, reflector=None, overlap: Optional[float] = None,
           max_iterations: Optional[int] = None, ideal: bool = False) -> AmplificationReport:
    """Sample from ``pi`` conditioned on ``M`` by amplifying ``|pi>`` toward the marked states.

    Each iteration applies ``Z_M`` and then the reflection about ``|pi>``. With neither
    ``overlap`` nor ``max_iterations`` given, the marked mass is read from the stationary
    oracle and the optimal count is used; with only ``max_iterations`` the randomized
    schedule runs for ``c`` sweeps.
    """
    if M.n != bundle.n:
        raise DomainError(f"marked set over {M.n} states, walk over {bundle.n}")
    reflector = reflector or reflector_for(bundle, 2.0 ** (-2 * c), ideal)
    flip = marked_phase_flip(M)

    def prepare() -> StateVector:
        return start.copy() if start is not None else coherent_encoding(bundle.pi, bundle.U_P)

    def iterate(state: StateVector) -> StateVector:
        return reflector.reflect(apply(flip, state), rng)

    def verify(state: StateVector) -> Verification:
        index, collapsed = measure_register(state, Register.I, rng)
        return index in M, collapsed, index

    if overlap is None and max_iterations is None:
        overlap = M.weight(bundle.pi)
        if overlap <= 0:
            raise DomainError("marked set carries no stationary probability")
    if overlap is not None:
        schedule = itertools.repeat(grover_iterations(overlap), c)
    else:
        schedule = boyer_sweeps(max_iterations, rng, c)
    report = amplify(prepare, iterate, verify, schedule)
    if not report.succeeded:
        raise _exhausted(report, "search")
    return report


def unsearch_from_basis(bundle: WalkBundle, seed_index: int, c: int, rng: RngStream,
                        reflector=None, overlap: Optional[float] = None,
                        max_iterations: Optional[int] = None, sweeps: Optional[int] = None,
                        measurement_cfg: Optional[PhaseDetectionConfig] = None,
                        ideal: bool = False) -> AmplificationReport:
    """Prepare ``|pi>`` from ``|i'> = U_P|i>|0>`` by running the search for ``{i}`` backwards.

    Each iteration applies the reflection about ``|pi>`` and then ``Z_{i}``; the result is
    purified by the projective measurement onto ``|pi>``.
    """
    if overlap is None and max_iterations is None:
        overlap = float(bundle.pi.probs[seed_index])
        if overlap <= 0:
            raise DomainError(f"seed {seed_index} has zero stationary probability")
    reflector = reflector or reflector_for(bundle, 2.0 ** (-2 * c), ideal)
    flip = marked_phase_flip(MarkedSet(frozenset([seed_index]), bundle.n))

    def iterate(state: StateVector) -> StateVector:
        return apply(flip, reflector.reflect(state, rng))

    if overlap is not None:
        schedule = itertools.repeat(grover_iterations(overlap), sweeps or c)
    else:
        schedule = boyer_sweeps(max_iterations, rng, sweeps or c)
    report = amplify(
        lambda: basis_encoding(bundle, seed_index),
        iterate,
        _projective_verifier(bundle, c, rng, ideal, measurement_cfg),
        schedule,
    )
    if not report.succeeded:
        raise _exhausted(report, f"unsearch from seed {seed_index}")
    return report


def prepare_from_uniform_amplified(bundle: WalkBundle, c: int, rng: RngStream,
                                   max_iterations: Optional[int] = None, reflector=None,
                                   sweeps: Optional[int] = None,
                                   measurement_cfg: Optional[PhaseDetectionConfig] = None,
                                   ideal: bool = False) -> AmplificationReport:
    """Prepare ``|pi>`` by amplifying the uniform encoding ``|u>``.

    ``3c`` direct projective measurements run first, which fail with probability below
    ``(3/4)^(3c)`` whenever the overlap is at least 1/4; the randomized schedule capped at
    ``max_iterations`` (default ``ceil(2 sqrt(N))``) follows.
    """
    reflector = reflector or reflector_for(bundle, 2.0 ** (-2 * c), ideal)
    about_uniform = uniform_reflection(bundle)
    cap = max_iterations or fallback_iteration_cap(bundle.n)

    def iterate(state: StateVector) -> StateVector:
        return apply(about_uniform, reflector.reflect(state, rng))

    report = amplify(
        lambda: uniform_encoding(bundle),
        iterate,
        _projective_verifier(bundle, c, rng, ideal, measurement_cfg),
        boyer_sweeps(cap, rng, sweeps or c),
        direct_attempts=DIRECT_ATTEMPTS_PER_CONFIDENCE * c,
    )
    if not report.succeeded:
        raise _exhausted(report, "preparation from uniform")
    return report


def prepare_with_known_mode(bundle: WalkBundle, mode_index: int, mode_prob: float, c: int,
                            rng: RngStream, reflector=None, max_iterations: Optional[int] = None,
                            measurement_cfg: Optional[PhaseDetectionConfig] = None,
                            ideal: bool = False) -> AmplificationReport:
    """Unsearch from the mode when it is heavy enough, otherwise amplify from uniform.

    ``max_iterations`` only caps the uniform branch; the mode branch knows its overlap.
    """
    if mode_prob >= 1.0 / math.sqrt(bundle.n):
        return unsearch_from_basis(
            bundle, mode_index, c, rng, reflector=reflector, overlap=mode_prob,
            measurement_cfg=measurement_cfg, ideal=ideal,
        )
    return prepare_from_uniform_amplified(
        bundle, c, rng, max_iterations=max_iterations, reflector=reflector,
        measurement_cfg=measurement_cfg, ideal=ideal,
    )
