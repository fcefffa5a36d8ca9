"""
Szegedy diffusion and walk operators for a reversible chain.

``U_P`` maps ``|i>|0>`` to ``|i> sum_j sqrt(P[j, i]) |j>``; its action on the remaining
columns is a deterministic unitary completion. ``V_P`` is the same operator with the two
registers exchanged, ``ref(A) = U_P (1 x Z) U_P^dag`` and ``ref(B) = V_P (1 x Z) V_P^dag``
reflect about the spans ``A`` and ``B`` of the two diffusion directions, and the walk is
``W = ref(B) ref(A)``. W acts as the identity off the busy subspace ``A + B``, and on it
its eigenphases are ``+-2 arccos(lambda)`` for the eigenvalues ``lambda`` of ``P``.
"""

import logging
from typing import Optional

import numpy as np
import scipy.linalg

from src.constants import BUSY_RANK_TOL, MAX_WALK_STATES, PHASE_SNAP_TOL
from src.exceptions import DimensionMismatch, DomainError, NotReversible
from src.markov import (
    Distribution,
    StochasticMatrix,
    is_reversible,
    predicted_phase_gap,
    spectral_gap,
    stationary_distribution,
    uniform_distribution,
)
from src.statevector import (
    ComposedOperator,
    LinearOperator,
    Register,
    RngStream,
    StateVector,
    SwapOperator,
    VectorReflection,
    apply,
    measure_membership,
    zero_reflection,
)

logger = logging.getLogger(__name__)

COMPLETIONS = ("householder", "qr")


def _householder_completion(column: np.ndarray) -> np.ndarray:
    n = column.size
    w = -column.astype(float)
    w[0] += 1.0
    norm_sq = float(w @ w)
    if norm_sq < 1e-30:
        return np.eye(n)
    return np.eye(n) - 2.0 * np.outer(w, w) / norm_sq


def _qr_completion(column: np.ndarray) -> np.ndarray:
    n = column.size
    q, _ = np.linalg.qr(np.column_stack([column, np.eye(n)]))
    q = q[:, :n]
    if q[:, 0] @ column < 0:
        q[:, 0] = -q[:, 0]
    return q


class DiffusionOperator(LinearOperator):
    """Block-diagonal ``U_P``: one ``n x n`` unitary per value of register I."""

    def __init__(self, P: StochasticMatrix, completion: str = "householder", _blocks=None):
        super().__init__(P.n, tag="diffusion")
        if completion not in COMPLETIONS:
            raise DomainError(f"unknown completion {completion!r}, expected one of {COMPLETIONS}")
        self.P = P
        self.completion = completion
        if _blocks is None:
            complete = _householder_completion if completion == "householder" else _qr_completion
            _blocks = np.stack([complete(np.sqrt(P.column(i))) for i in range(P.n)]).astype(complex)
        self.blocks = _blocks

    def _act(self, tensor):
        return np.einsum("ijk,...ik->...ij", self.blocks, tensor)

    def adjoint(self):
        return DiffusionOperator(self.P, self.completion, np.conj(np.swapaxes(self.blocks, 1, 2)))


def build_diffusion(P: StochasticMatrix, completion: str = "householder") -> DiffusionOperator:
    if P.n > MAX_WALK_STATES:
        raise DomainError(f"walk space is limited to {MAX_WALK_STATES} states, got {P.n}")
    return DiffusionOperator(P, completion)


def build_swapped_diffusion(U_P: LinearOperator) -> LinearOperator:
    """``V_P = SWAP U_P SWAP``."""
    swap = SwapOperator(U_P.n)
    return ComposedOperator([swap, U_P, swap], tag="diffusion")


def build_ref_A(U_P: LinearOperator) -> LinearOperator:
    return ComposedOperator([U_P, zero_reflection(U_P.n, Register.II), U_P.adjoint()])


def build_ref_B(V_P: LinearOperator) -> LinearOperator:
    return ComposedOperator([V_P, zero_reflection(V_P.n, Register.I), V_P.adjoint()])


class WalkSpectrum:
    """Eigen-decomposition of the walk restricted to the busy subspace ``A + B``.

    ``vectors`` holds orthonormal eigenvectors as columns (walk-space coordinates) and
    ``phases`` the matching eigenphases in ``(-pi, pi]``; phases below ``PHASE_SNAP_TOL`` in
    magnitude are exactly zero.
    """

    def __init__(self, P: StochasticMatrix, W: LinearOperator,
                 rank_tol: float = BUSY_RANK_TOL, snap_tol: float = PHASE_SNAP_TOL):
        n = P.n
        root = np.sqrt(P.entries)
        a_columns = np.zeros((n, n, n))
        b_columns = np.zeros((n, n, n))
        for i in range(n):
            a_columns[i, :, i] = root[:, i]
            b_columns[:, i, i] = root[:, i]
        spanning = np.hstack([a_columns.reshape(n * n, n), b_columns.reshape(n * n, n)])
        self.basis = scipy.linalg.orth(spanning, rcond=rank_tol).astype(complex)
        d = self.basis.shape[1]

        images = W._act(self.basis.T.reshape(d, n, n)).reshape(d, n * n).T
        restricted = self.basis.conj().T @ images
        schur_form, unitary = scipy.linalg.schur(restricted, output="complex")
        phases = np.angle(np.diag(schur_form))
        phases[np.abs(phases) < snap_tol] = 0.0
        self.phases = phases
        self.vectors = self.basis @ unitary
        self.n = n
        logger.debug("busy subspace of dimension %d for n=%d", d, n)

    @property
    def dimension(self) -> int:
        return self.phases.size

    def project(self, amplitudes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Eigen-coefficients of a walk vector and its component outside ``A + B``."""
        amplitudes = np.asarray(amplitudes, dtype=complex).reshape(-1)
        coefficients = self.vectors.conj().T @ amplitudes
        residual = amplitudes - self.vectors @ coefficients
        return coefficients, residual

    def assemble(self, coefficients: np.ndarray, residual: np.ndarray) -> np.ndarray:
        return self.vectors @ coefficients + residual

    def nonzero_phases(self) -> np.ndarray:
        return self.phases[self.phases != 0.0]


class WalkBundle:
    """Every operator derived from one chain, plus its gap data. Immutable once built."""

    def __init__(self, P: StochasticMatrix, pi: Distribution, U_P: LinearOperator,
                 delta: float, completion: str):
        self.P = P
        self.pi = pi
        self.n = P.n
        self.completion = completion
        self.U_P = U_P
        self.V_P = build_swapped_diffusion(U_P)
        self.refA = build_ref_A(U_P)
        self.refB = build_ref_B(self.V_P)
        self.W = ComposedOperator([self.refB, self.refA], tag="walk")
        self.delta = delta
        self.predicted_phase_gap = predicted_phase_gap(delta)
        self.spectrum = WalkSpectrum(P, self.W)
        self.stationary_amplitudes = _stationary_amplitudes(P, pi, U_P)

    @property
    def phase_gap(self) -> float:
        return phase_gap_measured(self)

    def stationary_state(self) -> StateVector:
        """``|pi>`` built from the classical oracle (no ledger charge)."""
        return StateVector(self.n, self.stationary_amplitudes.copy())

    def __repr__(self):
        return f"WalkBundle(n={self.n}, delta={self.delta:.6g}, completion={self.completion!r})"


def _stationary_amplitudes(P: StochasticMatrix, pi: Distribution, U_P: LinearOperator) -> np.ndarray:
    tensor = np.zeros((P.n, P.n), dtype=complex)
    tensor[:, 0] = np.sqrt(pi.probs)
    return U_P._act(tensor).reshape(-1)


def build_walk(P: StochasticMatrix, delta: Optional[float] = None, pi: Optional[Distribution] = None,
               completion: str = "householder") -> WalkBundle:
    """Build the walk bundle of an ergodic reversible chain.

    ``delta`` is taken as given when supplied (a lower bound from the chain stream);
    otherwise it is computed from the spectrum of ``P``.
    """
    pi = pi if pi is not None else stationary_distribution(P)
    if not is_reversible(P, pi):
        raise NotReversible("the Szegedy walk is only built for time-reversible chains")
    if delta is None:
        delta = spectral_gap(P, pi).spectral_gap
    elif not 0 < delta <= 1:
        raise DomainError(f"spectral gap must lie in (0, 1], got {delta}")
    bundle = WalkBundle(P, pi, build_diffusion(P, completion), delta, completion)
    logger.debug("built %r", bundle)
    return bundle


def coherent_encoding(pi: Distribution, U_P: LinearOperator) -> StateVector:
    """``U_P sum_i sqrt(pi_i) |i>|0>``."""
    if pi.n != U_P.n:
        raise DimensionMismatch(f"distribution has {pi.n} states, operator acts on {U_P.n}")
    return apply(U_P, StateVector.from_register_amplitudes(np.sqrt(pi.probs)))


def uniform_encoding(bundle: WalkBundle) -> StateVector:
    return coherent_encoding(uniform_distribution(bundle.n), bundle.U_P)


def basis_encoding(bundle: WalkBundle, i: int) -> StateVector:
    """``|i'> = U_P |i>|0>``."""
    if not 0 <= i < bundle.n:
        raise DomainError(f"state index {i} out of range for n={bundle.n}")
    return apply(bundle.U_P, StateVector.basis(bundle.n, i, 0))


def membership_test_A(state: StateVector, U_P: LinearOperator, rng: RngStream) -> tuple[bool, StateVector]:
    """Two-outcome measurement of membership in ``A``.

    Undoes ``U_P``, checks whether register II holds ``|0>`` and redoes ``U_P``; both
    branches are returned in the original frame.
    """
    unwound = apply(U_P.adjoint(), state)
    inside, collapsed = measure_membership(unwound, Register.II, [0], rng)
    return inside, apply(U_P, collapsed)


def phase_gap_measured(bundle: WalkBundle) -> float:
    """Smallest nonzero eigenphase magnitude of W on the busy subspace."""
    nonzero = np.abs(bundle.spectrum.nonzero_phases())
    return float(nonzero.min()) if nonzero.size else float(np.pi)


def exact_reflection(bundle: WalkBundle, walk_cost: int = 0) -> VectorReflection:
    """``R(P) = 2|pi><pi| - 1`` from the classical stationary oracle.

    ``walk_cost`` is the number of walk calls charged per application.
    """
    return VectorReflection(bundle.stationary_amplitudes, bundle.n, tag="walk", cost=walk_cost)
