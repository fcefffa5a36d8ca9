"""
Dense statevector simulator for the two-register walk space.

A state on ``n`` walk states and ``r`` ancilla qubits is a complex vector of length
``2**r * n * n``; its tensor view has shape ``(2**r, n, n)`` with axes (ancilla, register I,
register II). Operators are values exposing an action on that tensor, so circuits can be
kept as composition rules instead of explicit ``n**2 x n**2`` matrices. Every application
through ``apply`` is charged to the active ``CostLedger`` according to the operator's tag.

Randomness comes from ``RngStream``: numpy's counter-based Philox generator keyed by
``SeedSequence(seed, spawn_key=(stream_id, ...))``, so identical (seed, stream) pairs
reproduce identical draws and distinct streams never overlap.
"""

import contextlib
import contextvars
import enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from src.constants import MAX_DENSE_ANCILLA_BITS, NORM_TOL
from src.exceptions import DimensionMismatch, DomainError
from src.models import CostLedger

_ACTIVE_LEDGER: contextvars.ContextVar[Optional[CostLedger]] = contextvars.ContextVar(
    "active_ledger", default=None
)

TAG_COUNTERS = {"walk": "walk_calls", "diffusion": "diffusion_calls", None: "untagged_calls"}


@contextlib.contextmanager
def ledger_scope(ledger: CostLedger) -> Iterator[CostLedger]:
    """Charge every operator application inside the block to ``ledger``."""
    token = _ACTIVE_LEDGER.set(ledger)
    try:
        yield ledger
    finally:
        _ACTIVE_LEDGER.reset(token)


def active_ledger() -> Optional[CostLedger]:
    return _ACTIVE_LEDGER.get()


def charge(counter: str, amount: int = 1):
    """Record ``amount`` on the active ledger, if any."""
    ledger = _ACTIVE_LEDGER.get()
    if ledger is not None and amount:
        ledger.record(counter, amount)


class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple[int, ...] = ()):
        if not 0 <= seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = _path
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *_path))
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def substream(self, index: int) -> "RngStream":
        """An independent stream derived from this one."""
        return RngStream(self.seed, self.stream_id, (*self._path, int(index)))

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high)``."""
        return int(self.generator.integers(low, high))

    def choice(self, size: int, p: np.ndarray) -> int:
        p = np.clip(np.asarray(p, dtype=float), 0.0, None)
        return int(self.generator.choice(size, p=p / p.sum()))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self._path})"


class Register(enum.Enum):
    I = "I"
    II = "II"
    ANCILLA = "ancilla"


class StateVector:
    """Normalized amplitudes on the walk space, optionally extended by ancilla qubits."""

    def __init__(self, n: int, amplitudes, ancilla_bits: int = 0, normalize: bool = False):
        amplitudes = np.asarray(amplitudes, dtype=complex).reshape(-1)
        expected = (2**ancilla_bits) * n * n
        if amplitudes.size != expected:
            raise DimensionMismatch(
                f"{amplitudes.size} amplitudes for n={n}, ancilla_bits={ancilla_bits} (need {expected})"
            )
        norm = np.linalg.norm(amplitudes)
        if normalize:
            if norm <= NORM_TOL:
                raise DomainError("cannot normalize a zero vector")
            amplitudes = amplitudes / norm
        elif abs(norm - 1.0) > NORM_TOL:
            raise DomainError(f"state is not normalized (norm {norm})")
        self.n = n
        self.ancilla_bits = ancilla_bits
        self.amplitudes = amplitudes

    @classmethod
    def basis(cls, n: int, i: int, j: int = 0) -> "StateVector":
        """The product state ``|i>|j>``."""
        amplitudes = np.zeros(n * n, dtype=complex)
        amplitudes[i * n + j] = 1.0
        return cls(n, amplitudes)

    @classmethod
    def from_register_amplitudes(cls, register_i) -> "StateVector":
        """``sum_i a_i |i>|0>`` for a normalized amplitude vector ``a``."""
        register_i = np.asarray(register_i, dtype=complex)
        n = register_i.size
        tensor = np.zeros((n, n), dtype=complex)
        tensor[:, 0] = register_i
        return cls(n, tensor, normalize=True)

    @classmethod
    def from_tensor(cls, tensor: np.ndarray, normalize: bool = False) -> "StateVector":
        n = tensor.shape[-1]
        ancilla_bits = int(round(np.log2(tensor.size // (n * n))))
        return cls(n, tensor, ancilla_bits=ancilla_bits, normalize=normalize)

    @property
    def dimension(self) -> int:
        return self.amplitudes.size

    @property
    def tensor(self) -> np.ndarray:
        """View with axes (ancilla, register I, register II)."""
        return self.amplitudes.reshape(2**self.ancilla_bits, self.n, self.n)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.n, self.amplitudes.copy(), self.ancilla_bits)

    def walk_block(self) -> np.ndarray:
        """Unnormalized walk-space amplitudes with every ancilla at ``|0>``."""
        return self.tensor[0].reshape(-1).copy()

    def attach_ancillas(self, bits: int) -> "StateVector":
        """Extend by ``bits`` fresh ancilla qubits in ``|0...0>``."""
        if self.ancilla_bits + bits > MAX_DENSE_ANCILLA_BITS:
            raise DomainError(f"at most {MAX_DENSE_ANCILLA_BITS} dense ancilla qubits are supported")
        tensor = np.zeros((2 ** (self.ancilla_bits + bits), self.n, self.n), dtype=complex)
        tensor[: 2**self.ancilla_bits] = self.tensor
        return StateVector.from_tensor(tensor)

    def discard_ancillas(self, rng: RngStream) -> tuple[int, "StateVector"]:
        """Measure and drop the ancilla register; returns the outcome and walk state."""
        outcome, collapsed = measure_register(self, Register.ANCILLA, rng)
        return outcome, StateVector(self.n, collapsed.tensor[outcome], normalize=True)

    def __repr__(self):
        return f"StateVector(n={self.n}, ancilla_bits={self.ancilla_bits})"


class LinearOperator:
    """An operator on the walk space, broadcast over any ancilla axes.

    Subclasses implement ``_act`` on arrays whose last two axes are (register I,
    register II). ``tag`` selects the ledger counter charged by ``apply``.
    """

    tag: Optional[str] = None
    unitary: bool = True
    cost: int = 1

    def __init__(self, n: int, tag: Optional[str] = None, cost: int = 1):
        self.n = n
        self.tag = tag
        self.cost = cost

    @property
    def dimension(self) -> int:
        return self.n * self.n

    def _act(self, tensor: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self) -> "LinearOperator":
        raise NotImplementedError

    def matrix(self) -> np.ndarray:
        """Dense ``n**2 x n**2`` matrix (for checks on small instances)."""
        identity = np.eye(self.dimension, dtype=complex).reshape(self.dimension, self.n, self.n)
        return self._act(identity).reshape(self.dimension, self.dimension).T


class DenseOperator(LinearOperator):
    def __init__(self, matrix: np.ndarray, n: int, tag: Optional[str] = None, unitary: bool = True):
        super().__init__(n, tag)
        self._matrix = np.asarray(matrix, dtype=complex)
        if self._matrix.shape != (n * n, n * n):
            raise DimensionMismatch(f"matrix shape {self._matrix.shape} does not act on n={n}")
        self.unitary = unitary

    def _act(self, tensor):
        flat = tensor.reshape(*tensor.shape[:-2], self.dimension)
        return (flat @ self._matrix.T).reshape(tensor.shape)

    def adjoint(self):
        return DenseOperator(self._matrix.conj().T, self.n, self.tag, self.unitary)

    def matrix(self):
        return self._matrix.copy()


class DiagonalRegisterOperator(LinearOperator):
    """Diagonal operator multiplying basis states of one register by fixed phases."""

    def __init__(self, n: int, phases: Sequence[complex], register: Register = Register.I,
                 tag: Optional[str] = None, cost: int = 1):
        super().__init__(n, tag, cost)
        self.phases = np.asarray(phases, dtype=complex)
        if self.phases.size != n:
            raise DimensionMismatch(f"{self.phases.size} phases for a register of size {n}")
        if register is Register.ANCILLA:
            raise DomainError("register phases act on register I or II")
        self.register = register

    def _act(self, tensor):
        if self.register is Register.I:
            return tensor * self.phases[:, np.newaxis]
        return tensor * self.phases[np.newaxis, :]

    def adjoint(self):
        return DiagonalRegisterOperator(self.n, self.phases.conj(), self.register, self.tag, self.cost)


def zero_reflection(n: int, register: Register = Register.II) -> DiagonalRegisterOperator:
    """``Z = 2|0><0| - 1`` on one register."""
    phases = -np.ones(n, dtype=complex)
    phases[0] = 1.0
    return DiagonalRegisterOperator(n, phases, register)


class SwapOperator(LinearOperator):
    """Exchange of the two walk registers."""

    def _act(self, tensor):
        return np.swapaxes(tensor, -1, -2)

    def adjoint(self):
        return self


class ComposedOperator(LinearOperator):
    """Product ``factors[0] @ factors[1] @ ...``; the last factor acts first."""

    def __init__(self, factors: Sequence[LinearOperator], tag: Optional[str] = None, cost: int = 1):
        if not factors:
            raise DomainError("a composition needs at least one factor")
        n = factors[0].n
        if any(f.n != n for f in factors):
            raise DimensionMismatch("composed operators must act on the same walk space")
        super().__init__(n, tag, cost)
        self.factors = tuple(factors)
        self.unitary = all(f.unitary for f in factors)

    def _act(self, tensor):
        for factor in reversed(self.factors):
            tensor = factor._act(tensor)
        return tensor

    def adjoint(self):
        return ComposedOperator([f.adjoint() for f in reversed(self.factors)], self.tag, self.cost)


class VectorReflection(LinearOperator):
    """``2|v><v| - 1`` for a fixed normalized walk-space vector ``v``."""

    def __init__(self, vector: np.ndarray, n: int, tag: Optional[str] = None, cost: int = 1):
        super().__init__(n, tag, cost)
        vector = np.asarray(vector, dtype=complex).reshape(-1)
        if vector.size != n * n:
            raise DimensionMismatch(f"reflection vector has {vector.size} entries, need {n * n}")
        self.vector = vector / np.linalg.norm(vector)

    def _act(self, tensor):
        flat = tensor.reshape(*tensor.shape[:-2], self.dimension)
        weights = flat @ self.vector.conj()
        return (2.0 * weights[..., np.newaxis] * self.vector - flat).reshape(tensor.shape)

    def adjoint(self):
        return self


def apply(op: LinearOperator, s: StateVector, times: int = 1) -> StateVector:
    """Return ``op**times`` applied to ``s``, charging the active ledger."""
    if op.n != s.n:
        raise DimensionMismatch(f"operator acts on n={op.n}, state has n={s.n}")
    tensor = s.tensor
    for _ in range(times):
        tensor = op._act(tensor)
    charge(TAG_COUNTERS[op.tag], op.cost * times)
    return StateVector(s.n, tensor, s.ancilla_bits, normalize=not op.unitary)


def apply_controlled(op: LinearOperator, s: StateVector, ancilla_bit: int, power: int = 1) -> StateVector:
    """Apply ``op**power`` on the blocks where ancilla qubit ``ancilla_bit`` is set."""
    if op.n != s.n:
        raise DimensionMismatch(f"operator acts on n={op.n}, state has n={s.n}")
    if not 0 <= ancilla_bit < s.ancilla_bits:
        raise DomainError(f"state has no ancilla qubit {ancilla_bit}")
    tensor = s.tensor.copy()
    controlled = (np.arange(2**s.ancilla_bits) >> ancilla_bit) & 1 == 1
    block = tensor[controlled]
    for _ in range(power):
        block = op._act(block)
    tensor[controlled] = block
    charge(TAG_COUNTERS[op.tag], op.cost * power)
    return StateVector(s.n, tensor, s.ancilla_bits)


def _register_probabilities(s: StateVector, which: Register) -> np.ndarray:
    weights = np.abs(s.tensor) ** 2
    if which is Register.I:
        return weights.sum(axis=(0, 2))
    if which is Register.II:
        return weights.sum(axis=(0, 1))
    return weights.sum(axis=(1, 2))


def _project(s: StateVector, which: Register, keep: np.ndarray) -> StateVector:
    tensor = s.tensor.copy()
    if which is Register.I:
        tensor[:, ~keep, :] = 0.0
    elif which is Register.II:
        tensor[:, :, ~keep] = 0.0
    else:
        tensor[~keep] = 0.0
    return StateVector(s.n, tensor, s.ancilla_bits, normalize=True)


def measure_register(s: StateVector, which: Register, rng: RngStream) -> tuple[int, StateVector]:
    """Computational-basis measurement of one register with Born-rule collapse."""
    if which is Register.ANCILLA and s.ancilla_bits == 0:
        raise DomainError("state has no ancilla register")
    probabilities = _register_probabilities(s, which)
    outcome = rng.choice(probabilities.size, probabilities)
    keep = np.zeros(probabilities.size, dtype=bool)
    keep[outcome] = True
    return outcome, _project(s, which, keep)


def measure_membership(s: StateVector, which: Register, accepted: Iterable[int],
                       rng: RngStream) -> tuple[bool, StateVector]:
    """Two-outcome measurement: is the register content in ``accepted``?"""
    probabilities = _register_probabilities(s, which)
    keep = np.zeros(probabilities.size, dtype=bool)
    keep[list(accepted)] = True
    success_probability = float(probabilities[keep].sum())
    inside = rng.random() < success_probability
    return inside, _project(s, which, keep if inside else ~keep)


def overlap(a: StateVector, b: StateVector) -> complex:
    """Inner product ``<a|b>``."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"states have dimensions {a.dimension} and {b.dimension}")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def trace_distance_pure(a: StateVector, b: StateVector) -> float:
    fidelity = abs(overlap(a, b)) ** 2
    return float(np.sqrt(max(0.0, 1.0 - fidelity)))


def random_state(n: int, rng: RngStream, ancilla_bits: int = 0) -> StateVector:
    """Haar-like random state from complex Gaussian amplitudes."""
    size = (2**ancilla_bits) * n * n
    amplitudes = rng.generator.normal(size=size) + 1j * rng.generator.normal(size=size)
    return StateVector(n, amplitudes, ancilla_bits, normalize=True)
