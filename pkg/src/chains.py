"""
Generators of reversible Markov chains and of slowly evolving chain sequences.

A sequence is produced one chain at a time. Every proposed successor is checked against
the previous chain: the coherent stationary encodings must have fidelity at least
``target_eta`` and the spectral gaps must agree within a factor ``target_kappa``. A
rejected proposal is redrawn with half the step size.
"""

import json
import logging
import math
import os
from typing import Any, Iterator, Optional, Sequence

import networkx as nx
import numpy as np

from src.constants import MANIFEST_FILE, MAX_REDRAWS, MIN_STEP_FRACTION
from src.exceptions import DimensionMismatch, DomainError, NotReversible, SchemaError, StepSizeUnderflow
from src.markov import (
    Distribution,
    Regime,
    StochasticMatrix,
    extremal_distribution,
    fidelity_coherent,
    is_reversible,
    lemma1_classify,
    spectral_gap,
    stationary_distribution,
    uniform_distribution,
    validate_stochastic,
)
from src.models import PreparationHint, SequenceSpec
from src.statevector import RngStream
from src.utils import load_matrix, save_matrix

logger = logging.getLogger(__name__)

Step = tuple[StochasticMatrix, float, Optional[PreparationHint]]


def _graph_seed(rng: RngStream) -> int:
    return rng.integers(0, 2**31 - 1)


def _random_weights(n: int, rng: RngStream, sparsity: float = 0.0) -> np.ndarray:
    """Symmetric positive edge weights on a connected random graph, with self-loops."""
    if n < 2:
        raise DomainError(f"chains need at least two states, got {n}")
    if not 0.0 <= sparsity < 1.0:
        raise DomainError(f"sparsity must lie in [0, 1), got {sparsity}")
    while True:
        graph = nx.gnp_random_graph(n, 1.0 - sparsity, seed=_graph_seed(rng))
        if nx.is_connected(graph):
            break
        logger.debug("random graph on %d nodes is disconnected, redrawing", n)
    for i, j in graph.edges():
        graph[i][j]["weight"] = rng.generator.uniform(0.1, 1.0)
    for i in graph.nodes():
        graph.add_edge(i, i, weight=rng.generator.uniform(0.1, 1.0))
    return nx.to_numpy_array(graph, nodelist=range(n), weight="weight")


def _chain_from_weights(weights: np.ndarray) -> StochasticMatrix:
    # P[j, i] = w_ij / W_i satisfies detailed balance with pi_i proportional to W_i.
    return validate_stochastic(weights / weights.sum(axis=0, keepdims=True))


def random_reversible_chain(n: int, rng: RngStream, sparsity: float = 0.0) -> StochasticMatrix:
    """Weight-ratio chain of a random connected graph with positive weights."""
    return _chain_from_weights(_random_weights(n, rng, sparsity))


def proposal_graph(n: int, rng: Optional[RngStream] = None, chords: Optional[int] = None) -> nx.Graph:
    """A ring on ``n`` nodes plus chords.

    Without ``rng`` the chords join every other node to its antipode; with ``rng``,
    ``chords`` (default ``n // 4``) random non-ring pairs are added.
    """
    if n < 2:
        raise DomainError(f"proposal graphs need at least two nodes, got {n}")
    graph = nx.cycle_graph(n)
    if n < 4:
        return graph
    if rng is None:
        graph.add_edges_from((i, i + n // 2) for i in range(0, n // 2, 2))
        return graph
    candidates = sorted(tuple(sorted(pair)) for pair in nx.non_edges(graph))
    count = min(n // 4 if chords is None else chords, len(candidates))
    picked = rng.generator.choice(len(candidates), size=count, replace=False) if count else []
    graph.add_edges_from(candidates[k] for k in sorted(picked))
    return graph


def metropolis_chain(energies, temperature: float, graph: Optional[nx.Graph] = None) -> StochasticMatrix:
    """Metropolis chain for the Gibbs distribution ``exp(-E_i / T)`` on a proposal graph.

    Each neighbor is proposed with probability ``1 / (d_max + 1)`` and accepted with
    probability ``min(1, exp(-(E_j - E_i) / T))``; rejected mass stays on the diagonal.
    """
    energies = np.asarray(energies, dtype=float)
    n = energies.size
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    graph = graph if graph is not None else proposal_graph(n)
    if graph.number_of_nodes() != n:
        raise DimensionMismatch(f"proposal graph has {graph.number_of_nodes()} nodes, {n} energies given")
    if not nx.is_connected(graph):
        raise DomainError("proposal graph must be connected")

    proposal = 1.0 / (max(d for _, d in graph.degree()) + 1)
    entries = np.zeros((n, n))
    for i, j in graph.edges():
        if i == j:
            continue
        rise = energies[j] - energies[i]
        entries[j, i] = proposal * math.exp(-max(rise, 0.0) / temperature)
        entries[i, j] = proposal * math.exp(-max(-rise, 0.0) / temperature)
    entries[np.diag_indices(n)] = 1.0 - entries.sum(axis=0)
    return validate_stochastic(entries)


def gibbs_distribution(energies, temperature: float) -> Distribution:
    energies = np.asarray(energies, dtype=float)
    return Distribution.normalized(np.exp(-(energies - energies.min()) / temperature))


def lazy_independence_chain(pi: Distribution, delta: float) -> StochasticMatrix:
    """``(1 - delta) I + delta pi 1^T``: stationary ``pi``, spectral gap exactly ``delta``."""
    if not 0 < delta <= 1:
        raise DomainError(f"spectral gap must lie in (0, 1], got {delta}")
    if pi.p_min <= 0:
        raise DomainError("the independence chain needs a strictly positive distribution")
    entries = (1.0 - delta) * np.eye(pi.n) + delta * np.outer(pi.probs, np.ones(pi.n))
    return validate_stochastic(entries)


def hard_distribution(n: int, floor: float = 0.05) -> Distribution:
    """Fidelity-minimizing distribution at ``p_max = 1/sqrt(n)`` mixed with a uniform floor."""
    if not 0 < floor < 1:
        raise DomainError(f"floor must lie in (0, 1), got {floor}")
    extremal = extremal_distribution(1.0 / math.sqrt(n), n)
    return Distribution.normalized((1.0 - floor) * extremal.probs + floor * uniform_distribution(n).probs)


def preparation_hint(pi: Distribution) -> PreparationHint:
    """First-step hint read off the stationary distribution."""
    label = lemma1_classify(pi)
    return PreparationHint(
        mode_index=label.mode_index,
        mode_prob=label.mode_prob,
        uniform_accessible=label.regime is Regime.UniformAccessible,
    )


class AnnealingSchedule:
    """Geometric cooling ``T <- alpha^s T`` for a step fraction ``s``, floored at ``T_final``."""

    def __init__(self, T_initial: float, T_final: float, alpha: float):
        if not 0 < alpha <= 1:
            raise DomainError("the cooling factor must lie in (0, 1]")
        if T_initial <= 0 or T_final <= 0:
            raise DomainError("temperatures must be positive")
        self.T_initial = T_initial
        self.T_final = T_final
        self.alpha = alpha
        self.current_T = T_initial

    def next_temperature(self, step: float = 1.0) -> float:
        return max(self.current_T * self.alpha**step, self.T_final)


class SequenceFamily:
    """Parameter state of one sequence; proposals are committed only when accepted."""

    def initial(self, rng: RngStream) -> StochasticMatrix:
        raise NotImplementedError

    def propose(self, step: float, rng: RngStream) -> tuple[StochasticMatrix, Any]:
        raise NotImplementedError

    def accept(self, params: Any):
        pass


class ConstantFamily(SequenceFamily):
    def __init__(self, spec: SequenceSpec):
        self.spec = spec
        self.chain = None

    def initial(self, rng):
        self.chain = random_reversible_chain(self.spec.n, rng)
        return self.chain

    def propose(self, step, rng):
        return self.chain, None


class AnnealingFamily(SequenceFamily):
    """Metropolis chains on a fixed landscape at decreasing temperatures.

    The ground state sits ``energy_scale / 2`` below every other level, so the final
    low-temperature chains have a heavy mode.
    """

    def __init__(self, spec: SequenceSpec, alpha: Optional[float] = None):
        self.spec = spec
        self.schedule = AnnealingSchedule(
            spec.temperature_initial, spec.temperature_final, alpha if alpha is not None else spec.cooling_factor
        )
        self.energies = None
        self.graph = None

    def initial(self, rng):
        n = self.spec.n
        scale = self.spec.energy_scale
        self.energies = rng.generator.uniform(scale / 2, scale, size=n)
        self.energies[rng.integers(0, n)] = 0.0
        self.graph = proposal_graph(n, rng)
        return metropolis_chain(self.energies, self.schedule.current_T, self.graph)

    def propose(self, step, rng):
        temperature = self.schedule.next_temperature(step)
        return metropolis_chain(self.energies, temperature, self.graph), temperature

    def accept(self, temperature):
        self.schedule.current_T = temperature


class PerturbedWeightsFamily(SequenceFamily):
    """Weight-ratio chains whose edge weights drift by a multiplicative log-normal factor."""

    def __init__(self, spec: SequenceSpec):
        self.spec = spec
        self.weights = None

    def initial(self, rng):
        self.weights = _random_weights(self.spec.n, rng)
        return _chain_from_weights(self.weights)

    def propose(self, step, rng):
        noise = rng.generator.normal(size=self.weights.shape)
        noise = np.triu(noise) + np.triu(noise, 1).T
        weights = np.where(self.weights > 0, self.weights * np.exp(self.spec.perturbation * step * noise), 0.0)
        return _chain_from_weights(weights), weights

    def accept(self, weights):
        self.weights = weights


FAMILIES = {
    "ConstantChain": ConstantFamily,
    "MetropolisAnnealing": AnnealingFamily,
    "PerturbedWeights": PerturbedWeightsFamily,
}


def family_for(spec: SequenceSpec) -> SequenceFamily:
    return FAMILIES[spec.family](spec)


def _checked(chain: StochasticMatrix) -> tuple[Distribution, float]:
    pi = stationary_distribution(chain)
    if not is_reversible(chain, pi):
        raise NotReversible("generated chain violates detailed balance")
    return pi, spectral_gap(chain, pi).spectral_gap


def next_in_sequence(spec: SequenceSpec, prev_chain: StochasticMatrix, rng: RngStream,
                     family: Optional[SequenceFamily] = None) -> tuple[StochasticMatrix, float]:
    """The next chain of the sequence and its spectral gap.

    Proposals failing the fidelity or gap-ratio test are redrawn with the step halved.
    """
    if family is None:
        if spec.family != "ConstantChain":
            raise DomainError(f"{spec.family} sequences need their family state")
        return prev_chain, _checked(prev_chain)[1]

    pi_prev, delta_prev = _checked(prev_chain)
    step = 1.0
    for draw in range(MAX_REDRAWS):
        candidate, params = family.propose(step, rng)
        pi_next, delta_next = _checked(candidate)
        fidelity = fidelity_coherent(pi_prev, pi_next)
        ratio = delta_next / delta_prev
        if fidelity >= spec.target_eta and 1.0 / spec.target_kappa <= ratio <= spec.target_kappa:
            family.accept(params)
            return candidate, delta_next
        step /= 2
        logger.warning(
            "rejected proposal (fidelity %.4f, gap ratio %.3f); shrinking step to %.3g", fidelity, ratio, step
        )
        if step < MIN_STEP_FRACTION:
            break
    raise StepSizeUnderflow(
        f"no successor met eta={spec.target_eta} and kappa={spec.target_kappa} down to step {step:.3g}"
    )


class ChainSequence:
    """Iterator of ``(chain, delta, hint)`` triples; only the first step carries a hint."""

    def __init__(self, spec: SequenceSpec, rng: RngStream, family: Optional[SequenceFamily] = None):
        self.spec = spec
        self.rng = rng
        self.family = family or family_for(spec)
        self.emitted = 0
        self.chain = None

    def __iter__(self) -> Iterator[Step]:
        return self

    def __next__(self) -> Step:
        if self.spec.length is not None and self.emitted >= self.spec.length:
            raise StopIteration
        step_rng = self.rng.substream(self.emitted)
        hint = None
        if self.chain is None:
            chain = self.family.initial(step_rng)
            pi, delta = _checked(chain)
            hint = preparation_hint(pi)
        else:
            chain, delta = next_in_sequence(self.spec, self.chain, step_rng, self.family)
        self.chain = chain
        self.emitted += 1
        logger.debug("sequence step %d: delta=%.6g", self.emitted, delta)
        return chain, delta, hint


def independence_sequence(pi: Distribution, delta: float, length: int, perturbation: float,
                          rng: RngStream) -> Iterator[Step]:
    """Lazy independence chains with gap exactly ``delta`` around a drifting ``pi``.

    The stationary distribution at step ``t`` is ``pi * exp(perturbation * t * g)``
    renormalized, for one fixed Gaussian direction ``g``.
    """
    direction = rng.generator.normal(size=pi.n)
    for t in range(length):
        current = Distribution.normalized(pi.probs * np.exp(perturbation * t * direction))
        yield lazy_independence_chain(current, delta), delta, preparation_hint(current) if t == 0 else None


def replay_sequence(chains: Sequence[StochasticMatrix], deltas: Sequence[float]) -> Iterator[Step]:
    """Replay stored chains, with the oracle hint on the first one."""
    if len(chains) != len(deltas):
        raise DimensionMismatch(f"{len(chains)} chains but {len(deltas)} gaps")
    for t, (chain, delta) in enumerate(zip(chains, deltas)):
        yield chain, delta, preparation_hint(stationary_distribution(chain)) if t == 0 else None


def export_sequence(chains: Sequence[StochasticMatrix], deltas: Sequence[float], directory: str) -> str:
    """Write one matrix file per chain and a manifest with gaps and stationary distributions."""
    if len(chains) != len(deltas):
        raise DimensionMismatch(f"{len(chains)} chains but {len(deltas)} gaps")
    os.makedirs(directory, exist_ok=True)
    steps = []
    for t, (chain, delta) in enumerate(zip(chains, deltas), start=1):
        name = f"chain_{t:04d}.txt"
        save_matrix(chain, os.path.join(directory, name))
        steps.append(
            {
                "step": t,
                "matrix": name,
                "delta": float(delta),
                "stationary": [float(p) for p in stationary_distribution(chain).probs],
            }
        )
    manifest = os.path.join(directory, MANIFEST_FILE)
    with open(manifest, "w", encoding="utf-8") as handle:
        json.dump({"n": chains[0].n if chains else 0, "steps": steps}, handle, indent=2)
    return manifest


def read_manifest(path: str) -> dict:
    """Load a sequence manifest; ``path`` may be the manifest or its directory."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_FILE)
    with open(path, encoding="utf-8") as handle:
        manifest = json.load(handle)
    if "steps" not in manifest or any(
        key not in step for step in manifest["steps"] for key in ("step", "matrix", "delta", "stationary")
    ):
        raise SchemaError(f"{path} is not a sequence manifest")
    manifest["directory"] = os.path.dirname(path)
    return manifest


def load_sequence(path: str) -> tuple[list[StochasticMatrix], list[float]]:
    manifest = read_manifest(path)
    chains = [load_matrix(os.path.join(manifest["directory"], step["matrix"])) for step in manifest["steps"]]
    deltas = [float(step["delta"]) for step in manifest["steps"]]
    return chains, deltas
