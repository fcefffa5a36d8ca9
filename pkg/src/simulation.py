"""
Contains the experiment runner for the mixing simulator.

This module includes the Simulation class, which executes one experiment configuration in
one of four modes: Protocol (the mixing protocol over a generated or loaded chain sequence,
repeated over independent trials), Scaling (protocol runs over independence chains with
prescribed size and spectral gap), LemmaSuite (random checks of the two classification
lemmas) and SpectralSuite (random checks of the walk spectrum). Protocol and Scaling write
one newline-delimited JSON record per step and trial; every mode writes a summary document.
"""

import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Optional

import numpy as np

from src.chains import (
    ChainSequence,
    export_sequence,
    hard_distribution,
    independence_sequence,
    load_sequence,
    random_reversible_chain,
    replay_sequence,
)
from src.constants import (
    LEMMA_SUITE_SIZES,
    RECORD_KEYS,
    RECORDS_FILE,
    SEQUENCE_DIR,
    SPECTRAL_SUITE_SIZES,
    SUMMARY_FILE,
)
from src.exceptions import LemmaViolation, PreconditionViolated
from src.markov import (
    Distribution,
    extremal_distribution,
    f_value,
    fidelity_coherent,
    lemma1_classify,
    lemma2_witness_set,
    spectral_gap,
    uniform_distribution,
)
from src.models import ExperimentConfig, StepResult
from src.protocol import MixingProtocol
from src.statevector import RngStream
from src.summarization import summarize, write_summary
from src.szegedy import build_walk

logger = logging.getLogger(__name__)

# Stream ids under the experiment seed.
SEQUENCE_STREAM = 1
TRIAL_STREAM = 2
SUITE_STREAM = 3


class Simulation:
    """Class contains all information necessary to run one experiment."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out = config.out
        self.records_path = os.path.join(self.out, RECORDS_FILE)
        self.summary_path = os.path.join(self.out, SUMMARY_FILE)

    def run(self) -> dict:
        """Execute the configured mode and return the summary document."""
        os.makedirs(self.out, exist_ok=True)
        logger.info("running %s with seed %d into %s", self.config.mode, self.config.seed, self.out)
        if self.config.mode == "Protocol":
            self.simulate_protocol()
            summary = summarize([self.records_path], tv_threshold=self.config.tv_threshold)
        elif self.config.mode == "Scaling":
            self.simulate_scaling()
            summary = summarize([self.records_path], tv_threshold=self.config.tv_threshold)
        elif self.config.mode == "LemmaSuite":
            summary = self.lemma_suite()
        else:
            summary = self.spectral_suite()
        summary["mode"] = self.config.mode
        summary["seed"] = self.config.seed
        write_summary(summary, self.summary_path)
        return summary

    def protocol_sequence(self) -> tuple[list, list]:
        """The experiment's chain sequence, loaded from file or generated from the seed."""
        if self.config.sequence_file:
            return load_sequence(self.config.sequence_file)
        sequence = ChainSequence(self.config.sequence_spec(), RngStream(self.config.seed, SEQUENCE_STREAM))
        steps = list(itertools.islice(sequence, self.config.length))
        return [chain for chain, _, _ in steps], [delta for _, delta, _ in steps]

    def simulate_protocol(self):
        """Run every trial over one shared sequence and record each step."""
        chains, deltas = self.protocol_sequence()
        export_sequence(chains, deltas, os.path.join(self.out, SEQUENCE_DIR))
        self.create_empty_log_file(self.records_path)

        def run_trial(trial: int) -> list[dict]:
            protocol = MixingProtocol(
                self.config.protocol_config(chains[0].n),
                RngStream(self.config.seed, TRIAL_STREAM).substream(trial),
            )
            return [step_record(result, trial) for result in protocol.run(replay_sequence(chains, deltas))]

        for log_data in self._map_trials(run_trial):
            self.append_log_to_file(log_data, self.records_path)

    def simulate_scaling(self):
        """Protocol runs over every ``(n, delta)`` pair, one exported sequence per pair."""
        self.create_empty_log_file(self.records_path)
        pairs = list(itertools.product(self.config.sizes, self.config.deltas))
        for index, (n, delta) in enumerate(pairs):
            rng = RngStream(self.config.seed, SEQUENCE_STREAM).substream(index)
            pi = hard_distribution(n)
            pi = Distribution(pi.probs[rng.generator.permutation(n)])
            steps = list(independence_sequence(pi, delta, self.config.length, self.config.perturbation, rng))
            chains = [chain for chain, _, _ in steps]
            deltas = [delta for _, delta, _ in steps]
            export_sequence(chains, deltas, os.path.join(self.out, SEQUENCE_DIR, f"n{n}_delta{delta:g}"))

            def run_trial(trial: int) -> list[dict]:
                protocol = MixingProtocol(
                    self.config.protocol_config(n),
                    RngStream(self.config.seed, TRIAL_STREAM).substream(index).substream(trial),
                )
                return [step_record(result, trial) for result in protocol.run(replay_sequence(chains, deltas))]

            for log_data in self._map_trials(run_trial):
                self.append_log_to_file(log_data, self.records_path)
            logger.info("scaling point n=%d delta=%g done", n, delta)

    def _map_trials(self, run_trial) -> Iterable[list[dict]]:
        trials = range(self.config.trials)
        if self.config.workers == 1:
            return map(run_trial, trials)
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(run_trial, trials))

    def lemma_suite(self) -> dict:
        """Random distributions per size checked against both classification lemmas.

        ``trials`` is the number of distributions drawn per size.
        """
        rng = RngStream(self.config.seed, SUITE_STREAM)
        counts = {"instances": 0, "lemma1_violations": 0, "lemma2_checked": 0, "lemma2_violations": 0}
        extremal_errors = []
        for n in LEMMA_SUITE_SIZES:
            for _ in range(self.config.trials):
                pi = random_distribution(n, rng)
                counts["instances"] += 1
                try:
                    lemma1_classify(pi)
                except LemmaViolation as error:
                    logger.warning("lemma 1: %s", error)
                    counts["lemma1_violations"] += 1
                if f_value(pi) <= n**0.25:
                    counts["lemma2_checked"] += 1
                    try:
                        lemma2_witness_set(pi)
                    except (LemmaViolation, PreconditionViolated) as error:
                        logger.warning("lemma 2: %s", error)
                        counts["lemma2_violations"] += 1
            extremal = extremal_distribution(1.0 / math.sqrt(n), n)
            extremal_errors.append(1.0 / math.sqrt(n) - fidelity_coherent(extremal, uniform_distribution(n)))
        counts["extremal_violations"] = sum(error > 1e-10 for error in extremal_errors)
        counts["sizes"] = list(LEMMA_SUITE_SIZES)
        return counts

    def spectral_suite(self) -> dict:
        """Random reversible chains checked against the walk spectrum.

        ``trials`` is the number of chains drawn per size.
        """
        rng = RngStream(self.config.seed, SUITE_STREAM)
        worst = {"phase_error": 0.0, "stationary_error": 0.0, "off_busy_error": 0.0}
        chains = 0
        for n in SPECTRAL_SUITE_SIZES:
            for _ in range(self.config.trials):
                errors = spectral_errors(random_reversible_chain(n, rng), rng)
                chains += 1
                for key, value in errors.items():
                    worst[key] = max(worst[key], value)
        return {
            "chains": chains,
            "sizes": list(SPECTRAL_SUITE_SIZES),
            "max_phase_error": worst["phase_error"],
            "max_stationary_error": worst["stationary_error"],
            "max_off_busy_error": worst["off_busy_error"],
            "phase_within_tolerance": worst["phase_error"] <= 1e-8,
            "stationary_within_tolerance": worst["stationary_error"] <= 1e-10,
            "off_busy_within_tolerance": worst["off_busy_error"] <= 1e-10,
        }

    @staticmethod
    def create_empty_log_file(filename: str):
        """Create empty log file."""
        os.makedirs(os.path.dirname(filename) or ".", exist_ok=True)
        with open(filename, "w", encoding="utf-8"):
            pass

    @staticmethod
    def print_records_written(filename: str):
        """Print the record count and size of a records file."""
        with open(filename, encoding="utf-8") as f:
            count = sum(1 for _ in f)
        print(f"{count} records written to '{filename}' ({os.path.getsize(filename) / 1024:.1f} kB)")

    @staticmethod
    def append_log_to_file(log_data: list[dict], filename: str):
        """Bulk add records to the newline-delimited JSON log."""
        with open(filename, "a", encoding="utf-8") as f:
            for record in log_data:
                f.write(json.dumps({key: record[key] for key in RECORD_KEYS}) + "\n")


def step_record(result: StepResult, trial: int) -> dict:
    return {
        "step": result.t,
        "trial": trial,
        "sample": None if result.output_sample is None else int(result.output_sample),
        "method": result.method.value,
        "walk_calls": result.ledger.walk_calls,
        "diffusion_calls": result.ledger.diffusion_calls,
        "failed": result.failed,
        "delta": float(result.delta),
        "n": result.n,
    }


def random_distribution(n: int, rng: RngStream) -> Distribution:
    """Dirichlet draw with a log-uniform concentration, from nearly uniform to sharply peaked."""
    concentration = 10.0 ** rng.generator.uniform(-2.0, 1.0)
    weights = rng.generator.dirichlet(np.full(n, concentration))
    if not np.isfinite(weights).all() or weights.sum() <= 0:
        weights = np.zeros(n)
        weights[rng.integers(0, n)] = 1.0
    return Distribution.normalized(weights)


def spectral_errors(P, rng: Optional[RngStream] = None) -> dict:
    """Largest deviations of the walk of ``P`` from its predicted spectrum.

    Every eigenvalue ``lambda`` of ``P`` must appear among the eigenphases ``phi`` with
    ``cos(phi / 2) = |lambda|``, ``|pi>`` must be fixed and W must be the identity off the
    busy subspace. Phases are compared through the cosine, which stays well conditioned
    where ``arccos`` does not.
    """
    bundle = build_walk(P)
    half_cosines = np.cos(bundle.spectrum.phases / 2.0)
    phase_error = 0.0
    for eigenvalue in spectral_gap(P, bundle.pi).eigenvalues:
        phase_error = max(phase_error, float(np.abs(half_cosines - abs(eigenvalue)).min()))

    stationary = bundle.stationary_amplitudes.reshape(bundle.n, bundle.n)
    stationary_error = float(np.abs(bundle.W._act(stationary) - stationary).max())

    generator = rng.generator if rng is not None else np.random.default_rng(0)
    trial_vector = generator.normal(size=bundle.n**2) + 1j * generator.normal(size=bundle.n**2)
    _, residual = bundle.spectrum.project(trial_vector)
    residual = residual.reshape(bundle.n, bundle.n)
    off_busy_error = float(np.abs(bundle.W._act(residual) - residual).max())
    return {
        "phase_error": phase_error,
        "stationary_error": stationary_error,
        "off_busy_error": off_busy_error,
    }
