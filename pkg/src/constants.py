"""
Numerical tolerances, protocol defaults and record schemas shared across the simulator.
"""

import math

# markov-core
STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-12
REVERSIBILITY_TOL = 1e-10
ERGODICITY_TOL = 1e-9
POWER_ITERATION_MAX_STEPS = 100_000

# quantum-sim
NORM_TOL = 1e-10
MAX_WALK_STATES = 64
MAX_DENSE_ANCILLA_BITS = 12

# szegedy-walk
BUSY_RANK_TOL = 1e-10
PHASE_SNAP_TOL = 1e-9

# phase-tools
MIN_ANCILLA_BITS = 2
LEAKAGE_GRID_POINTS = 4096

# amplitude-amp
BOYER_GROWTH = 6 / 5
BOYER_CAPPED_DRAWS = 3
DIRECT_ATTEMPTS_PER_CONFIDENCE = 3

# protocol
DEFAULT_C = 5
DEFAULT_ETA = 0.9
DEFAULT_KAPPA = 2.0
REBUILD_BUDGET_FACTOR = 4


def seed_iteration_cap(n: int) -> int:
    """Iteration cap for preparation from uniform and from a cached seed."""
    return math.ceil(2 * n**0.25)


def fallback_iteration_cap(n: int) -> int:
    """Iteration cap for the forced preparation from uniform."""
    return math.ceil(2 * math.sqrt(n))


# chain-gen
SEQUENCE_FAMILIES = ["ConstantChain", "MetropolisAnnealing", "PerturbedWeights"]
MIN_STEP_FRACTION = 1e-6
MAX_REDRAWS = 64

# cli-runner
MODES = ["Protocol", "Scaling", "LemmaSuite", "SpectralSuite"]
METHODS = ["uniform", "samples", "fallback"]
RECORD_KEYS = [
    "step",
    "trial",
    "sample",
    "method",
    "walk_calls",
    "diffusion_calls",
    "failed",
    "delta",
    "n",
]
RECORDS_FILE = "records.jsonl"
SUMMARY_FILE = "summary.json"
SEQUENCE_DIR = "sequence"
MANIFEST_FILE = "manifest.json"
DEFAULT_TV_THRESHOLD = 0.05
LEMMA_SUITE_SIZES = [4, 16, 64, 256, 1024]
SPECTRAL_SUITE_SIZES = [2, 4, 8]
