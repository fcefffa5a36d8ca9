"""
Defines the data models used across the mixing protocol and the experiment runner.

This module contains the cost ledger that instruments walk-operator usage, the protocol
configuration, the per-step sample cache and step result, the first-step preparation hint,
the description of a slowly evolving chain sequence, and the experiment configuration read
by the command-line runner.
"""

import enum
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

from src.constants import (
    DEFAULT_C,
    DEFAULT_ETA,
    DEFAULT_KAPPA,
    DEFAULT_TV_THRESHOLD,
    MODES,
    SEQUENCE_FAMILIES,
)
from src.exceptions import DomainError


@dataclass
class CostLedger:
    """Counters of operator applications and measurement attempts."""

    walk_calls: int = 0
    diffusion_calls: int = 0
    untagged_calls: int = 0
    projective_measurements: int = 0
    amplification_iterations: int = 0
    wall_steps: int = 0

    def record(self, counter: str, amount: int = 1):
        """Increase one counter; counters never decrease."""
        if amount < 0:
            raise ValueError("ledger counters are monotone")
        setattr(self, counter, getattr(self, counter) + amount)

    def snapshot(self) -> "CostLedger":
        return CostLedger(**asdict(self))

    def since(self, earlier: "CostLedger") -> "CostLedger":
        """Counts accumulated after ``earlier`` was taken."""
        return CostLedger(
            **{f.name: getattr(self, f.name) - getattr(earlier, f.name) for f in fields(self)}
        )


class PreparationMethod(enum.Enum):
    Uniform = "uniform"
    Samples = "samples"
    Fallback = "fallback"


@dataclass(frozen=True)
class ProtocolConfig:
    """Confidence, neighbor-fidelity bound and gap-closeness of a protocol run."""

    c: int = DEFAULT_C
    eta: float = DEFAULT_ETA
    kappa: float = DEFAULT_KAPPA
    n: Optional[int] = None
    ideal_reflections: bool = False
    retain_coherent: bool = False
    check_assumptions: bool = False

    def __post_init__(self):
        if int(self.c) != self.c or self.c < 1:
            raise DomainError(f"confidence c must be an integer >= 1, got {self.c}")
        if not 0 < self.eta <= 1:
            raise DomainError(f"eta must lie in (0, 1], got {self.eta}")
        if self.kappa < 1:
            raise DomainError(f"kappa must be >= 1, got {self.kappa}")
        if self.n is not None and self.n < 1:
            raise DomainError(f"state count must be positive, got {self.n}")

    @property
    def expected_rebuilds(self) -> float:
        """Expected number of previous-step rebuilds, ``c' = c / eta``."""
        return self.c / self.eta


@dataclass(frozen=True)
class SampleCache:
    step_index: int
    samples: tuple[int, ...]
    method_used: PreparationMethod

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class PreparationHint:
    """How the first chain's stationary state can be prepared cheaply."""

    mode_index: Optional[int] = None
    mode_prob: Optional[float] = None
    uniform_accessible: bool = False

    def __post_init__(self):
        if self.mode_index is None and not self.uniform_accessible:
            raise DomainError("a preparation hint needs a mode or a uniform certificate")


@dataclass
class StepResult:
    t: int
    output_sample: Optional[int]
    coherent_state_available: bool
    cache: Optional[SampleCache]
    ledger: CostLedger
    failed: bool
    method: PreparationMethod
    delta: float
    n: int
    coherent_state: Any = field(default=None, repr=False)


@dataclass(frozen=True)
class SequenceSpec:
    """A family of slowly evolving reversible chains."""

    family: str
    n: int
    length: Optional[int] = None
    temperature_initial: float = 4.0
    temperature_final: float = 0.2
    energy_scale: float = 2.0
    perturbation: float = 0.05
    target_eta: float = DEFAULT_ETA
    target_kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        if self.family not in SEQUENCE_FAMILIES:
            raise DomainError(f"unknown sequence family {self.family!r}")
        if self.n < 2:
            raise DomainError(f"sequences need at least two states, got {self.n}")
        if self.length is not None and self.length < 1:
            raise DomainError(f"sequence length must be positive, got {self.length}")
        if not 0 < self.temperature_final <= self.temperature_initial:
            raise DomainError("temperatures must satisfy 0 < final <= initial")
        if not 0 < self.target_eta <= 1:
            raise DomainError(f"target_eta must lie in (0, 1], got {self.target_eta}")
        if self.target_kappa < 1:
            raise DomainError(f"target_kappa must be >= 1, got {self.target_kappa}")

    @property
    def cooling_factor(self) -> float:
        """Geometric cooling factor reaching the final temperature at the last step."""
        if not self.length or self.length == 1:
            return 1.0
        return (self.temperature_final / self.temperature_initial) ** (1.0 / (self.length - 1))


@dataclass
class ExperimentConfig:
    """Flat experiment description; field names are the config-file keys."""

    mode: str
    seed: int
    family: str = "ConstantChain"
    n: int = 4
    length: int = 10
    c: int = DEFAULT_C
    eta: float = DEFAULT_ETA
    kappa: float = DEFAULT_KAPPA
    trials: int = 1
    out: str = "results"
    temperature_initial: float = 4.0
    temperature_final: float = 0.2
    energy_scale: float = 2.0
    perturbation: float = 0.05
    sizes: list[int] = field(default_factory=lambda: [4, 8, 16, 32, 64])
    deltas: list[float] = field(default_factory=lambda: [0.1])
    workers: int = 1
    tv_threshold: float = DEFAULT_TV_THRESHOLD
    ideal_reflections: bool = False
    sequence_file: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.trials < 1 or self.workers < 1:
            raise DomainError("trials and workers must be positive")

    def sequence_spec(self) -> SequenceSpec:
        return SequenceSpec(
            family=self.family,
            n=self.n,
            length=self.length,
            temperature_initial=self.temperature_initial,
            temperature_final=self.temperature_final,
            energy_scale=self.energy_scale,
            perturbation=self.perturbation,
            target_eta=self.eta,
            target_kappa=self.kappa,
        )

    def protocol_config(self, n: Optional[int] = None) -> ProtocolConfig:
        return ProtocolConfig(
            c=self.c,
            eta=self.eta,
            kappa=self.kappa,
            n=n if n is not None else self.n,
            ideal_reflections=self.ideal_reflections,
        )


@dataclass
class AmplificationReport:
    """Outcome of one amplitude-amplification routine."""

    succeeded: bool
    iterations_used: int
    walk_calls: int
    attempts: int = 0
    output_state: Any = field(default=None, repr=False)
    sampled_index: Optional[int] = None
