"""
The sequential mixing protocol.

Each time step receives the next chain of a slowly evolving sequence and must output a
sample of its stationary distribution while keeping ``c`` further samples for later use.
A step first tries to prepare ``|pi(t)>`` from the uniform encoding with a small iteration
cap. If any of those attempts gives up, it falls back to rebuilding the previous
stationary state (by unsearching from the samples cached one step earlier, or from
uniform) and projecting it onto ``|pi(t)>``, which succeeds with probability about the
neighbor fidelity. Only when both routes are exhausted is the expensive forced
preparation from uniform used.

At most two walk bundles (previous and current step) and one sample cache are alive at
any time.
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from src.amplification import (
    prepare_from_uniform_amplified,
    prepare_with_known_mode,
    reflector_for,
    unsearch_from_basis,
)
from src.chains import preparation_hint
from src.constants import REBUILD_BUDGET_FACTOR, fallback_iteration_cap, seed_iteration_cap
from src.exceptions import DomainError, ExhaustedRetries, PreconditionViolated, StepFailure
from src.markov import fidelity_coherent
from src.models import CostLedger, PreparationHint, PreparationMethod, ProtocolConfig, SampleCache, StepResult
from src.phase import ErrorBudget, error_budget, pi_projective_measurement
from src.statevector import Register, RngStream, StateVector, ledger_scope, measure_register
from src.szegedy import WalkBundle, build_walk

logger = logging.getLogger(__name__)

MAX_FALLBACK_ATTEMPTS = 64


class Outcome(enum.Enum):
    Unsuccessful = "unsuccessful"


class Route(enum.Enum):
    """How the previous stationary state is rebuilt."""

    Seeds = "seeds"
    Uniform = "uniform"


@dataclass
class PreparedSamples:
    samples: tuple[int, ...]
    coherent_state: Optional[StateVector] = None
    route: Optional[Route] = None
    rebuilds: int = 0


@dataclass
class ProtocolState:
    """What survives from one step to the next."""

    previous: Optional[WalkBundle] = None
    cache: Optional[SampleCache] = None
    route: Route = Route.Seeds
    steps_done: int = 0
    peak_bundles: int = field(default=0, repr=False)

    def advance(self, bundle: WalkBundle, cache: Optional[SampleCache], route: Route):
        self.previous = bundle
        self.cache = cache
        self.route = route
        self.steps_done += 1


@dataclass(frozen=True)
class FailureBound:
    exact: float
    ideal: float
    imperfect: float


def failure_bound(c: int) -> FailureBound:
    """Per-step failure bounds: ``1 - (1 - 4^-c)^c <= 2^-c``, and ``2^(1-c)`` with imperfect reflections."""
    if int(c) != c or c < 1:
        raise DomainError(f"confidence c must be an integer >= 1, got {c}")
    exact = -math.expm1(c * math.log1p(-(4.0**-c)))
    return FailureBound(exact=exact, ideal=2.0**-c, imperfect=2.0 ** (1 - c))


def _internal(c: int) -> int:
    return c + 1


def _copies(cfg: ProtocolConfig) -> int:
    return cfg.c + int(cfg.retain_coherent)


def _measure_copies(states: list[StateVector], cfg: ProtocolConfig, rng: RngStream,
                    route: Optional[Route]) -> PreparedSamples:
    samples = tuple(measure_register(s, Register.I, rng)[0] for s in states[: cfg.c])
    coherent = states[cfg.c] if cfg.retain_coherent and len(states) > cfg.c else None
    return PreparedSamples(samples=samples, coherent_state=coherent, route=route)


def prepare_from_uniform_sub(bundle: WalkBundle, cfg: ProtocolConfig, rng: RngStream,
                             confidence: Optional[int] = None,
                             budget: Optional[ErrorBudget] = None,
                             reflector=None) -> Union[StateVector, Outcome]:
    """One preparation from uniform with the ``ceil(2 N^(1/4))`` iteration cap."""
    c = _internal(confidence or cfg.c)
    budget = budget or error_budget(c, cfg.eta, bundle.delta)
    reflector = reflector or reflector_for(bundle, budget.epsilon_samp, cfg.ideal_reflections)
    try:
        report = prepare_from_uniform_amplified(
            bundle,
            c,
            rng,
            max_iterations=seed_iteration_cap(bundle.n),
            reflector=reflector,
            measurement_cfg=budget.sampling,
            ideal=cfg.ideal_reflections,
        )
    except ExhaustedRetries as error:
        logger.debug("preparation from uniform gave up: %s", error)
        return Outcome.Unsuccessful
    return report.output_state


def _rebuild_previous(bundle_prev: WalkBundle, cache_prev: SampleCache, preferred: Route,
                      cfg: ProtocolConfig, rng: RngStream, budget: ErrorBudget, reflector,
                      step: int) -> tuple[StateVector, Route]:
    c = _internal(cfg.c)
    cap = seed_iteration_cap(bundle_prev.n)
    order = [preferred, Route.Uniform if preferred is Route.Seeds else Route.Seeds]
    for route in order:
        if route is Route.Seeds:
            for seed in dict.fromkeys(cache_prev.samples):
                try:
                    report = unsearch_from_basis(
                        bundle_prev,
                        seed,
                        c,
                        rng,
                        reflector=reflector,
                        max_iterations=cap,
                        sweeps=1,
                        measurement_cfg=budget.sampling,
                        ideal=cfg.ideal_reflections,
                    )
                except ExhaustedRetries:
                    logger.debug("seed %d did not rebuild the previous state", seed)
                    continue
                return report.output_state, Route.Seeds
        else:
            outcome = prepare_from_uniform_sub(bundle_prev, cfg, rng, budget=budget, reflector=reflector)
            if outcome is not Outcome.Unsuccessful:
                return outcome, Route.Uniform
        logger.debug("route %s exhausted while rebuilding step %d", route.value, step - 1)
    raise StepFailure(step, "neither cached seeds nor uniform rebuilt the previous state")


def prepare_samples_sub(bundle_prev: WalkBundle, bundle_cur: WalkBundle, cache_prev: SampleCache,
                        cfg: ProtocolConfig, rng: RngStream, route: Route = Route.Seeds) -> PreparedSamples:
    """Rebuild ``|pi(t-1)>`` repeatedly and project each copy onto ``|pi(t)>``.

    About ``c / eta`` rebuilds are expected; ``ceil(4 (c + 1) / eta)`` are allowed before
    the step is declared failed.
    """
    step = cache_prev.step_index + 1
    c = _internal(cfg.c)
    budget_prev = error_budget(c, cfg.eta, bundle_prev.delta)
    budget_cur = error_budget(c, cfg.eta, bundle_cur.delta)
    reflector = reflector_for(bundle_prev, budget_prev.epsilon_samp, cfg.ideal_reflections)
    needed = _copies(cfg)
    rebuild_budget = math.ceil(REBUILD_BUDGET_FACTOR * (needed + 1) / cfg.eta)

    accepted = []
    rebuilds = 0
    while len(accepted) < needed:
        if rebuilds >= rebuild_budget:
            raise StepFailure(step, f"{rebuilds} rebuilds gave only {len(accepted)} of {needed} copies")
        previous_state, route = _rebuild_previous(
            bundle_prev, cache_prev, route, cfg, rng, budget_prev, reflector, step
        )
        rebuilds += 1
        projected, state = pi_projective_measurement(
            bundle_cur, previous_state, c, rng, budget_cur.measurement, ideal=cfg.ideal_reflections
        )
        if projected:
            accepted.append(state)
    logger.debug("step %d: %d rebuilds for %d copies", step, rebuilds, needed)
    prepared = _measure_copies(accepted, cfg, rng, route)
    prepared.rebuilds = rebuilds
    return prepared


def fallback_full_prepare(bundle: WalkBundle, cfg: ProtocolConfig, rng: RngStream, step: int = 0) -> PreparedSamples:
    """Force the preparation from uniform with the ``ceil(2 sqrt(N))`` cap until every copy exists."""
    c = _internal(cfg.c)
    budget = error_budget(c, cfg.eta, bundle.delta)
    reflector = reflector_for(bundle, budget.epsilon_samp, cfg.ideal_reflections)
    states = []
    for _ in range(_copies(cfg)):
        for _attempt in range(MAX_FALLBACK_ATTEMPTS):
            try:
                report = prepare_from_uniform_amplified(
                    bundle,
                    c,
                    rng,
                    max_iterations=fallback_iteration_cap(bundle.n),
                    reflector=reflector,
                    measurement_cfg=budget.sampling,
                    ideal=cfg.ideal_reflections,
                )
            except ExhaustedRetries:
                continue
            states.append(report.output_state)
            break
        else:
            raise StepFailure(step, f"forced preparation failed {MAX_FALLBACK_ATTEMPTS} times")
    return _measure_copies(states, cfg, rng, Route.Uniform)


def _first_step(bundle: WalkBundle, hint: PreparationHint, cfg: ProtocolConfig,
                rng: RngStream) -> tuple[PreparedSamples, PreparationMethod]:
    c = _internal(cfg.c)
    budget = error_budget(c, cfg.eta, bundle.delta)
    reflector = reflector_for(bundle, budget.epsilon_samp, cfg.ideal_reflections)
    heavy_mode = hint.mode_index is not None and hint.mode_prob >= 1.0 / math.sqrt(bundle.n)
    if not hint.uniform_accessible and not heavy_mode:
        raise PreconditionViolated("the first chain is neither uniform-accessible nor has a heavy mode")

    states = []
    for _ in range(_copies(cfg)):
        if hint.mode_index is None:
            report = prepare_from_uniform_amplified(
                bundle, c, rng, max_iterations=seed_iteration_cap(bundle.n), reflector=reflector,
                measurement_cfg=budget.sampling, ideal=cfg.ideal_reflections,
            )
        else:
            report = prepare_with_known_mode(
                bundle, hint.mode_index, hint.mode_prob, c, rng, reflector=reflector,
                max_iterations=seed_iteration_cap(bundle.n), measurement_cfg=budget.sampling,
                ideal=cfg.ideal_reflections,
            )
        states.append(report.output_state)
    if heavy_mode:
        return _measure_copies(states, cfg, rng, Route.Seeds), PreparationMethod.Samples
    return _measure_copies(states, cfg, rng, Route.Uniform), PreparationMethod.Uniform


def _check_assumptions(bundle: WalkBundle, state: ProtocolState, cfg: ProtocolConfig):
    previous = state.previous
    if previous is None:
        return
    fidelity = fidelity_coherent(previous.pi, bundle.pi)
    if fidelity < cfg.eta * (1 - 1e-12):
        raise PreconditionViolated(f"neighbor fidelity {fidelity:.4f} is below eta = {cfg.eta}")
    ratio = bundle.delta / previous.delta
    if not 1.0 / cfg.kappa <= ratio <= cfg.kappa:
        raise PreconditionViolated(f"gap ratio {ratio:.4f} outside [1/{cfg.kappa}, {cfg.kappa}]")


def protocol_step(t: int, stream: Iterator, state: ProtocolState, cfg: ProtocolConfig,
                  rng: RngStream) -> StepResult:
    """Consume the next chain of ``stream`` and produce the step's sample and cache."""
    chain, delta, hint = next(stream)
    ledger = CostLedger()
    step_rng = rng.substream(t)
    failed = False
    with ledger_scope(ledger):
        bundle = build_walk(chain, delta=delta)
        held = 1 + int(state.previous is not None)
        state.peak_bundles = max(state.peak_bundles, held)
        assert held <= 2, "the protocol keeps at most two walk bundles"
        if cfg.check_assumptions:
            _check_assumptions(bundle, state, cfg)
            hint = hint or preparation_hint(bundle.pi)
        try:
            if state.previous is None:
                if hint is None:
                    raise PreconditionViolated("the first step needs a preparation hint")
                prepared, method = _first_step(bundle, hint, cfg, step_rng)
            else:
                prepared, method = _later_step(t, bundle, state, cfg, step_rng)
        except (StepFailure, ExhaustedRetries) as error:
            logger.warning("%s; forcing preparation from uniform", error)
            failed = True
            method = PreparationMethod.Fallback
            try:
                prepared = fallback_full_prepare(bundle, cfg, step_rng, step=t)
            except StepFailure as fallback_error:
                logger.error("%s; the step has no sample", fallback_error)
                prepared = PreparedSamples(samples=())

    cache = SampleCache(step_index=t, samples=prepared.samples, method_used=method) if prepared.samples else None
    output_sample = prepared.samples[0] if prepared.samples else None
    state.advance(bundle, cache, prepared.route or state.route)
    logger.info("step %d: method=%s sample=%s walk_calls=%d", t, method.value, output_sample, ledger.walk_calls)
    return StepResult(
        t=t,
        output_sample=output_sample,
        coherent_state_available=prepared.coherent_state is not None,
        cache=cache,
        ledger=ledger,
        failed=failed,
        method=method,
        delta=bundle.delta,
        n=bundle.n,
        coherent_state=prepared.coherent_state,
    )


def _later_step(t: int, bundle: WalkBundle, state: ProtocolState, cfg: ProtocolConfig,
                rng: RngStream) -> tuple[PreparedSamples, PreparationMethod]:
    budget = error_budget(_internal(2 * cfg.c), cfg.eta, bundle.delta)
    reflector = reflector_for(bundle, budget.epsilon_samp, cfg.ideal_reflections)
    states = []
    for _ in range(_copies(cfg)):
        outcome = prepare_from_uniform_sub(bundle, cfg, rng, confidence=2 * cfg.c, budget=budget, reflector=reflector)
        if outcome is Outcome.Unsuccessful:
            logger.debug("step %d: uniform route aborted after %d copies", t, len(states))
            break
        states.append(outcome)
    else:
        return _measure_copies(states, cfg, rng, Route.Uniform), PreparationMethod.Uniform
    if state.cache is None:
        raise StepFailure(t, f"step {t - 1} left no cached samples")
    prepared = prepare_samples_sub(state.previous, bundle, state.cache, cfg, rng, route=state.route)
    return prepared, PreparationMethod.Samples


class MixingProtocol:
    """Runs the protocol over a chain stream, one ``StepResult`` per step."""

    def __init__(self, config: ProtocolConfig, rng: RngStream):
        self.config = config
        self.rng = rng
        self.state = ProtocolState()

    def run(self, sequence, steps: Optional[int] = None) -> Iterator[StepResult]:
        stream = iter(sequence)
        t = self.state.steps_done
        while steps is None or t < steps:
            t += 1
            try:
                yield protocol_step(t, stream, self.state, self.config, self.rng)
            except StopIteration:
                return
