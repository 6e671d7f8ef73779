"""Per-step process verification.

Three perspective scores are combined by taking their minimum, never an
average, and a step is flagged when that minimum is strictly below the
threshold. Potential can come from a scorer (inference) or from Monte Carlo
rollouts against a known decision (annotation).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from .backends import (
    Backends,
    ChatBackend,
    SamplingParams,
    ScoreContext,
    derive_seed,
    generate,
)
from .case_model import (
    LegalCase,
    Perspective,
    PerspectiveSource,
    StepVerification,
    parse_judgment_payload,
)
from .errors import BackendError, ConfigError, VerificationError
from .prompts import TemplateSet

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
DEFAULT_POTENTIAL_SAMPLES = 8
ROLLOUT_TEMPERATURE = 0.7
FINALIZE_MARKER = "FINAL JUDGMENT:"


@dataclass(frozen=True)
class VerifierConfig:
    threshold: float = DEFAULT_THRESHOLD
    potential_samples: int = DEFAULT_POTENTIAL_SAMPLES
    # "scorer": potential from the configured ScoreBackend; "rollout": Monte Carlo against a target decision
    potential_mode: str = "scorer"
    fail_flags: bool = False
    rollout_temperature: float = ROLLOUT_TEMPERATURE
    seed: int = 0
    finalize_marker: str = FINALIZE_MARKER

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.potential_samples < 1:
            raise ConfigError("potential_samples must be >= 1")
        if self.potential_mode not in ("scorer", "rollout"):
            raise ConfigError(f"unknown potential_mode {self.potential_mode!r}")


def aggregate(correctness: float, progressiveness: float, potential: float) -> float:
    return min(correctness, progressiveness, potential)


def is_flagged(aggregate_score: float, threshold: float) -> bool:
    return aggregate_score < threshold


def make_verification(correctness: float, progressiveness: float, potential: float,
                      threshold: float = DEFAULT_THRESHOLD,
                      source: PerspectiveSource = PerspectiveSource.JUDGE_PROMPT,
                      failed_perspective: str | None = None) -> StepVerification:
    agg = aggregate(correctness, progressiveness, potential)
    return StepVerification(
        correctness=correctness,
        progressiveness=progressiveness,
        potential=potential,
        aggregate=agg,
        flagged=is_flagged(agg, threshold) or failed_perspective is not None,
        perspective_source=source,
        threshold=threshold,
        failed_perspective=failed_perspective,
    )


@dataclass(frozen=True)
class PotentialEstimate:
    value: float
    successes: int
    n: int
    unfinalized: int = 0
    decisions: tuple[int | None, ...] = field(default=(), compare=False)


def rollout_seed(base_seed: int, case_id: str, step_index: int) -> int:
    return derive_seed(base_seed, case_id, step_index, "rollout")


def estimate_potential(case: LegalCase, prefix: Sequence[str], backend: ChatBackend, n: int,
                       seed: int, target_decision: int, *, disputes: Sequence[str] = (),
                       templates: TemplateSet | None = None,
                       temperature: float = ROLLOUT_TEMPERATURE,
                       marker: str = FINALIZE_MARKER) -> PotentialEstimate:
    """Fraction of ``n`` sampled completions of ``prefix`` that reach ``target_decision``.

    A completion that never produces a parsable final decision counts as a
    failure and is also tallied in ``unfinalized``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if target_decision not in (0, 1):
        raise ValueError("target decision must be 0 or 1")
    if not prefix:
        raise ValueError("prefix must contain the step under evaluation")
    templates = templates or TemplateSet()
    steps = tuple(prefix)  # rollouts never see a mutable trace
    k = len(steps)
    prompt = templates.render(
        "rollout",
        routing={"case_id": case.case_id, "step_index": k},
        claim=case.claim, facts=case.facts, disputes=list(disputes),
        steps=list(steps), marker=marker,
    )
    sampling = SamplingParams(temperature=temperature, seed=rollout_seed(seed, case.case_id, k),
                              n_samples=n)
    successes = unfinalized = 0
    decisions: list[int | None] = []
    for completion in generate(backend, prompt, sampling):
        result = parse_judgment_payload(completion.text, marker)
        if result is None:
            unfinalized += 1
            decisions.append(None)
            continue
        decisions.append(result.final_decision)
        if result.final_decision == target_decision:
            successes += 1
    return PotentialEstimate(successes / n, successes, n, unfinalized, tuple(decisions))


class Verifier:
    """Scores steps with the perspective backends in ``backends.scorers``."""

    def __init__(self, backends: Backends, config: VerifierConfig | None = None,
                 templates: TemplateSet | None = None):
        self.backends = backends
        self.config = config or VerifierConfig()
        self.templates = templates or TemplateSet()
        needed = [Perspective.CORRECTNESS, Perspective.PROGRESSIVENESS]
        if self.config.potential_mode == "scorer":
            needed.append(Perspective.POTENTIAL)
        missing = [p.value for p in needed if p not in backends.scorers]
        if missing:
            raise ConfigError(f"no score backend routed for: {', '.join(missing)}")

    def score_step(self, case: LegalCase, prefix: Sequence[str], step: str, *,
                   disputes: Sequence[str] = (),
                   target_decision: int | None = None) -> StepVerification:
        if not step or not step.strip():
            raise ValueError("step text is empty")
        context = ScoreContext(case, tuple(disputes), tuple(prefix))
        scores: dict[Perspective, float] = {}
        source = PerspectiveSource.JUDGE_PROMPT
        for perspective in Perspective:
            try:
                if perspective is Perspective.POTENTIAL and self.config.potential_mode == "rollout":
                    if target_decision is None:
                        raise ConfigError("rollout potential needs a target decision")
                    est = estimate_potential(
                        case, [*prefix, step], self.backends.rollout, self.config.potential_samples,
                        self.config.seed, target_decision, disputes=disputes,
                        templates=self.templates, temperature=self.config.rollout_temperature,
                        marker=self.config.finalize_marker,
                    )
                    scores[perspective] = est.value
                    source = PerspectiveSource.ROLLOUT
                else:
                    backend = self.backends.scorers[perspective]
                    scores[perspective] = backend.score_step(context, step, perspective)
                    if perspective is Perspective.POTENTIAL:
                        source = backend.source
            except (BackendError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                if not self.config.fail_flags:
                    raise VerificationError(perspective.value, exc) from exc
                log.warning("perspective %s failed on %s; flagging step", perspective.value,
                            case.case_id)
                scores[perspective] = 0.0
                rest = {p: 0.0 for p in Perspective if p not in scores}
                scores.update(rest)
                return make_verification(
                    scores[Perspective.CORRECTNESS], scores[Perspective.PROGRESSIVENESS],
                    scores[Perspective.POTENTIAL], self.config.threshold, source,
                    failed_perspective=perspective.value,
                )
        return make_verification(
            scores[Perspective.CORRECTNESS], scores[Perspective.PROGRESSIVENESS],
            scores[Perspective.POTENTIAL], self.config.threshold, source,
        )
