"""Dispute identification and step-wise reasoning.

Each step is generated by its own backend call so the verifier can gate it
before the next one is produced. A reply that starts with the finalize
marker ends the reasoning and carries the judgments and decision.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

from .backends import (
    GREEDY,
    Backends,
    ChatBackend,
    SamplingParams,
    derive_seed,
    generate_one,
    judge_json,
)
from .case_model import (
    JudgmentSet,
    LegalCase,
    ReasoningStep,
    ReasoningTrace,
    parse_judgment_payload,
)
from .correction import CorrectionConfig, CorrectionServices, correction_loop
from .errors import (
    BackendError,
    DecodeError,
    DisputeIdentificationError,
    LexstepError,
    StepError,
)
from .prompts import TemplateSet
from .verifier import FINALIZE_MARKER, Verifier

log = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 12


@dataclass(frozen=True)
class ReasonerConfig:
    max_steps: int = DEFAULT_MAX_STEPS
    step_template: str = "step"
    dispute_template: str = "disputes"
    finalize_template: str = "finalize"
    finalize_marker: str = FINALIZE_MARKER

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class StepOutcome:
    step: str | None = None
    judgment: JudgmentSet | None = None
    truncated: bool = False

    @property
    def finalized(self) -> bool:
        return self.judgment is not None


def identify_disputes(case: LegalCase, backend: ChatBackend, templates: TemplateSet | None = None,
                      template: str = "disputes", routing: dict | None = None) -> list[str]:
    templates = templates or TemplateSet()
    prompt = templates.render(template, routing={"case_id": case.case_id, **(routing or {})},
                              claim=case.claim, facts=case.facts)
    raw = judge_json(backend, prompt, ["disputes"]).record["disputes"]
    if isinstance(raw, str):
        raw = [raw]
    disputes = [str(d).strip() for d in (raw or []) if str(d).strip()]
    if not disputes:
        raise DisputeIdentificationError(f"no disputes identified for case {case.case_id}")
    return disputes


def next_step(case: LegalCase, disputes: Sequence[str], steps: Sequence[str], backend: ChatBackend,
              config: ReasonerConfig | None = None, templates: TemplateSet | None = None,
              sampling: SamplingParams = GREEDY, routing: dict | None = None) -> StepOutcome:
    """Produce step ``len(steps) + 1`` or the final judgment.

    At the step budget a dedicated finalize prompt forces a judgment and the
    outcome is marked truncated.
    """
    config = config or ReasonerConfig()
    extra = routing or {}
    templates = templates or TemplateSet()
    k = len(steps)
    if k >= config.max_steps:
        prompt = templates.render(config.finalize_template,
                                  routing={"case_id": case.case_id, "step_index": k + 1, **extra},
                                  claim=case.claim, facts=case.facts, disputes=list(disputes),
                                  steps=list(steps))
        res = judge_json(backend, prompt, ["judgments", "decision"], sampling)
        judgment = parse_judgment_payload(_json_text(res.record))
        if judgment is None:
            raise DecodeError("forced finalization did not yield judgments and a 0/1 decision",
                              raw=res.raw[-1])
        return StepOutcome(judgment=judgment, truncated=True)

    prompt = templates.render(config.step_template,
                              routing={"case_id": case.case_id, "step_index": k + 1, **extra},
                              claim=case.claim, facts=case.facts, disputes=list(disputes),
                              steps=list(steps), step_index=k + 1, marker=config.finalize_marker)
    text = generate_one(backend, prompt, sampling).strip()
    if config.finalize_marker in text:
        judgment = parse_judgment_payload(text, config.finalize_marker)
        if judgment is None:
            raise DecodeError("finalize payload lacks judgments or a 0/1 decision", raw=text)
        if k == 0:
            raise DecodeError("reasoner finalized before producing any step", raw=text)
        return StepOutcome(judgment=judgment)
    if not text:
        raise DecodeError("reasoner returned an empty step", raw=text)
    return StepOutcome(step=text)


def _json_text(record: dict) -> str:
    import json

    return json.dumps(record, ensure_ascii=False)


@dataclass
class ReasoningPipeline:
    """Everything one reasoning run needs.

    ``mode`` is ``"full"`` (verify and correct), ``"score"`` (verify only,
    as used for Best-of-N candidates) or ``"plain"`` (neither).
    """

    backends: Backends
    verifier: Verifier | None = None
    services: CorrectionServices = field(default_factory=CorrectionServices)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    templates: TemplateSet = field(default_factory=TemplateSet)
    mode: str = "full"

    def __post_init__(self) -> None:
        if self.mode not in ("full", "score", "plain"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode != "plain" and self.verifier is None:
            raise ValueError(f"mode {self.mode!r} needs a verifier")


def run_reasoning(case: LegalCase, pipeline: ReasoningPipeline, *, seed: int = 0,
                  temperature: float = 0.0, disputes: Sequence[str] | None = None,
                  events: list[dict] | None = None, candidate: int | None = None) -> ReasoningTrace:
    """Identify disputes, then generate, verify and (if flagged) correct steps until finalized."""
    p = pipeline
    chat = p.backends.reasoner
    routing = {} if candidate is None else {"candidate": candidate}
    try:
        disputes = list(disputes) if disputes is not None else identify_disputes(
            case, chat, p.templates, p.reasoner.dispute_template, routing)
    except (BackendError, LexstepError) as exc:
        if isinstance(exc, DisputeIdentificationError):
            raise
        raise DisputeIdentificationError(f"{case.case_id}: {exc}") from exc

    steps: list[ReasoningStep] = []
    judgment: JudgmentSet | None = None
    truncated = False
    while judgment is None:
        index = len(steps) + 1
        started = time.perf_counter()
        sampling = SamplingParams(temperature=temperature,
                                  seed=derive_seed(seed, case.case_id, index))
        texts = [s.text for s in steps]
        try:
            outcome = next_step(case, disputes, texts, chat, p.reasoner, p.templates, sampling,
                                routing)
            if outcome.finalized:
                judgment, truncated = outcome.judgment, outcome.truncated
                break
            step = _gate(case, disputes, texts, index, outcome.step, p)
        except StepError:
            raise
        except (LexstepError, ValueError) as exc:
            raise StepError(index, exc) from exc
        steps.append(step)
        if events is not None:
            events.append({"event": "step", "case_id": case.case_id, "step": index,
                           "status": step.status, "corrections": len(step.corrections),
                           "duration_ms": round((time.perf_counter() - started) * 1000, 3)})

    metadata = {
        "template_version": p.templates.version,
        "templates": {"disputes": p.templates.template_ref(p.reasoner.dispute_template),
                      "step": p.templates.template_ref(p.reasoner.step_template),
                      "finalize": p.templates.template_ref(p.reasoner.finalize_template)},
        "mode": p.mode,
        "truncated": truncated,
        "seed": seed,
        "temperature": temperature,
    }
    if candidate is not None:
        metadata["candidate"] = candidate
    return ReasoningTrace(case.case_id, tuple(disputes), tuple(steps), judgment.items,
                          judgment.final_decision, metadata)


def _gate(case: LegalCase, disputes: Sequence[str], prefix: list[str], index: int, text: str,
          p: ReasoningPipeline) -> ReasoningStep:
    if p.mode == "plain":
        return ReasoningStep(index, text, None, (), "unverified")
    verification = p.verifier.score_step(case, prefix, text, disputes=disputes)
    if p.mode == "score":
        return ReasoningStep(index, text, verification, (),
                             "flagged" if verification.flagged else "accepted")
    if not verification.flagged:
        return ReasoningStep(index, text, verification, (), "accepted")

    def verify(revised: str):
        return p.verifier.score_step(case, prefix, revised, disputes=disputes)

    return correction_loop(
        case, prefix, index, text, verification, p.services, p.correction,
        p.backends.corrector, verify, disputes=disputes, attributor=p.backends.judge,
        templates=p.templates,
    )
