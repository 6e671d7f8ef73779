"""Automatic step labels for verifier training.

Each step of a trace receives a correctness and a progressiveness label from
judge prompts that see the court's own reasoning, and a potential label from
rollouts scored against the gold decision. The training target ``y`` is the
minimum of the three.

Export schema (one JSON object per line):

    case_id, step_index, step_text,
    correctness_label, progressiveness_label, potential_label, y,
    error_type (enum value or null), judge_rationales {perspective: text},
    potential_successes, potential_n

Quarantine files share the schema, with labels that could not be computed set
to null and an extra ``error`` field. Downstream trainers fitting a process
verifier typically minimise the binary cross-entropy
``-(y log p + (1 - y) log(1 - p))`` averaged over steps, where ``p`` is the
verifier's predicted step quality.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .backends import Backends, ChatBackend, check_score, generate_one, judge_json
from .case_model import ErrorType, LegalCase, ReasoningTrace, StepVerification, dumps_line
from .correction import ERROR_DESCRIPTIONS, attribute_error
from .errors import AlignmentError, AnnotationError, AttributionError, BackendError
from .prompts import TemplateSet
from .verifier import (
    DEFAULT_POTENTIAL_SAMPLES,
    DEFAULT_THRESHOLD,
    FINALIZE_MARKER,
    ROLLOUT_TEMPERATURE,
    estimate_potential,
    make_verification,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnotationConfig:
    threshold: float = DEFAULT_THRESHOLD
    potential_samples: int = DEFAULT_POTENTIAL_SAMPLES
    seed: int = 0
    rollout_temperature: float = ROLLOUT_TEMPERATURE
    binarize: bool = False  # threshold judge scores to {0, 1} before the min
    attribute: bool = False  # label flagged steps with an error type
    finalize_marker: str = FINALIZE_MARKER


@dataclass(frozen=True)
class AnnotationRecord:
    case_id: str
    step_index: int
    step_text: str
    correctness_label: float | None
    progressiveness_label: float | None
    potential_label: float | None
    y: float | None
    error_type: ErrorType | None = None
    judge_rationales: dict[str, str] = field(default_factory=dict)
    potential_successes: int | None = None
    potential_n: int | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        if self.error is not None:
            return
        labels = (self.correctness_label, self.progressiveness_label, self.potential_label)
        for v in labels:
            if v is None or not 0.0 <= v <= 1.0:
                raise ValueError(f"label {v!r} outside [0, 1]")
        if self.y != min(labels):
            raise ValueError(f"y={self.y} violates the min rule for {labels}")

    @property
    def quarantined(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict[str, Any]:
        d = {
            "case_id": self.case_id,
            "step_index": self.step_index,
            "step_text": self.step_text,
            "correctness_label": self.correctness_label,
            "progressiveness_label": self.progressiveness_label,
            "potential_label": self.potential_label,
            "y": self.y,
            "error_type": self.error_type.value if self.error_type else None,
            "judge_rationales": dict(self.judge_rationales),
            "potential_successes": self.potential_successes,
            "potential_n": self.potential_n,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AnnotationRecord":
        et = d.get("error_type")
        return cls(
            case_id=d["case_id"], step_index=d["step_index"], step_text=d["step_text"],
            correctness_label=d.get("correctness_label"),
            progressiveness_label=d.get("progressiveness_label"),
            potential_label=d.get("potential_label"), y=d.get("y"),
            error_type=ErrorType.parse(et) if et else None,
            judge_rationales=dict(d.get("judge_rationales") or {}),
            potential_successes=d.get("potential_successes"), potential_n=d.get("potential_n"),
            error=d.get("error"),
        )


def check_eligible(case: LegalCase) -> None:
    if not case.gold_reasoning:
        raise AnnotationError(f"case {case.case_id} has no gold reasoning; cannot annotate")
    if case.gold_decision not in (0, 1):
        raise AnnotationError(f"case {case.case_id} has no gold decision; cannot annotate")


def _judge_label(backend: ChatBackend, templates: TemplateSet, name: str, case: LegalCase,
                 prefix: Sequence[str], step: str, index: int) -> tuple[float, str]:
    prompt = templates.render(
        name, routing={"case_id": case.case_id, "step_index": index},
        facts=case.facts, gold_reasoning=case.gold_reasoning, gold_decision=case.gold_decision,
        gold_judgments=case.gold_judgments, steps=list(prefix), step=step,
    )
    rec = judge_json(backend, prompt, ["score"]).record
    return check_score(rec["score"], name), str(rec.get("rationale", ""))


def annotate_trace(case: LegalCase, trace: ReasoningTrace, backends: Backends,
                   config: AnnotationConfig | None = None,
                   templates: TemplateSet | None = None) -> list[AnnotationRecord]:
    """One record per step; steps whose judging fails come back with ``error`` set."""
    config = config or AnnotationConfig()
    templates = templates or TemplateSet()
    check_eligible(case)
    if trace.case_id != case.case_id:
        raise AnnotationError(f"trace {trace.case_id} does not belong to case {case.case_id}")
    texts = trace.step_texts
    out: list[AnnotationRecord] = []
    for i, text in enumerate(texts, start=1):
        prefix = texts[:i - 1]
        labels: dict[str, float | None] = {"correctness": None, "progressiveness": None,
                                           "potential": None}
        rationales: dict[str, str] = {}
        est = None
        try:
            for name in ("correctness", "progressiveness"):
                score, why = _judge_label(backends.judge, templates, f"annotate_{name}", case,
                                          prefix, text, i)
                if config.binarize:
                    score = 1.0 if score >= config.threshold else 0.0
                labels[name], rationales[name] = score, why
            est = estimate_potential(
                case, texts[:i], backends.rollout, config.potential_samples, config.seed,
                case.gold_decision, disputes=trace.disputes, templates=templates,
                temperature=config.rollout_temperature, marker=config.finalize_marker,
            )
            labels["potential"] = est.value
            rationales["potential"] = f"{est.successes}/{est.n} rollouts reached the gold decision"
        except (BackendError, ValueError) as exc:
            log.warning("annotation of %s step %d quarantined: %s", case.case_id, i, exc)
            out.append(AnnotationRecord(
                case.case_id, i, text, labels["correctness"], labels["progressiveness"],
                labels["potential"], None, None, rationales,
                est.successes if est else None, est.n if est else None,
                error=f"{type(exc).__name__}: {exc}",
            ))
            continue
        y = min(labels["correctness"], labels["progressiveness"], labels["potential"])
        error_type = None
        if config.attribute and y < config.threshold:
            verification = make_verification(labels["correctness"], labels["progressiveness"],
                                              labels["potential"], config.threshold)
            error_type = _attribute(case, prefix, text, verification, backends.judge, templates)
        out.append(AnnotationRecord(
            case.case_id, i, text, labels["correctness"], labels["progressiveness"],
            labels["potential"], y, error_type, rationales, est.successes, est.n,
        ))
    return out


def _attribute(case: LegalCase, prefix: Sequence[str], step: str, verification: StepVerification,
               backend: ChatBackend, templates: TemplateSet) -> ErrorType | None:
    try:
        return attribute_error(case, prefix, step, verification, backend, templates).error_type
    except (AttributionError, BackendError) as exc:
        log.warning("attribution of %s step failed: %s", case.case_id, exc)
        return None


def split_quarantine(records: Iterable[AnnotationRecord]
                     ) -> tuple[list[AnnotationRecord], list[AnnotationRecord]]:
    good, bad = [], []
    for r in records:
        (bad if r.quarantined else good).append(r)
    return good, bad


def export_jsonl(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for r in records:
                fh.write(dumps_line(r.to_dict()))
    except OSError as exc:
        raise OSError(f"cannot write annotations to {path}: {exc}") from exc


def import_jsonl(path: str | Path) -> list[AnnotationRecord]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            return [AnnotationRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    except OSError as exc:
        raise OSError(f"cannot read annotations from {path}: {exc}") from exc


# --------------------------------------------------------------------------
# agreement with human labels


@dataclass(frozen=True)
class HumanLabel:
    case_id: str
    step_index: int
    flagged: bool
    error_type: ErrorType | None = None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HumanLabel":
        et = d.get("error_type")
        return cls(d["case_id"], int(d["step_index"]), bool(d["flagged"]),
                   ErrorType.parse(et) if et else None)


@dataclass(frozen=True)
class AgreementReport:
    verification_accuracy: float
    attribution_accuracy: float | None  # None when humans flagged nothing
    n_steps: int
    n_flagged: int


def annotation_agreement(auto: Sequence[AnnotationRecord], human: Sequence[HumanLabel],
                         threshold: float = DEFAULT_THRESHOLD) -> AgreementReport:
    """Compare automatic labels with human ones, aligned on (case_id, step_index).

    A step counts as flagged automatically when ``y < threshold``; attribution
    accuracy is measured over the steps the human flagged.
    """
    if not human:
        raise AlignmentError("human label set is empty")
    auto_by = {(r.case_id, r.step_index): r for r in auto if not r.quarantined}
    human_by = {(h.case_id, h.step_index): h for h in human}
    orphans = sorted(set(auto_by) ^ set(human_by))
    if orphans:
        raise AlignmentError(f"unaligned steps: {orphans}", orphans)
    flag_hits = type_hits = n_flagged = 0
    for key, h in human_by.items():
        a = auto_by[key]
        flag_hits += (a.y < threshold) == h.flagged
        if h.flagged:
            n_flagged += 1
            type_hits += a.error_type is not None and a.error_type == h.error_type
    return AgreementReport(
        verification_accuracy=flag_hits / len(human_by),
        attribution_accuracy=type_hits / n_flagged if n_flagged else None,
        n_steps=len(human_by), n_flagged=n_flagged,
    )


# --------------------------------------------------------------------------
# error-typed negatives


@dataclass(frozen=True)
class NegativeExample:
    case_id: str
    source_index: int  # 1-based position in the gold reasoning
    source_text: str
    step_text: str
    error_type: ErrorType

    def to_dict(self) -> dict[str, Any]:
        return {"case_id": self.case_id, "source_index": self.source_index,
                "source_text": self.source_text, "step_text": self.step_text,
                "error_type": self.error_type.value}


def synthesize_negatives(case: LegalCase, backend: ChatBackend,
                         error_types: Sequence[ErrorType] = tuple(ErrorType),
                         templates: TemplateSet | None = None) -> list[NegativeExample]:
    """Perturb each gold reasoning step once per error type; the label holds by construction."""
    check_eligible(case)
    templates = templates or TemplateSet()
    out = []
    for i, gold in enumerate(case.gold_reasoning, start=1):
        for et in error_types:
            prompt = templates.render(
                "perturb_step",
                routing={"case_id": case.case_id, "step_index": i, "error_type": et.value},
                facts=case.facts, step=gold, error_type=et.value,
                error_description=ERROR_DESCRIPTIONS[et],
            )
            text = generate_one(backend, prompt).strip()
            if not text or text == gold.strip():
                log.warning("perturbation of %s step %d as %s produced no change",
                            case.case_id, i, et.code)
                continue
            out.append(NegativeExample(case.case_id, i, gold, text, et))
    return out
