"""Domain types for cases and reasoning traces, and the JSON-lines corpus format.

On disk a case uses the field names of the published extraction schema so the
released dataset can be ingested unchanged:

==================  ======================
file key            LegalCase attribute
==================  ======================
case_id             case_id
plaintiff_claim     claim
facts               facts
lawsuit_type        lawsuit_type
related_laws        related_laws
relevant_cases      relevant_cases
issues              gold_disputes
court_reasoning     gold_reasoning
judgment_decision   gold_judgments
support&reject      gold_decision ("support" = 1, "reject" = 0)
plaintiff           plaintiff
defendant           defendant
==================  ======================

``gold_decision`` (0/1) is accepted on read as an alternative to
``support&reject``. Any other key is kept in ``LegalCase.extra`` and written back
verbatim.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import CorpusError

DECISION_KEY = "support&reject"
_LIST_FIELDS = {
    "facts": "facts",
    "related_laws": "related_laws",
    "relevant_cases": "relevant_cases",
    "issues": "gold_disputes",
    "court_reasoning": "gold_reasoning",
    "judgment_decision": "gold_judgments",
}
_TEXT_FIELDS = {
    "plaintiff_claim": "claim",
    "lawsuit_type": "lawsuit_type",
    "plaintiff": "plaintiff",
    "defendant": "defendant",
}
_KNOWN_KEYS = {"case_id", DECISION_KEY, "gold_decision", *_LIST_FIELDS, *_TEXT_FIELDS}


def decision_to_label(decision: int) -> str:
    return "support" if decision == 1 else "reject"


def parse_decision(value: Any) -> int | None:
    """Map the accepted spellings of a decision onto {0, 1}; None if unrecognised."""
    if isinstance(value, bool):
        return None
    if isinstance(value, int) and value in (0, 1):
        return value
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("support", "supported", "1"):
            return 1
        if v in ("reject", "rejected", "0"):
            return 0
    return None


@dataclass(frozen=True)
class LegalCase:
    case_id: str
    claim: str
    facts: tuple[str, ...]
    gold_decision: int
    lawsuit_type: str = ""
    related_laws: tuple[str, ...] = ()
    relevant_cases: tuple[str, ...] = ()
    gold_disputes: tuple[str, ...] = ()
    gold_reasoning: tuple[str, ...] = ()
    gold_judgments: tuple[str, ...] = ()
    plaintiff: str = ""
    defendant: str = ""
    extra: dict[str, Any] = field(default_factory=dict, compare=True)

    def __post_init__(self) -> None:
        for name in ("facts", "related_laws", "relevant_cases", "gold_disputes",
                     "gold_reasoning", "gold_judgments"):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        validate_case(self)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "case_id": self.case_id,
            "plaintiff": self.plaintiff,
            "defendant": self.defendant,
            "plaintiff_claim": self.claim,
            "lawsuit_type": self.lawsuit_type,
            "facts": list(self.facts),
            "related_laws": list(self.related_laws),
            "relevant_cases": list(self.relevant_cases),
            "issues": list(self.gold_disputes),
            "court_reasoning": list(self.gold_reasoning),
            "judgment_decision": list(self.gold_judgments),
            DECISION_KEY: decision_to_label(self.gold_decision),
        }
        for key, value in self.extra.items():
            rec.setdefault(key, value)
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any], *, line: int | None = None) -> "LegalCase":
        if not isinstance(rec, dict):
            raise CorpusError("record is not a JSON object", line=line)
        case_id = rec.get("case_id")
        if not isinstance(case_id, str) or not case_id.strip():
            raise CorpusError("missing or empty field 'case_id'", line=line, field="case_id")

        kwargs: dict[str, Any] = {"case_id": case_id}
        for key, attr in _TEXT_FIELDS.items():
            value = rec.get(key, "")
            if value is None:
                value = ""
            if not isinstance(value, str):
                raise CorpusError(f"field '{key}' must be a string", line=line, field=key)
            kwargs[attr] = value
        for key, attr in _LIST_FIELDS.items():
            kwargs[attr] = _as_text_list(rec.get(key), key, line)

        if DECISION_KEY in rec:
            raw_decision = rec[DECISION_KEY]
        else:
            raw_decision = rec.get("gold_decision")
        decision = parse_decision(raw_decision)
        if decision is None:
            raise CorpusError(
                f"field 'gold_decision' must be 0/1 or support/reject, got {raw_decision!r}",
                line=line, field="gold_decision",
            )
        kwargs["gold_decision"] = decision
        kwargs["extra"] = {k: v for k, v in rec.items() if k not in _KNOWN_KEYS}
        try:
            return cls(**kwargs)
        except CorpusError as exc:
            raise CorpusError(str(exc), line=line, field=exc.field) from None


def _as_text_list(value: Any, key: str, line: int | None) -> tuple[str, ...]:
    # the extraction schema uses "" for absent information
    if value is None or value == "":
        return ()
    if isinstance(value, str):
        return (value,)
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise CorpusError(f"field '{key}' must be a list of strings", line=line, field=key)
    return tuple(value)


def validate_case(case: LegalCase) -> None:
    if not case.claim or not case.claim.strip():
        raise CorpusError("field 'claim' (plaintiff_claim) is empty", field="claim")
    if len(case.facts) < 1:
        raise CorpusError("field 'facts' needs at least one entry", field="facts")
    if isinstance(case.gold_decision, bool) or case.gold_decision not in (0, 1):
        raise CorpusError(f"gold_decision must be 0 or 1, got {case.gold_decision!r}",
                          field="gold_decision")


def iter_corpus(path: str | Path) -> Iterator[LegalCase]:
    """Stream cases from a JSON-lines file, rejecting duplicate ids."""
    path = Path(path)
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON: {exc.msg}", line=lineno) from None
            case = LegalCase.from_record(rec, line=lineno)
            if case.case_id in seen:
                raise CorpusError(f"duplicate case_id {case.case_id!r}", line=lineno,
                                  field="case_id")
            seen.add(case.case_id)
            yield case


def load_corpus(path: str | Path) -> list[LegalCase]:
    return list(iter_corpus(path))


def dumps_line(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=False) + "\n"


def save_corpus(cases: Iterable[LegalCase], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for case in cases:
                validate_case(case)
                fh.write(dumps_line(case.to_record()))
    except OSError as exc:
        raise OSError(f"cannot write corpus to {path}: {exc}") from exc


# --------------------------------------------------------------------------
# reasoning traces


class Perspective(str, enum.Enum):
    CORRECTNESS = "correctness"
    PROGRESSIVENESS = "progressiveness"
    POTENTIAL = "potential"


class PerspectiveSource(str, enum.Enum):
    JUDGE_PROMPT = "judge_prompt"
    LEARNED_HEAD = "learned_head"
    ROLLOUT = "rollout"


class ErrorType(str, enum.Enum):
    LEGAL_PRINCIPLE_MISAPPLICATION = "LegalPrincipleMisapplication"
    FACTS_REASONING_DISCREPANCY = "FactsReasoningDiscrepancy"
    COMPENSATION_SCOPE_ERROR = "CompensationScopeError"
    UNENFORCEABLE_JUDGMENT = "UnenforceableJudgment"
    EVIDENCE_CHAIN_ERROR = "EvidenceChainError"
    JOINT_LIABILITY_ERROR = "JointLiabilityError"
    UNADDRESSED_KEY_DISPUTE = "UnaddressedKeyDispute"
    SENTENCING_BIAS = "SentencingBias"

    @property
    def code(self) -> str:
        return _ERROR_CODES[self]

    @classmethod
    def parse(cls, value: str) -> "ErrorType":
        """Accept the enum value, the member name, or the two-letter code."""
        v = value.strip()
        for member in cls:
            if v in (member.value, member.name, member.code):
                return member
        lowered = v.lower().replace("_", "").replace(" ", "")
        for member in cls:
            if lowered == member.value.lower():
                return member
        raise ValueError(f"unknown error type {value!r}")


_ERROR_CODES = {
    ErrorType.LEGAL_PRINCIPLE_MISAPPLICATION: "LP",
    ErrorType.FACTS_REASONING_DISCREPANCY: "FD",
    ErrorType.COMPENSATION_SCOPE_ERROR: "CS",
    ErrorType.UNENFORCEABLE_JUDGMENT: "UE",
    ErrorType.EVIDENCE_CHAIN_ERROR: "EC",
    ErrorType.JOINT_LIABILITY_ERROR: "JL",
    ErrorType.UNADDRESSED_KEY_DISPUTE: "KD",
    ErrorType.SENTENCING_BIAS: "SB",
}


@dataclass(frozen=True)
class StepVerification:
    correctness: float
    progressiveness: float
    potential: float
    aggregate: float
    flagged: bool
    perspective_source: PerspectiveSource = PerspectiveSource.JUDGE_PROMPT
    threshold: float = 0.5
    failed_perspective: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {
            "correctness": self.correctness,
            "progressiveness": self.progressiveness,
            "potential": self.potential,
            "aggregate": self.aggregate,
            "flagged": self.flagged,
            "perspective_source": self.perspective_source.value,
            "threshold": self.threshold,
        }
        if self.failed_perspective:
            d["failed_perspective"] = self.failed_perspective
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StepVerification":
        return cls(
            correctness=d["correctness"],
            progressiveness=d["progressiveness"],
            potential=d["potential"],
            aggregate=d["aggregate"],
            flagged=d["flagged"],
            perspective_source=PerspectiveSource(d.get("perspective_source", "judge_prompt")),
            threshold=d.get("threshold", 0.5),
            failed_perspective=d.get("failed_perspective"),
        )


@dataclass(frozen=True)
class StrategyAction:
    """One entry in a correction strategy's audit trail.

    ``kind`` is one of retrieval, fact-link, calculation, reflection,
    evidence-trace, party-map, dispute-coverage, benchmark or note.
    """

    kind: str
    detail: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StrategyAction":
        return cls(kind=d["kind"], detail=dict(d.get("detail", {})))


@dataclass(frozen=True)
class CorrectionRecord:
    attempt: int
    error_type: ErrorType
    strategy: str
    strategy_trace: tuple[StrategyAction, ...]
    revised_step: str
    re_verification: StepVerification | None
    status: str = "revised"  # revised | upheld | degraded
    evidence: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.strategy_trace, tuple):
            object.__setattr__(self, "strategy_trace", tuple(self.strategy_trace))

    def to_dict(self) -> dict[str, Any]:
        return {
            "attempt": self.attempt,
            "error_type": self.error_type.value,
            "strategy": self.strategy,
            "status": self.status,
            "evidence": self.evidence,
            "strategy_trace": [a.to_dict() for a in self.strategy_trace],
            "revised_step": self.revised_step,
            "re_verification": self.re_verification.to_dict() if self.re_verification else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CorrectionRecord":
        rv = d.get("re_verification")
        return cls(
            attempt=d["attempt"],
            error_type=ErrorType(d["error_type"]),
            strategy=d["strategy"],
            strategy_trace=tuple(StrategyAction.from_dict(a) for a in d["strategy_trace"]),
            revised_step=d["revised_step"],
            re_verification=StepVerification.from_dict(rv) if rv else None,
            status=d.get("status", "revised"),
            evidence=d.get("evidence", ""),
        )


@dataclass(frozen=True)
class ReasoningStep:
    index: int
    text: str
    verification: StepVerification | None = None
    corrections: tuple[CorrectionRecord, ...] = ()
    status: str = "accepted"  # accepted | corrected | unresolved | unverified
    original_text: str | None = None

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("step index must be positive")
        if not isinstance(self.corrections, tuple):
            object.__setattr__(self, "corrections", tuple(self.corrections))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "index": self.index,
            "text": self.text,
            "status": self.status,
            "verification": self.verification.to_dict() if self.verification else None,
            "corrections": [c.to_dict() for c in self.corrections],
        }
        if self.original_text is not None and self.original_text != self.text:
            d["original_text"] = self.original_text
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReasoningStep":
        v = d.get("verification")
        return cls(
            index=d["index"],
            text=d["text"],
            verification=StepVerification.from_dict(v) if v else None,
            corrections=tuple(CorrectionRecord.from_dict(c) for c in d.get("corrections", [])),
            status=d.get("status", "accepted"),
            original_text=d.get("original_text"),
        )


@dataclass(frozen=True)
class JudgmentSet:
    items: tuple[str, ...]
    final_decision: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.items, tuple):
            object.__setattr__(self, "items", tuple(self.items))
        if self.final_decision is not None:
            if self.final_decision not in (0, 1) or isinstance(self.final_decision, bool):
                raise ValueError(f"decision must be 0 or 1, got {self.final_decision!r}")
            if not self.items:
                raise ValueError("a finalized judgment set needs at least one item")


@dataclass(frozen=True)
class ReasoningTrace:
    case_id: str
    disputes: tuple[str, ...] = ()
    steps: tuple[ReasoningStep, ...] = ()
    judgments: tuple[str, ...] = ()
    decision: int | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("disputes", "steps", "judgments"):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        for pos, step in enumerate(self.steps, start=1):
            if step.index != pos:
                raise ValueError(f"step indices must run 1..n, found {step.index} at {pos}")
        if self.decision is not None:
            if self.decision not in (0, 1):
                raise ValueError("decision must be 0 or 1")
            if not self.steps or not self.judgments:
                raise ValueError("a finalized trace needs at least one step and one judgment")

    @property
    def step_texts(self) -> list[str]:
        return [s.text for s in self.steps]

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "disputes": list(self.disputes),
            "steps": [s.to_dict() for s in self.steps],
            "judgments": list(self.judgments),
            "decision": self.decision,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReasoningTrace":
        return cls(
            case_id=d["case_id"],
            disputes=tuple(d.get("disputes", [])),
            steps=tuple(ReasoningStep.from_dict(s) for s in d.get("steps", [])),
            judgments=tuple(d.get("judgments", [])),
            decision=d.get("decision"),
            metadata=dict(d.get("metadata", {})),
        )


def load_traces(path: str | Path) -> list[ReasoningTrace]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip():
                try:
                    out.append(ReasoningTrace.from_dict(json.loads(raw)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise CorpusError(f"bad trace record: {exc}", line=lineno) from None
    return out


def parse_judgment_payload(text: str, marker: str | None = None) -> JudgmentSet | None:
    """Parse ``[marker] {"judgments": [...], "decision": 0|1}``.

    With a marker, only text after its last occurrence is considered and a
    missing marker yields None. Returns None when no valid payload is found.
    """
    from .backends import parse_json_object

    if marker is not None:
        pos = text.rfind(marker)
        if pos < 0:
            return None
        text = text[pos + len(marker):]
    obj = parse_json_object(text)
    if obj is None:
        return None
    decision = parse_decision(obj.get("decision"))
    judgments = obj.get("judgments")
    if isinstance(judgments, str):
        judgments = [judgments]
    if decision is None or not isinstance(judgments, list):
        return None
    items = tuple(str(j).strip() for j in judgments if str(j).strip())
    if not items:
        return None
    return JudgmentSet(items, decision)
