"""Best-of-N selection: self-consistency, outcome verifier and process verifier."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from statistics import mean
from typing import Sequence

from .backends import OutcomeScorer
from .case_model import LegalCase, ReasoningTrace
from .errors import BackendError, SelectionError

log = logging.getLogger(__name__)

DEFAULT_N = 10


@dataclass(frozen=True)
class CandidateSet:
    case_id: str
    candidates: tuple[ReasoningTrace, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.candidates, tuple):
            object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise SelectionError("a candidate set needs at least one candidate")
        for i, c in enumerate(self.candidates, start=1):
            if c.decision is None:
                raise SelectionError(f"candidate {i} of {self.case_id} is not finalized")

    @property
    def n(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class Selection:
    decision: int
    index: int  # 0-based position in the candidate set
    trace: ReasoningTrace
    scores: tuple[float | None, ...] = ()


def mean_step_aggregate(trace: ReasoningTrace) -> float | None:
    vals = [s.verification.aggregate for s in trace.steps if s.verification is not None]
    return mean(vals) if vals else None


def select_self_consistency(cset: CandidateSet) -> Selection:
    """Majority decision; the chosen trace is the first candidate carrying it.

    Even splits go to the side whose candidates have the higher mean step
    aggregate; without scores on both sides, or on equal means, the
    conservative decision 0 wins.
    """
    decisions = [c.decision for c in cset.candidates]
    ones = sum(decisions)
    zeros = len(decisions) - ones
    if ones != zeros:
        decision = 1 if ones > zeros else 0
    else:
        side = {}
        for d in (0, 1):
            vals = [mean_step_aggregate(c) for c in cset.candidates if c.decision == d]
            vals = [v for v in vals if v is not None]
            side[d] = mean(vals) if vals else None
        if side[0] is not None and side[1] is not None and side[1] > side[0]:
            decision = 1
        else:
            decision = 0
    index = decisions.index(decision)
    return Selection(decision, index, cset.candidates[index])


def _argmax(scores: Sequence[float | None]) -> int:
    best, best_i = None, -1
    for i, s in enumerate(scores):
        if s is not None and (best is None or s > best):
            best, best_i = s, i
    return best_i


def select_outcome_verifier(cset: CandidateSet, scorer: OutcomeScorer, case: LegalCase) -> Selection:
    scores: list[float | None] = []
    for i, cand in enumerate(cset.candidates, start=1):
        try:
            scores.append(scorer.score_outcome(case, cand.judgments, cand.decision))
        except (BackendError, ValueError) as exc:
            log.warning("outcome scorer failed on candidate %d of %s: %s", i, cset.case_id, exc)
            scores.append(None)
    i = _argmax(scores)
    if i < 0:
        raise SelectionError(f"outcome scorer failed on every candidate of {cset.case_id}")
    return Selection(cset.candidates[i].decision, i, cset.candidates[i], tuple(scores))


def trace_score(trace: ReasoningTrace, label: str = "") -> float:
    """Minimum step aggregate along the trace."""
    if not trace.steps:
        raise SelectionError(f"candidate {label} has no steps to score")
    for step in trace.steps:
        if step.verification is None:
            raise SelectionError(f"candidate {label} step {step.index} is unscored")
    return min(step.verification.aggregate for step in trace.steps)


def select_process_verifier(cset: CandidateSet) -> Selection:
    scores = [trace_score(c, str(i)) for i, c in enumerate(cset.candidates, start=1)]
    i = _argmax(scores)
    return Selection(cset.candidates[i].decision, i, cset.candidates[i], tuple(scores))
