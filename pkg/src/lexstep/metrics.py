"""Case-level and element-level evaluation.

Case level treats decision 1 (support) as the positive class. Element level
decomposes judgments into atomic elements with a judge and pools the
counts over all cases (micro-averaging).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Iterable, Sequence

from .backends import ChatBackend, judge_json
from .errors import AlignmentError, BackendError
from .prompts import TemplateSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionRecord:
    case_id: str
    predicted_decision: int
    gold_decision: int
    predicted_judgments: tuple[str, ...] = ()
    gold_judgments: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("predicted_decision", "gold_decision"):
            v = getattr(self, name)
            if isinstance(v, bool) or v not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {v!r}")
        for name in ("predicted_judgments", "gold_judgments"):
            if not isinstance(getattr(self, name), tuple):
                object.__setattr__(self, name, tuple(getattr(self, name)))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class CaseLevel:
    cl_acc: float
    cl_f1: float
    counts: ConfusionCounts
    warnings: tuple[str, ...] = ()


def case_level(records: Sequence[PredictionRecord]) -> CaseLevel:
    if not records:
        raise ValueError("case_level needs at least one record")
    tp = fp = tn = fn = 0
    for r in records:
        if r.predicted_decision == 1:
            if r.gold_decision == 1:
                tp += 1
            else:
                fp += 1
        elif r.gold_decision == 1:
            fn += 1
        else:
            tn += 1
    counts = ConfusionCounts(tp, fp, tn, fn)
    warnings = []
    acc = (tp + tn) / counts.total
    denom = 2 * tp + fp + fn
    if denom == 0:
        msg = "CL-F1 undefined (no positive predictions or gold positives); reported as 0"
        log.warning(msg)
        warnings.append(msg)
        f1 = 0.0
    else:
        f1 = 2 * tp / denom
    return CaseLevel(acc, f1, counts, tuple(warnings))


@dataclass
class ElementDetail:
    case_id: str
    gold_elements: list[str] = field(default_factory=list)
    predicted_elements: list[str] = field(default_factory=list)
    covered: list[bool] = field(default_factory=list)
    correct: list[bool] = field(default_factory=list)
    raw: dict[str, Any] = field(default_factory=dict)  # judge outputs, for audit
    error: str | None = None


@dataclass(frozen=True)
class ElementLevel:
    e_cov: float
    e_pre: float
    gold_total: int
    gold_matched: int
    predicted_total: int
    predicted_correct: int
    details: tuple[ElementDetail, ...]
    excluded: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


def _elements(judge: ChatBackend, templates: TemplateSet, case_id: str, judgments: Sequence[str],
              side: str, detail: ElementDetail) -> list[str]:
    if not judgments:
        return []
    prompt = templates.render("decompose_elements", routing={"case_id": case_id, "side": side},
                              judgments=list(judgments))
    res = judge_json(judge, prompt, ["elements"])
    detail.raw[f"{side}_decomposition"] = list(res.raw)
    items = res.record["elements"]
    if not isinstance(items, list):
        raise BackendError(f"{side} decomposition is not a list")
    return [str(x) for x in items if str(x).strip()]


def _bool_list(value: Any, n: int, what: str) -> list[bool]:
    if not isinstance(value, list) or len(value) != n:
        raise BackendError(f"judge returned {what} of the wrong length")
    return [bool(v) for v in value]


def element_level(records: Sequence[PredictionRecord], judge: ChatBackend,
                  templates: TemplateSet | None = None) -> ElementLevel:
    templates = templates or TemplateSet()
    details: list[ElementDetail] = []
    excluded: list[str] = []
    warnings: list[str] = []
    g_tot = g_hit = p_tot = p_hit = 0
    for r in sorted(records, key=lambda r: r.case_id):
        d = ElementDetail(r.case_id)
        try:
            d.gold_elements = _elements(judge, templates, r.case_id, r.gold_judgments, "gold", d)
            d.predicted_elements = _elements(judge, templates, r.case_id, r.predicted_judgments,
                                             "predicted", d)
            if d.gold_elements and d.predicted_elements:
                prompt = templates.render("match_elements", routing={"case_id": r.case_id},
                                          gold_elements=d.gold_elements,
                                          predicted_elements=d.predicted_elements)
                res = judge_json(judge, prompt, ["covered", "correct"])
                d.raw["match"] = list(res.raw)
                d.covered = _bool_list(res.record["covered"], len(d.gold_elements), "covered")
                d.correct = _bool_list(res.record["correct"], len(d.predicted_elements), "correct")
            else:
                d.covered = [False] * len(d.gold_elements)
                d.correct = [False] * len(d.predicted_elements)
        except BackendError as exc:
            d.error = str(exc)
            excluded.append(r.case_id)
            details.append(d)
            log.warning("element judging failed for %s: %s", r.case_id, exc)
            continue
        details.append(d)
        g_tot += len(d.gold_elements)
        g_hit += sum(d.covered)
        p_tot += len(d.predicted_elements)
        p_hit += sum(d.correct)
    if p_tot == 0:
        msg = "no predicted elements; E-Pre reported as 0"
        log.warning(msg)
        warnings.append(msg)
    if g_tot == 0:
        msg = "no gold elements; E-Cov reported as 0"
        log.warning(msg)
        warnings.append(msg)
    return ElementLevel(
        e_cov=g_hit / g_tot if g_tot else 0.0,
        e_pre=p_hit / p_tot if p_tot else 0.0,
        gold_total=g_tot, gold_matched=g_hit, predicted_total=p_tot, predicted_correct=p_hit,
        details=tuple(details), excluded=tuple(excluded), warnings=tuple(warnings),
    )


def _magnitude(amount: Any) -> int:
    # Decimal avoids float log10 edge cases such as log10(1000) < 3
    return Decimal(str(amount)).adjusted()


def fine_amount_match(predicted: Any, gold: Any) -> bool:
    """Same power-of-ten bracket; both zero counts as a match, exactly one zero does not."""
    for name, v in (("predicted", predicted), ("gold", gold)):
        if isinstance(v, bool) or not isinstance(v, (int, float, Decimal)):
            raise ValueError(f"{name} amount must be a number, got {v!r}")
        if v < 0:
            raise ValueError(f"{name} amount is negative: {v!r}")
    if predicted == 0 or gold == 0:
        return predicted == 0 and gold == 0
    return _magnitude(predicted) == _magnitude(gold)


@dataclass(frozen=True)
class MetricsReport:
    cl_acc: float
    cl_f1: float
    e_cov: float | None
    e_pre: float | None
    counts: ConfusionCounts
    element_counts: dict[str, int] | None = None
    excluded: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        def pct(x: float | None) -> float | None:
            return None if x is None else round(100 * x, 4)

        return {
            "cl_acc": self.cl_acc, "cl_f1": self.cl_f1, "e_cov": self.e_cov, "e_pre": self.e_pre,
            "percent": {"CL-Acc": pct(self.cl_acc), "CL-F1": pct(self.cl_f1),
                        "E-Cov": pct(self.e_cov), "E-Pre": pct(self.e_pre)},
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "tn": self.counts.tn,
                       "fn": self.counts.fn},
            "element_counts": self.element_counts,
            "excluded": list(self.excluded),
            "warnings": list(self.warnings),
        }


def evaluate(records: Sequence[PredictionRecord], judge: ChatBackend | None = None,
             templates: TemplateSet | None = None) -> tuple[MetricsReport, ElementLevel | None]:
    cl = case_level(records)
    el = element_level(records, judge, templates) if judge is not None else None
    report = MetricsReport(
        cl_acc=cl.cl_acc, cl_f1=cl.cl_f1,
        e_cov=el.e_cov if el else None, e_pre=el.e_pre if el else None,
        counts=cl.counts,
        element_counts=None if el is None else {
            "gold_total": el.gold_total, "gold_matched": el.gold_matched,
            "predicted_total": el.predicted_total, "predicted_correct": el.predicted_correct},
        excluded=el.excluded if el else (),
        warnings=cl.warnings + (el.warnings if el else ()),
    )
    return report, el


def align(predictions: Iterable[dict[str, Any]], gold: Iterable[Any]) -> list[PredictionRecord]:
    """Pair prediction rows with gold cases by case_id; both sides must match exactly.

    Prediction rows may use ``predicted_decision``/``predicted_judgments`` or
    the trace keys ``decision``/``judgments``.
    """
    gold_by_id = {g.case_id: g for g in gold}
    preds: dict[str, dict[str, Any]] = {}
    for row in predictions:
        cid = row["case_id"]
        if cid in preds:
            raise AlignmentError(f"duplicate prediction for {cid}", [cid])
        preds[cid] = row
    orphans = sorted(set(preds) ^ set(gold_by_id))
    if orphans:
        raise AlignmentError(f"prediction and gold case ids differ: {orphans}", orphans)
    out = []
    for cid in sorted(preds):
        row, g = preds[cid], gold_by_id[cid]
        decision = row.get("predicted_decision", row.get("decision"))
        judgments = row.get("predicted_judgments", row.get("judgments", []))
        out.append(PredictionRecord(cid, decision, g.gold_decision, tuple(judgments),
                                    tuple(g.gold_judgments)))
    return out
