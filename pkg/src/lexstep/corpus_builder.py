"""Dataset construction from raw court judgments.

Stages run in a fixed order: compress, extract, filter, enhance, screen.
Each stage maps a list of :class:`WorkItem` to survivors plus a
:class:`PipelineStageReport`, so a stage can be rerun on its own from a
JSON-lines file of work items. Every doc_id ends up kept, dropped or
quarantined exactly once.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .backends import ChatBackend, generate_one, judge_json
from .case_model import DECISION_KEY, LegalCase, dumps_line, parse_decision
from .errors import BackendError, CorpusError, JudgeFormatError, LexstepError
from .prompts import TemplateSet

log = logging.getLogger(__name__)

STAGES = ("compress", "extract", "filter", "enhance", "screen")
COMPRESSION_BAND = (0.25, 0.6)

LIST_KEYS = ("facts", "related_laws", "relevant_cases", "issues", "court_reasoning",
             "judgment_decision")
TEXT_KEYS = ("plaintiff", "defendant", "plaintiff_claim", "lawsuit_type")
SCHEMA_KEYS = TEXT_KEYS + LIST_KEYS


@dataclass(frozen=True)
class RawJudgment:
    doc_id: str
    text: str
    court_type: str = ""
    year: int | None = None

    def __post_init__(self) -> None:
        if not self.doc_id or not self.doc_id.strip():
            raise CorpusError("raw judgment without doc_id", field="doc_id")
        if not self.text or not self.text.strip():
            raise CorpusError(f"raw judgment {self.doc_id} has empty text", field="text")


def load_raw(path: str | Path) -> list[RawJudgment]:
    out, seen = [], set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                doc = RawJudgment(str(d.get("doc_id", "")), d.get("text", ""),
                                  d.get("court_type", ""), d.get("year"))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON: {exc.msg}", line=lineno) from None
            except CorpusError as exc:
                raise CorpusError(str(exc), line=lineno, field=exc.field) from None
            if doc.doc_id in seen:
                raise CorpusError(f"duplicate doc_id {doc.doc_id!r}", line=lineno, field="doc_id")
            seen.add(doc.doc_id)
            out.append(doc)
    return out


@dataclass
class WorkItem:
    """A document's state between stages."""

    doc_id: str
    original: str
    stage: str = "raw"  # last completed stage
    text: str | None = None  # compressed text
    record: dict[str, Any] | None = None  # extraction output, later the case record
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_raw(cls, doc: RawJudgment) -> "WorkItem":
        return cls(doc.doc_id, doc.text,
                   diagnostics={"court_type": doc.court_type, "year": doc.year})

    def to_dict(self) -> dict[str, Any]:
        return {"doc_id": self.doc_id, "stage": self.stage, "original": self.original,
                "text": self.text, "record": self.record, "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WorkItem":
        return cls(d["doc_id"], d["original"], d.get("stage", "raw"), d.get("text"),
                   d.get("record"), dict(d.get("diagnostics") or {}))


def save_work_items(items: Iterable[WorkItem], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(dumps_line(item.to_dict()))


def load_work_items(path: str | Path) -> list[WorkItem]:
    with Path(path).open("r", encoding="utf-8") as fh:
        return [WorkItem.from_dict(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class Removal:
    doc_id: str
    stage: str
    reason: str
    disposition: str = "dropped"  # or "quarantined"
    detail: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"doc_id": self.doc_id, "stage": self.stage, "reason": self.reason,
                "disposition": self.disposition, "detail": self.detail}


@dataclass
class PipelineStageReport:
    stage: str
    input_count: int
    output_count: int
    dropped: list[Removal] = field(default_factory=list)
    diagnostics: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.input_count != self.output_count + len(self.dropped):
            raise AssertionError(
                f"stage {self.stage}: {self.input_count} in != {self.output_count} out "
                f"+ {len(self.dropped)} removed")

    def to_dict(self) -> dict[str, Any]:
        return {"stage": self.stage, "input": self.input_count, "output": self.output_count,
                "dropped": [r.to_dict() for r in self.dropped],
                "diagnostics": self.diagnostics}


# --------------------------------------------------------------------------
# single-document operations


@dataclass(frozen=True)
class CompressionResult:
    text: str
    ratio: float
    attempts: int
    in_band: bool
    warning: str | None = None


def compress(doc: RawJudgment, backend: ChatBackend, templates: TemplateSet | None = None,
             band: tuple[float, float] = COMPRESSION_BAND) -> CompressionResult:
    """Compress by the backend; an out-of-band ratio earns one retry, then passes with a warning."""
    templates = templates or TemplateSet()
    lo, hi = band
    prompt = templates.render("compress", routing={"doc_id": doc.doc_id}, text=doc.text)
    text, ratio = "", 0.0
    for attempt in (1, 2):
        p = prompt if attempt == 1 else prompt.with_suffix(
            f"Your previous compression kept {ratio:.0%} of the text. Aim for "
            f"{lo:.0%} to {hi:.0%}.", attempt=2)
        text = generate_one(backend, p).strip()
        if not text:
            raise BackendError(f"empty compression for {doc.doc_id}")
        ratio = len(text) / len(doc.text)
        if lo <= ratio <= hi:
            return CompressionResult(text, ratio, attempt, True)
    msg = f"{doc.doc_id}: compression ratio {ratio:.3f} outside [{lo}, {hi}] after retry"
    log.warning(msg)
    return CompressionResult(text, ratio, 2, False, msg)


class ExtractionError(LexstepError):
    def __init__(self, message: str, raw_payloads: Sequence[str]):
        self.raw_payloads = list(raw_payloads)
        super().__init__(message)


def _schema_problem(obj: dict[str, Any]) -> str | None:
    for k in SCHEMA_KEYS:
        if k not in obj:
            return f"missing key {k!r}"
    for k in TEXT_KEYS:
        if not isinstance(obj[k], str):
            return f"{k!r} is not a string"
    for k in LIST_KEYS:
        v = obj[k]
        if v == "":
            continue
        if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
            return f"{k!r} is not a list of strings"
    dec = obj.get(DECISION_KEY, "")
    if dec not in ("", None) and parse_decision(dec) is None:
        return f"{DECISION_KEY!r} is neither support nor reject"
    return None


def extract_structured(text: str, backend: ChatBackend, templates: TemplateSet | None = None,
                       doc_id: str = "") -> dict[str, Any]:
    """Extract the ten schema fields (plus the decision) as a candidate record.

    Empty strings are allowed where the judgment is silent. A schema violation
    is re-prompted once; a second violation raises :class:`ExtractionError`.
    """
    if not text or not text.strip():
        raise ValueError("nothing to extract from")
    templates = templates or TemplateSet()
    prompt = templates.render("extract", routing={"doc_id": doc_id}, text=text)
    raws: list[str] = []
    problem = ""
    for attempt in (1, 2):
        p = prompt if attempt == 1 else prompt.with_suffix(
            f"Your previous answer was invalid ({problem}). Return the complete JSON object.",
            attempt=2)
        try:
            res = judge_json(backend, p, ["plaintiff_claim"])
            raws.extend(res.raw)
            obj = res.record
        except JudgeFormatError as exc:
            raws.extend(exc.raw_payloads)
            problem = "not a JSON object"
            continue
        problem = _schema_problem(obj) or ""
        if not problem:
            out = {k: obj[k] if obj[k] != "" or k in TEXT_KEYS else [] for k in SCHEMA_KEYS}
            out[DECISION_KEY] = obj.get(DECISION_KEY) or ""
            return out
    raise ExtractionError(f"extraction failed schema check twice: {problem}", raws)


def completeness_problem(record: dict[str, Any]) -> str | None:
    if not str(record.get("plaintiff_claim", "")).strip():
        return "missing plaintiff claim"
    if not [x for x in record.get("issues") or [] if x.strip()]:
        return "missing dispute points"
    if not [x for x in record.get("judgment_decision") or [] if x.strip()]:
        return "missing judgment"
    if parse_decision(record.get(DECISION_KEY)) is None:
        return "missing decision"
    if not [x for x in record.get("facts") or [] if x.strip()]:
        return "missing facts"
    return None


def filter_complete(candidates: Sequence[tuple[str, dict[str, Any]]]
                    ) -> tuple[list[LegalCase], list[Removal]]:
    """Keep candidates with a claim, a dispute point, a judgment item and a decision."""
    kept, dropped = [], []
    for doc_id, record in candidates:
        reason = completeness_problem(record)
        if reason is None:
            try:
                kept.append(LegalCase.from_record({**record, "case_id": doc_id}))
                continue
            except CorpusError as exc:
                reason = f"invalid case: {exc}"
        dropped.append(Removal(doc_id, "filter", reason))
    return kept, dropped


_PUNCT_END = re.compile(r"[\s.;,:!]+$")


def normalize_fact(text: str) -> str:
    t = unicodedata.normalize("NFKC", text).casefold()
    t = " ".join(t.split())
    return _PUNCT_END.sub("", t)


@dataclass(frozen=True)
class Enhancement:
    case: LegalCase
    added: tuple[str, ...]
    duplicates: int = 0
    warning: str | None = None


def enhance_facts(case: LegalCase, original: str, backend: ChatBackend,
                  templates: TemplateSet | None = None) -> Enhancement:
    """Append facts found in the reasoning; existing facts are never touched."""
    templates = templates or TemplateSet()
    prompt = templates.render("enhance", routing={"doc_id": case.case_id}, facts=case.facts,
                              court_reasoning=case.gold_reasoning,
                              judgments=case.gold_judgments, text=original)
    try:
        more = judge_json(backend, prompt, ["more_facts"]).record["more_facts"]
        if isinstance(more, str):
            more = [more] if more.strip() else []
        if not isinstance(more, list):
            raise BackendError("more_facts is not a list")
    except BackendError as exc:
        msg = f"{case.case_id}: fact enhancement skipped ({exc})"
        log.warning(msg)
        return Enhancement(case, (), 0, msg)
    seen = {normalize_fact(f) for f in case.facts}
    added, dups = [], 0
    for fact in more:
        fact = str(fact).strip()
        key = normalize_fact(fact)
        if not key:
            continue
        if key in seen:
            dups += 1
            continue
        seen.add(key)
        added.append(fact)
    if not added:
        return Enhancement(case, (), dups)
    return Enhancement(replace(case, facts=case.facts + tuple(added)), tuple(added), dups)


@dataclass(frozen=True)
class LeakageVerdict:
    leaking: bool
    spans: tuple[str, ...] = ()


def screen_leakage(case: LegalCase, backend: ChatBackend,
                   templates: TemplateSet | None = None) -> LeakageVerdict:
    """Ask a judge whether the facts give the outcome away. Backend failures propagate."""
    templates = templates or TemplateSet()
    prompt = templates.render("screen_leakage", routing={"doc_id": case.case_id},
                              facts=case.facts)
    rec = judge_json(backend, prompt, ["leaking"]).record
    leaking = rec["leaking"]
    if not isinstance(leaking, bool):
        raise BackendError(f"'leaking' must be true or false, got {leaking!r}")
    spans = rec.get("spans") or []
    if isinstance(spans, str):
        spans = [spans]
    return LeakageVerdict(leaking, tuple(str(s) for s in spans) if leaking else ())


# --------------------------------------------------------------------------
# stage runners


@dataclass
class BuildContext:
    backend: ChatBackend
    judge: ChatBackend | None = None
    templates: TemplateSet = field(default_factory=TemplateSet)
    workers: int = 1
    band: tuple[float, float] = COMPRESSION_BAND

    def __post_init__(self) -> None:
        self.judge = self.judge or self.backend


# outcome of one item in one stage: (item or None, removal or None, diagnostics)
_ItemResult = tuple["WorkItem | None", "Removal | None", dict[str, Any]]


def _stage_compress(item: WorkItem, ctx: BuildContext) -> _ItemResult:
    doc = RawJudgment(item.doc_id, item.original)
    try:
        res = compress(doc, ctx.backend, ctx.templates, ctx.band)
    except BackendError as exc:
        return None, Removal(item.doc_id, "compress", f"backend failure: {exc}"), {}
    diag = {"ratio": round(res.ratio, 6), "attempts": res.attempts, "in_band": res.in_band}
    if res.warning:
        diag["warning"] = res.warning
    return replace(item, text=res.text, stage="compress"), None, diag


def _stage_extract(item: WorkItem, ctx: BuildContext) -> _ItemResult:
    try:
        record = extract_structured(item.text or item.original, ctx.backend, ctx.templates,
                                    item.doc_id)
    except ExtractionError as exc:
        return None, Removal(item.doc_id, "extract", str(exc),
                             detail={"raw_payloads": exc.raw_payloads}), {}
    except BackendError as exc:
        return None, Removal(item.doc_id, "extract", f"backend failure: {exc}"), {}
    return replace(item, record=record, stage="extract"), None, {}


def _stage_filter(item: WorkItem, ctx: BuildContext) -> _ItemResult:
    kept, dropped = filter_complete([(item.doc_id, item.record or {})])
    if dropped:
        return None, dropped[0], {}
    return replace(item, record=kept[0].to_record(), stage="filter"), None, {}


def _stage_enhance(item: WorkItem, ctx: BuildContext) -> _ItemResult:
    case = LegalCase.from_record(item.record)
    res = enhance_facts(case, item.original, ctx.backend, ctx.templates)
    diag: dict[str, Any] = {"facts_added": len(res.added), "duplicates": res.duplicates}
    if res.warning:
        diag["warning"] = res.warning
    return replace(item, record=res.case.to_record(), stage="enhance"), None, diag


def _stage_screen(item: WorkItem, ctx: BuildContext) -> _ItemResult:
    case = LegalCase.from_record(item.record)
    try:
        verdict = screen_leakage(case, ctx.judge, ctx.templates)
    except BackendError as exc:
        return None, Removal(item.doc_id, "screen", f"leakage judge failed: {exc}",
                             "quarantined"), {}
    if verdict.leaking:
        return None, Removal(item.doc_id, "screen", "judgment leakage in facts",
                             detail={"spans": list(verdict.spans)}), {}
    return replace(item, stage="screen"), None, {"leaking": False}


_RUNNERS: dict[str, Callable[[WorkItem, BuildContext], _ItemResult]] = {
    "compress": _stage_compress,
    "extract": _stage_extract,
    "filter": _stage_filter,
    "enhance": _stage_enhance,
    "screen": _stage_screen,
}


def run_stage(stage: str, items: Sequence[WorkItem], ctx: BuildContext
              ) -> tuple[list[WorkItem], PipelineStageReport]:
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    expected = STAGES[STAGES.index(stage) - 1] if stage != "compress" else "raw"
    for item in items:
        if item.stage != expected:
            raise ValueError(f"{item.doc_id} is at stage {item.stage!r}; {stage} needs {expected!r}")
    runner = _RUNNERS[stage]
    if ctx.workers > 1:
        with ThreadPoolExecutor(max_workers=ctx.workers) as pool:
            results = list(pool.map(lambda it: runner(it, ctx), items))
    else:
        results = [runner(it, ctx) for it in items]
    survivors: list[WorkItem] = []
    removed: list[Removal] = []
    diagnostics: dict[str, dict[str, Any]] = {}
    # fold by doc_id so reports do not depend on scheduling
    for item, (out, removal, diag) in sorted(zip(items, results), key=lambda p: p[0].doc_id):
        if diag:
            diagnostics[item.doc_id] = diag
        if out is not None:
            survivors.append(out)
        else:
            removed.append(removal)
    report = PipelineStageReport(stage, len(items), len(survivors), removed, diagnostics)
    log.info("stage %s: %d in, %d out, %d removed", stage, len(items), len(survivors),
             len(removed))
    return survivors, report


@dataclass
class BuildResult:
    kept: list[LegalCase]
    reports: list[PipelineStageReport]
    items: list[WorkItem]  # survivors after the last stage run
    review_queue: list[dict[str, Any]] = field(default_factory=list)

    def removals(self) -> list[Removal]:
        return [r for rep in self.reports for r in rep.dropped]

    def ledger(self) -> dict[str, str]:
        """doc_id -> kept | dropped | quarantined."""
        out = {r.doc_id: r.disposition for r in self.removals()}
        for item in self.items:
            out[item.doc_id] = "kept"
        return out


def build_corpus(items: Sequence[WorkItem], ctx: BuildContext,
                 stages: Sequence[str] = STAGES) -> BuildResult:
    current = list(items)
    reports = []
    for stage in stages:
        current, report = run_stage(stage, current, ctx)
        reports.append(report)
    kept = [LegalCase.from_record(i.record) for i in current] if stages[-1:] and \
        STAGES.index(stages[-1]) >= STAGES.index("filter") else []
    queue = [
        {"doc_id": r.doc_id, "reason": r.reason, "spans": r.detail.get("spans", []),
         "disposition": r.disposition}
        for rep in reports if rep.stage == "screen" for r in rep.dropped
    ]
    return BuildResult(kept, reports, current, queue)
