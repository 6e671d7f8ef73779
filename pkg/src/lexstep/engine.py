"""Batch orchestration and the on-disk run store.

Cases run on a bounded thread pool. Workers only compute; the calling thread
writes every deterministic artifact in corpus order, and log events go
through the store's lock, so there is a single writer per file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import shutil
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

from .annotator import annotate_trace, synthesize_negatives
from .backends import Backends, derive_seed
from .case_model import LegalCase, ReasoningTrace, dumps_line
from .config import RunConfig
from .errors import BackendError, LexstepError, SelectionError
from .metrics import PredictionRecord, case_level, element_level
from .reasoner import ReasoningPipeline, run_reasoning
from .selection import (
    CandidateSet,
    select_outcome_verifier,
    select_process_verifier,
    select_self_consistency,
)
from .verifier import Verifier

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

LOG_FILE = "log.jsonl"
MANIFEST = "manifest.json"


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def make_run_id(command: str, config: RunConfig, inputs: Sequence[str | Path], seed: int) -> str:
    """Same command, config, inputs and seed give the same id."""
    h = hashlib.sha256()
    for part in (command, config.digest(), str(seed), *(file_digest(p) for p in inputs)):
        h.update(part.encode())
        h.update(b"\0")
    return f"{command}-{h.hexdigest()[:12]}"


class JsonLogHandler(logging.Handler):
    def __init__(self, store: "RunStore"):
        super().__init__(logging.INFO)
        self.store = store

    def emit(self, record: logging.LogRecord) -> None:
        event = {"ts": round(record.created, 6), "level": record.levelname,
                 "logger": record.name, "message": record.getMessage()}
        self.store.log_event(event)


class RunStore:
    """A run directory. Everything except the log is deterministic."""

    def __init__(self, directory: Path, run_id: str):
        self.directory = directory
        self.run_id = run_id
        self._lock = threading.Lock()
        self._log_fh = (directory / LOG_FILE).open("a", encoding="utf-8")
        self._handler: JsonLogHandler | None = None

    @classmethod
    def create(cls, root: str | Path, command: str, config: RunConfig,
               inputs: Sequence[str | Path], *, force: bool = False) -> "RunStore":
        run_id = make_run_id(command, config, inputs, config.seed)
        directory = Path(root) / run_id
        if directory.exists() and any(directory.iterdir()):
            if not force:
                raise FileExistsError(f"run directory {directory} exists; use --force to replace it")
            shutil.rmtree(directory)
        directory.mkdir(parents=True, exist_ok=True)
        store = cls(directory, run_id)
        # byte-frozen snapshot of the file as given, then the effective values
        (directory / "config.toml").write_bytes(config.source_bytes)
        store.write_json("config.resolved.json", {"run_id": run_id, "config": config.resolved()})
        return store

    def attach_logging(self, logger: logging.Logger | None = None) -> None:
        self._handler = JsonLogHandler(self)
        (logger or logging.getLogger("lexstep")).addHandler(self._handler)

    def close(self) -> None:
        if self._handler is not None:
            logging.getLogger("lexstep").removeHandler(self._handler)
            self._handler = None
        with self._lock:
            if not self._log_fh.closed:
                self._log_fh.close()
        self.write_manifest()

    def __enter__(self) -> "RunStore":
        self.attach_logging()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def log_event(self, event: dict[str, Any]) -> None:
        event = {"run_id": self.run_id, **event}
        line = json.dumps(event, ensure_ascii=False, default=str) + "\n"
        with self._lock:
            if not self._log_fh.closed:
                self._log_fh.write(line)
                self._log_fh.flush()

    def path(self, name: str) -> Path:
        return self.directory / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        with self._lock:
            p.write_text(text, encoding="utf-8")
        return p

    def write_json(self, name: str, obj: Any) -> Path:
        return self.write_text(name, json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True)
                               + "\n")

    def write_jsonl(self, name: str, rows: Iterable[dict[str, Any]]) -> Path:
        return self.write_text(name, "".join(dumps_line(r) for r in rows))

    def write_manifest(self) -> dict[str, str]:
        digests = {
            p.name: file_digest(p)
            for p in sorted(self.directory.iterdir())
            if p.is_file() and p.name not in (LOG_FILE, MANIFEST)
        }
        self.write_json(MANIFEST, {"run_id": self.run_id, "files": digests})
        return digests


def run_pool(items: Sequence[T], fn: Callable[[T], R], workers: int
             ) -> list[tuple[T, R | None, Exception | None]]:
    """Apply ``fn`` to each item; results come back in input order with errors captured."""

    def wrapped(item: T) -> tuple[R | None, Exception | None]:
        try:
            return fn(item), None
        except (LexstepError, BackendError, ValueError, OSError) as exc:
            return None, exc

    if workers <= 1:
        outs = [wrapped(i) for i in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(wrapped, items))
    return [(item, r, e) for item, (r, e) in zip(items, outs)]


def failure_record(run_id: str, case_id: str, exc: Exception, stage: str) -> dict[str, Any]:
    rec = {"run_id": run_id, "case_id": case_id, "stage": stage,
           "error": type(exc).__name__, "message": str(exc)}
    step = getattr(exc, "step_index", None)
    if step is not None:
        rec["step_index"] = step
    return rec


SCORE_COLUMNS = ("run_id", "case_id", "step_index", "status", "correctness", "progressiveness",
                 "potential", "aggregate", "flagged", "perspective_source", "corrections")


def scores_csv(traces: Iterable[ReasoningTrace], run_id: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for t in traces:
        for s in t.steps:
            v = s.verification
            w.writerow([
                run_id, t.case_id, s.index, s.status,
                *(("", "", "", "", "", "") if v is None else (
                    repr(v.correctness), repr(v.progressiveness), repr(v.potential),
                    repr(v.aggregate), str(v.flagged).lower(), v.perspective_source.value)),
                len(s.corrections),
            ])
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands


@dataclass
class Runtime:
    config: RunConfig
    backends: Backends
    pipeline: ReasoningPipeline

    @classmethod
    def build(cls, config: RunConfig, mode: str = "full") -> "Runtime":
        templates = config.templates()
        backends = config.build_backends()
        services = config.build_services(backends)
        verifier = None if mode == "plain" else Verifier(backends, config.verifier_config(),
                                                         templates)
        pipeline = ReasoningPipeline(backends, verifier, services, config.correction_config(),
                                     config.reasoner_config(), templates, mode)
        return cls(config, backends, pipeline)

    def with_mode(self, mode: str, verifier: Verifier | None = None) -> ReasoningPipeline:
        p = self.pipeline
        v = verifier or p.verifier or Verifier(self.backends, self.config.verifier_config(),
                                                p.templates)
        return ReasoningPipeline(p.backends, None if mode == "plain" else v, p.services,
                                 p.correction, p.reasoner, p.templates, mode)


@dataclass
class PredictResult:
    traces: list[ReasoningTrace]
    failures: list[dict[str, Any]]
    distribution: dict[str, int] = field(default_factory=dict)

    @property
    def systemic_failure(self) -> bool:
        return bool(self.failures) and not self.traces


def _reason(case: LegalCase, pipeline: ReasoningPipeline, store: RunStore | None, seed: int,
            **kw: Any) -> ReasoningTrace:
    events: list[dict[str, Any]] = []
    started = time.perf_counter()
    try:
        return run_reasoning(case, pipeline, seed=seed, events=events, **kw)
    finally:
        if store is not None:
            for e in events:
                store.log_event(e)
            store.log_event({"event": "case", "case_id": case.case_id,
                             "duration_ms": round((time.perf_counter() - started) * 1000, 3)})


def predict(cases: Sequence[LegalCase], runtime: Runtime, store: RunStore) -> PredictResult:
    cfg = runtime.config
    results = run_pool(cases, lambda c: _reason(c, runtime.pipeline, store, cfg.seed),
                       cfg.concurrency)
    traces, failures = [], []
    for case, trace, exc in results:
        if exc is not None:
            log.error("case %s failed: %s", case.case_id, exc)
            failures.append(failure_record(store.run_id, case.case_id, exc, "predict"))
            continue
        trace.metadata["run_id"] = store.run_id
        traces.append(trace)
    dist = {"support": sum(t.decision == 1 for t in traces),
            "reject": sum(t.decision == 0 for t in traces)}
    store.write_jsonl("traces.jsonl", (t.to_dict() for t in traces))
    store.write_text("scores.csv", scores_csv(traces, store.run_id))
    store.write_jsonl("predictions.jsonl", (
        {"run_id": store.run_id, "case_id": t.case_id, "decision": t.decision,
         "judgments": list(t.judgments)} for t in traces))
    store.write_jsonl("failures.jsonl", failures)
    store.write_json("summary.json", {"run_id": store.run_id, "cases": len(cases),
                                      "traces": len(traces), "failures": len(failures),
                                      "decisions": dist})
    return PredictResult(traces, failures, dist)


@dataclass
class AnnotateResult:
    records: list
    quarantined: list
    failures: list[dict[str, Any]]
    stats: dict[str, Any]


def annotate(cases: Sequence[LegalCase], runtime: Runtime, store: RunStore,
             traces: dict[str, ReasoningTrace] | None = None,
             negatives: bool = False) -> AnnotateResult:
    """Label every step of each case's trace; traces are generated when not supplied."""
    cfg = runtime.config
    acfg = cfg.annotation_config()
    plain = runtime.with_mode("plain")
    templates = runtime.pipeline.templates

    def task(case: LegalCase):
        trace = (traces or {}).get(case.case_id)
        if trace is None:
            trace = _reason(case, plain, store, cfg.seed)
        recs = annotate_trace(case, trace, runtime.backends, acfg, templates)
        negs: list | Exception = []
        if negatives:
            try:
                negs = synthesize_negatives(case, runtime.backends.judge, templates=templates)
            except (LexstepError, ValueError) as exc:
                negs = exc  # labels stay valid; the failure is recorded separately
        return trace, recs, negs

    records, quarantined, failures, out_traces, negs = [], [], [], [], []
    for case, res, exc in run_pool(cases, task, cfg.concurrency):
        if exc is not None:
            log.error("annotation of %s failed: %s", case.case_id, exc)
            failures.append(failure_record(store.run_id, case.case_id, exc, "annotate"))
            continue
        trace, recs, n = res
        out_traces.append(trace)
        if isinstance(n, Exception):
            log.error("negative synthesis for %s failed: %s", case.case_id, n)
            failures.append(failure_record(store.run_id, case.case_id, n, "negatives"))
        else:
            negs.extend(n)
        for r in recs:
            (quarantined if r.quarantined else records).append(r)
    violations = sum(r.y != min(r.correctness_label, r.progressiveness_label, r.potential_label)
                     for r in records)
    stats = {
        "run_id": store.run_id, "cases": len(cases), "records": len(records),
        "quarantined": len(quarantined), "failures": len(failures),
        "min_rule_violations": violations,
        "flagged": sum(r.y < acfg.threshold for r in records),
        "mean_y": (sum(r.y for r in records) / len(records)) if records else None,
        "binarize": acfg.binarize, "negatives": len(negs),
    }
    store.write_jsonl("traces.jsonl", (t.to_dict() for t in out_traces))
    store.write_jsonl("annotations.jsonl", (r.to_dict() for r in records))
    store.write_jsonl("quarantine.jsonl", (r.to_dict() for r in quarantined))
    store.write_jsonl("failures.jsonl", failures)
    if negatives:
        store.write_jsonl("negatives.jsonl", (n.to_dict() for n in negs))
    store.write_json("stats.json", stats)
    return AnnotateResult(records, quarantined, failures, stats)


COMPARE_COLUMNS = ("run_id", "strategy", "cases", "cl_acc", "cl_f1", "e_cov", "e_pre")


@dataclass
class CompareResult:
    rows: list[dict[str, Any]]
    selections: list[dict[str, Any]]
    failures: list[dict[str, Any]]


def _candidates(case: LegalCase, pipeline: ReasoningPipeline, n: int, seed: int,
                temperature: float, store: RunStore) -> CandidateSet:
    cands = []
    for j in range(1, n + 1):
        try:
            cands.append(_reason(case, pipeline, store, derive_seed(seed, "candidate", j),
                                 temperature=temperature, candidate=j))
        except LexstepError as exc:
            log.warning("candidate %d of %s failed: %s", j, case.case_id, exc)
    if not cands:
        raise SelectionError(f"no candidate of {case.case_id} finished")
    return CandidateSet(case.case_id, tuple(cands))


def _rescore(case: LegalCase, trace: ReasoningTrace, verifier: Verifier) -> ReasoningTrace:
    from dataclasses import replace

    steps, prefix = [], []
    for s in trace.steps:
        v = verifier.score_step(case, prefix, s.text, disputes=trace.disputes)
        steps.append(replace(s, verification=v, status="flagged" if v.flagged else "accepted"))
        prefix.append(s.text)
    return replace(trace, steps=tuple(steps))


def compare(cases: Sequence[LegalCase], runtime: Runtime, store: RunStore,
            gpv: Verifier | None = None, elements: bool = False) -> CompareResult:
    """Best-of-N strategies against the verify-and-correct pipeline on the same cases.

    BON-LPV uses the configured step scorer; BON-GPV, when given, re-scores the
    same candidates with a second verifier.
    """
    cfg = runtime.config
    scoring = runtime.with_mode("score")
    full = runtime.with_mode("full")
    has_ov = runtime.backends.outcome is not None

    def task(case: LegalCase) -> dict[str, Any]:
        cset = _candidates(case, scoring, cfg.best_of_n, cfg.seed, cfg.selection_temperature,
                           store)
        picks = {"BON-SC": select_self_consistency(cset)}
        if has_ov:
            picks["BON-OV"] = select_outcome_verifier(cset, runtime.backends.outcome, case)
        if gpv is not None:
            rescored = CandidateSet(cset.case_id,
                                    tuple(_rescore(case, c, gpv) for c in cset.candidates))
            picks["BON-GPV"] = select_process_verifier(rescored)
        picks["BON-LPV"] = select_process_verifier(cset)
        vc = _reason(case, full, store, cfg.seed)
        return {"picks": picks, "vc": vc}

    strategies = ["BON-SC"] + (["BON-OV"] if has_ov else []) + \
        (["BON-GPV"] if gpv is not None else []) + ["BON-LPV", "VC"]
    per: dict[str, list[PredictionRecord]] = {s: [] for s in strategies}
    selections, failures = [], []
    for case, res, exc in run_pool(cases, task, cfg.concurrency):
        if exc is not None:
            log.error("comparison on %s failed: %s", case.case_id, exc)
            failures.append(failure_record(store.run_id, case.case_id, exc, "compare"))
            continue
        row = {"run_id": store.run_id, "case_id": case.case_id, "gold": case.gold_decision}
        for name, sel in res["picks"].items():
            per[name].append(PredictionRecord(case.case_id, sel.decision, case.gold_decision,
                                              sel.trace.judgments, case.gold_judgments))
            row[name] = {"decision": sel.decision, "index": sel.index,
                         "scores": list(sel.scores)}
        vc = res["vc"]
        per["VC"].append(PredictionRecord(case.case_id, vc.decision, case.gold_decision,
                                          vc.judgments, case.gold_judgments))
        row["VC"] = {"decision": vc.decision}
        selections.append(row)

    rows = []
    for name in strategies:
        recs = per[name]
        r: dict[str, Any] = {"run_id": store.run_id, "strategy": name, "cases": len(recs),
                             "cl_acc": None, "cl_f1": None, "e_cov": None, "e_pre": None}
        if recs:
            cl = case_level(recs)
            r["cl_acc"], r["cl_f1"] = cl.cl_acc, cl.cl_f1
            if elements:
                el = element_level(recs, runtime.backends.judge, runtime.pipeline.templates)
                r["e_cov"], r["e_pre"] = el.e_cov, el.e_pre
        rows.append(r)

    buf = io.StringIO()
    w = csv.DictWriter(buf, COMPARE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    store.write_text("compare.csv", buf.getvalue())
    store.write_jsonl("selections.jsonl", selections)
    store.write_jsonl("failures.jsonl", failures)
    return CompareResult(rows, selections, failures)
