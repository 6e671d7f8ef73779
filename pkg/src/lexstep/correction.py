"""Error attribution and per-type correction strategies.

A flagged step is attributed to one of eight error types, the strategy for
that type gathers correction material (retrieved provisions, fact links,
arithmetic checks, evidence traces, ...), and the step is rewritten against
that material and re-verified. Disabled or under-provisioned strategies fall
back to plain reflection.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .arith import (
    CompensationBreakdown,
    FormulaError,
    StatutoryCap,
    check_compensation,
    check_total,
    format_money,
    parse_money,
)
from .backends import (
    ChatBackend,
    EmbeddingBackend,
    Reranker,
    judge_json,
    generate_one,
    tokenize,
)
from .case_model import (
    CorrectionRecord,
    ErrorType,
    LegalCase,
    ReasoningStep,
    StepVerification,
    StrategyAction,
)
from .errors import (
    AttributionError,
    BackendError,
    DecodeError,
    JudgeFormatError,
    StrategyUnavailable,
)
from .prompts import TemplateSet
from .retrieval import (
    DEFAULT_FANOUT_CAP,
    DEFAULT_K_FINAL,
    DEFAULT_K_INITIAL,
    CaseStore,
    CaseSummarizer,
    StatuteTrie,
    retrieve_cases,
    retrieve_provisions,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 2

ERROR_DESCRIPTIONS = {
    ErrorType.LEGAL_PRINCIPLE_MISAPPLICATION:
        "legal constituent elements misunderstood or misapplied, missing causal links or preconditions",
    ErrorType.FACTS_REASONING_DISCREPANCY:
        "conclusions lack factual support or contradict the case facts",
    ErrorType.COMPENSATION_SCOPE_ERROR:
        "compensation miscalculated, items overlooked, or statutory limits exceeded",
    ErrorType.UNENFORCEABLE_JUDGMENT:
        "the conclusion cannot be executed for practical or jurisdictional reasons",
    ErrorType.EVIDENCE_CHAIN_ERROR:
        "evidence reliability or the links between pieces of evidence are misjudged",
    ErrorType.JOINT_LIABILITY_ERROR:
        "responsibility among multiple parties is assigned incorrectly",
    ErrorType.UNADDRESSED_KEY_DISPUTE:
        "a significant dispute raised by the parties is not addressed",
    ErrorType.SENTENCING_BIAS:
        "the penalty deviates from comparable cases and guidelines without justification",
}


@dataclass
class CorrectionServices:
    """External resources strategies may need. Any of them may be absent."""

    trie: StatuteTrie | None = None
    provision_backend: ChatBackend | None = None
    case_store: CaseStore | None = None
    embedding: EmbeddingBackend | None = None
    reranker: Reranker | None = None
    summarizer: CaseSummarizer | None = None
    caps: Sequence[StatutoryCap] = ()
    fanout_cap: int = DEFAULT_FANOUT_CAP
    k_initial: int = DEFAULT_K_INITIAL
    k_final: int = DEFAULT_K_FINAL
    fact_overlap_threshold: float = 0.2


@dataclass(frozen=True)
class CorrectionConfig:
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    disabled: frozenset[ErrorType] = frozenset()

    def __post_init__(self) -> None:
        if self.max_attempts < 0:
            raise ValueError("max_attempts must be >= 0")
        if not isinstance(self.disabled, frozenset):
            object.__setattr__(self, "disabled", frozenset(self.disabled))


@dataclass(frozen=True)
class Attribution:
    error_type: ErrorType
    evidence: str
    retries: int = 0


@dataclass
class StrategyContext:
    case: LegalCase
    disputes: Sequence[str]
    prefix: Sequence[str]
    step: str
    error_type: ErrorType
    evidence: str
    backend: ChatBackend
    services: CorrectionServices
    templates: TemplateSet


@dataclass
class StrategyOutcome:
    material: list[str] = field(default_factory=list)
    actions: list[StrategyAction] = field(default_factory=list)


# --------------------------------------------------------------------------
# attribution


def attribute_error(case: LegalCase, prefix: Sequence[str], step: str,
                    verification: StepVerification | None, backend: ChatBackend,
                    templates: TemplateSet | None = None) -> Attribution:
    templates = templates or TemplateSet()
    names = [e.value for e in ErrorType]
    listing = [f"{e.value}: {ERROR_DESCRIPTIONS[e]}" for e in ErrorType]
    v = verification
    prompt = templates.render(
        "attribute",
        routing={"case_id": case.case_id, "step_index": len(prefix) + 1},
        claim=case.claim, facts=case.facts, steps=list(prefix), step=step,
        correctness=_fmt(v.correctness if v else None),
        progressiveness=_fmt(v.progressiveness if v else None),
        potential=_fmt(v.potential if v else None),
        error_types=listing,
    )
    raws = []
    for retries, p in enumerate((prompt, prompt.with_suffix(
            "The label must be exactly one of: " + ", ".join(names) + ".", reprompt=1))):
        try:
            rec = judge_json(backend, p, ["error_type"]).record
        except JudgeFormatError as exc:
            raws.extend(exc.raw_payloads)
            continue
        raws.append(str(rec.get("error_type")))
        try:
            etype = ErrorType.parse(str(rec["error_type"]))
        except ValueError:
            continue
        return Attribution(etype, str(rec.get("evidence", "")), retries)
    raise AttributionError(f"attribution label outside the eight error types: {raws}")


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.3f}"


# --------------------------------------------------------------------------
# strategies

_STOP = frozenset(
    "the a an and or of to in on at for by with from that this is was were be been are as it its "
    "which who whom had has have not no but if then than so such into upon".split()
)
_SENTENCE = re.compile(r"(?<=[.!?;])\s+")


def content_tokens(text: str) -> set[str]:
    return {t for t in tokenize(text) if t not in _STOP and len(t) > 1}


def overlap(a: str, b: str) -> float:
    ta, tb = content_tokens(a), content_tokens(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def split_claims(step: str) -> list[str]:
    return [s.strip() for s in _SENTENCE.split(step.strip()) if s.strip()]


def _require(value: Any, what: str) -> Any:
    if value is None:
        raise StrategyUnavailable(f"{what} is not configured")
    return value


def _provision_material(ctx: StrategyContext, query: str, out: StrategyOutcome) -> None:
    trie = _require(ctx.services.trie, "statute catalog")
    backend = ctx.services.provision_backend or ctx.backend
    result = retrieve_provisions(query, trie, backend, ctx.services.fanout_cap, ctx.templates)
    for w in result.warnings:
        out.actions.append(StrategyAction("note", {"warning": w}))
    for prov in result.provisions:
        out.actions.append(StrategyAction("retrieval", {"source": "statute", "ref": prov.ref,
                                                        "text": prov.text}))
        out.material.append(f"[{prov.ref}] {prov.text}")
    if not result.provisions:
        out.actions.append(StrategyAction("retrieval", {"source": "statute", "ref": None,
                                                        "hits": 0}))


def _precedent_material(ctx: StrategyContext, query: str, out: StrategyOutcome,
                        required: bool = False) -> list:
    s = ctx.services
    if s.case_store is None or s.embedding is None or s.reranker is None:
        if required:
            raise StrategyUnavailable("case retriever is not configured")
        return []
    hits = retrieve_cases(query, s.case_store, s.embedding, s.reranker, s.k_initial, s.k_final)
    for hit in hits:
        text = s.summarizer(query, hit) if s.summarizer else hit.summary
        out.actions.append(StrategyAction("retrieval", {"source": "precedent", "case_id": hit.case_id,
                                                        "cosine": round(hit.cosine, 6)}))
        out.material.append(f"[precedent {hit.case_id}] {text}")
    return hits


def legal_principle(ctx: StrategyContext) -> StrategyOutcome:
    out = StrategyOutcome()
    query = f"{ctx.step}\n{ctx.case.claim}"
    _provision_material(ctx, query, out)
    _precedent_material(ctx, query, out)
    out.material.append("Check that every constituent element is established by the provisions above "
                        "and linked to the facts.")
    return out


def fact_tracking(ctx: StrategyContext) -> StrategyOutcome:
    out = StrategyOutcome()
    supported, unsupported = [], []
    for claim in split_claims(ctx.step):
        ranked = sorted(((overlap(claim, f), i, f) for i, f in enumerate(ctx.case.facts)),
                        key=lambda t: (-t[0], t[1]))
        best = ranked[0] if ranked else None
        if best is None or best[0] < ctx.services.fact_overlap_threshold:
            out.actions.append(StrategyAction("fact-link", {"claim": claim, "fact": None,
                                                            "overlap": best[0] if best else 0.0,
                                                            "linked": False}))
            unsupported.append(claim)
            continue
        prompt = ctx.templates.render(
            "fact_link", routing={"case_id": ctx.case.case_id, "fact_index": best[1]},
            claim_sentence=claim, fact=best[2],
        )
        confirmed = bool(judge_json(ctx.backend, prompt, ["supported"]).record["supported"])
        out.actions.append(StrategyAction("fact-link", {"claim": claim, "fact": best[2],
                                                        "overlap": round(best[0], 6),
                                                        "linked": confirmed}))
        (supported if confirmed else unsupported).append(claim)
    if supported:
        out.material.append("Claims supported by the record:\n" + "\n".join(f"- {c}" for c in supported))
    if unsupported:
        out.material.append("Claims with no supporting fact (drop or qualify them):\n"
                            + "\n".join(f"- {c}" for c in unsupported))
    return out


def compensation_check(ctx: StrategyContext) -> StrategyOutcome:
    out = StrategyOutcome()
    prompt = ctx.templates.render("decompose_compensation",
                                  routing={"case_id": ctx.case.case_id},
                                  facts=ctx.case.facts, step=ctx.step)
    rec = judge_json(ctx.backend, prompt, ["components"]).record
    comps = rec.get("components")
    if not isinstance(comps, list) or not comps:
        raise StrategyUnavailable("no compensation components could be extracted")
    try:
        breakdown = CompensationBreakdown.from_records(comps, rec.get("variables") or {})
    except (FormulaError, ValueError, AttributeError) as exc:
        raise DecodeError(f"bad compensation breakdown: {exc}", raw=str(rec)) from exc
    violations = check_compensation(breakdown, ctx.services.caps)
    bad = {v.component for v in violations}
    for comp in breakdown.components:
        out.actions.append(StrategyAction("calculation", {
            "component": comp.label, "formula": comp.formula, "stated": format_money(comp.amount),
            "statute_ref": comp.statute_ref, "ok": comp.label not in bad,
        }))
    stated_total = rec.get("stated_total")
    total_violation = None
    if stated_total is not None:
        total_violation = check_total(breakdown, parse_money(stated_total))
        if total_violation:
            violations.append(total_violation)
    out.actions.append(StrategyAction("calculation", {
        "component": "total", "sum": format_money(breakdown.total),
        "stated": None if stated_total is None else format_money(parse_money(stated_total)),
        "ok": total_violation is None,
    }))
    if violations:
        out.material.append("Calculation problems:\n" + "\n".join(f"- {v.message}" for v in violations))
    recomputed = {v.component: v.expected for v in violations if v.kind == "value-mismatch"}
    corrected_total = sum(recomputed.get(c.label, c.amount) for c in breakdown.components)
    out.material.append(f"Corrected total: {format_money(corrected_total)}")
    _precedent_material(ctx, f"compensation {ctx.step}", out)
    return out


def enforcement_analysis(ctx: StrategyContext) -> StrategyOutcome:
    out = StrategyOutcome()
    _provision_material(ctx, f"enforcement execution of judgment: {ctx.step}", out)
    _precedent_material(ctx, f"enforcement {ctx.step}", out)
    out.actions.append(StrategyAction("reflection", {"focus": "practical feasibility"}))
    out.material.append("Assess whether the order can actually be executed; propose an enforceable "
                        "alternative that keeps the legal intent.")
    return out


def evidence_tracing(ctx: StrategyContext) -> StrategyOutcome:
    out = StrategyOutcome()
    prompt = ctx.templates.render("evidence_trace", routing={"case_id": ctx.case.case_id},
                                  facts=ctx.case.facts, step=ctx.step)
    items = judge_json(ctx.backend, prompt, ["evidence"]).record["evidence"]
    if not isinstance(items, list):
        raise DecodeError("evidence trace is not a list", raw=str(items))
    weak = []
    for item in items:
        if not isinstance(item, dict):
            continue
        ok = all(bool(item.get(k, False)) for k in ("credible", "relevant", "supports_conclusion"))
        out.actions.append(StrategyAction("evidence-trace", {**item, "sound": ok}))
        if not ok:
            weak.append(str(item.get("item", "")))
    if weak:
        out.material.append("Evidence that does not carry the conclusion:\n"
                            + "\n".join(f"- {w}" for w in weak))
    else:
        out.material.append("Every cited piece of evidence was judged credible, relevant and supportive.")
    return out


def party_mapping(ctx: StrategyContext) -> StrategyOutcome:
    out = StrategyOutcome()
    _provision_material(ctx, f"joint liability apportionment: {ctx.step}", out)
    prompt = ctx.templates.render("party_map", routing={"case_id": ctx.case.case_id},
                                  facts=ctx.case.facts, step=ctx.step)
    parties = judge_json(ctx.backend, prompt, ["parties"]).record["parties"]
    if not isinstance(parties, list):
        raise DecodeError("party map is not a list", raw=str(parties))
    for p in parties:
        out.actions.append(StrategyAction("party-map", dict(p) if isinstance(p, dict) else {"party": p}))
    out.material.append("Parties and roles:\n" + "\n".join(
        f"- {p.get('name')}: {p.get('role')} ({p.get('liability')})" if isinstance(p, dict) else f"- {p}"
        for p in parties))
    return out


def dispute_coverage(ctx: StrategyContext) -> StrategyOutcome:
    from .reasoner import identify_disputes

    out = StrategyOutcome()
    disputes = list(dict.fromkeys(ctx.disputes))
    try:
        for d in identify_disputes(ctx.case, ctx.backend, ctx.templates):
            if d not in disputes:
                disputes.append(d)
    except (BackendError, ValueError) as exc:
        out.actions.append(StrategyAction("note", {"dispute_extraction_failed": str(exc)}))
    if not disputes:
        raise StrategyUnavailable("no disputes to check coverage against")
    prompt = ctx.templates.render("dispute_coverage", routing={"case_id": ctx.case.case_id},
                                  disputes=disputes, steps=[*ctx.prefix, ctx.step])
    covered = judge_json(ctx.backend, prompt, ["covered"]).record["covered"]
    if not isinstance(covered, list) or len(covered) != len(disputes):
        raise DecodeError("coverage list does not match the disputes", raw=str(covered))
    missing = []
    for d, c in zip(disputes, covered):
        out.actions.append(StrategyAction("dispute-coverage", {"dispute": d, "covered": bool(c)}))
        if not c:
            missing.append(d)
    if missing:
        out.material.append("Disputes not yet addressed:\n" + "\n".join(f"- {m}" for m in missing))
    return out


def _penalty(ctx: StrategyContext, text: str, tag: str) -> float | None:
    prompt = ctx.templates.render("penalty_extract", routing={"case_id": ctx.case.case_id,
                                                             "source": tag}, text=text)
    value = judge_json(ctx.backend, prompt, ["penalty"]).record["penalty"]
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def sentencing_benchmark(ctx: StrategyContext) -> StrategyOutcome:
    out = StrategyOutcome()
    hits = _precedent_material(ctx, f"sentencing {ctx.step}", out, required=True)
    if len(hits) < 3:
        raise StrategyUnavailable(f"only {len(hits)} comparable precedents found; need 3")
    stated = _penalty(ctx, ctx.step, "step")
    ref = [p for p in (_penalty(ctx, h.summary, h.case_id) for h in hits) if p is not None]
    if stated is None or not ref:
        out.actions.append(StrategyAction("benchmark", {"stated": stated, "range": None}))
        out.material.append("No comparable penalty could be extracted; justify the penalty explicitly.")
        return out
    lo, hi = min(ref), max(ref)
    within = lo <= stated <= hi
    out.actions.append(StrategyAction("benchmark", {"stated": stated, "range": [lo, hi],
                                                    "within": within}))
    if not within:
        out.material.append(f"Stated penalty {stated:g} lies outside the comparable range "
                            f"[{lo:g}, {hi:g}]; adjust it or state aggravating/mitigating factors.")
    else:
        out.material.append(f"Stated penalty {stated:g} lies within the comparable range [{lo:g}, {hi:g}].")
    return out


Strategy = Callable[[StrategyContext], StrategyOutcome]

STRATEGIES: dict[ErrorType, tuple[str, Strategy]] = {
    ErrorType.LEGAL_PRINCIPLE_MISAPPLICATION: ("provision-retrieval", legal_principle),
    ErrorType.FACTS_REASONING_DISCREPANCY: ("fact-tracking", fact_tracking),
    ErrorType.COMPENSATION_SCOPE_ERROR: ("compensation-check", compensation_check),
    ErrorType.UNENFORCEABLE_JUDGMENT: ("enforcement-analysis", enforcement_analysis),
    ErrorType.EVIDENCE_CHAIN_ERROR: ("evidence-tracing", evidence_tracing),
    ErrorType.JOINT_LIABILITY_ERROR: ("party-mapping", party_mapping),
    ErrorType.UNADDRESSED_KEY_DISPUTE: ("dispute-coverage", dispute_coverage),
    ErrorType.SENTENCING_BIAS: ("sentencing-benchmark", sentencing_benchmark),
}
REFLECTION = "reflection"


def strategy_for(error_type: ErrorType, disabled: frozenset[ErrorType] = frozenset()) -> str:
    return REFLECTION if error_type in disabled else STRATEGIES[error_type][0]


def _normalise(text: str) -> str:
    return " ".join(text.split())


def _reflect(ctx: StrategyContext) -> str:
    prompt = ctx.templates.render(
        "reflect", routing={"case_id": ctx.case.case_id, "step_index": len(ctx.prefix) + 1},
        claim=ctx.case.claim, facts=ctx.case.facts, steps=list(ctx.prefix), step=ctx.step,
        error_type=ctx.error_type.value, evidence=ctx.evidence or "(none)",
    )
    return generate_one(ctx.backend, prompt).strip()


def correct_step(case: LegalCase, prefix: Sequence[str], step: str, error_type: ErrorType,
                 services: CorrectionServices, backend: ChatBackend, *,
                 disputes: Sequence[str] = (), evidence: str = "", attempt: int = 1,
                 disabled: frozenset[ErrorType] = frozenset(),
                 templates: TemplateSet | None = None,
                 verify: Callable[[str], StepVerification] | None = None) -> CorrectionRecord:
    """Run the strategy routed for ``error_type`` and rewrite the step."""
    templates = templates or TemplateSet()
    ctx = StrategyContext(case, tuple(disputes), tuple(prefix), step, error_type, evidence,
                          backend, services, templates)
    status = "revised"
    actions: list[StrategyAction] = []
    if error_type in disabled:
        strategy_name = REFLECTION
        revised = _reflect(ctx)
        actions.append(StrategyAction("reflection", {"reason": "strategy disabled"}))
    else:
        strategy_name, strategy = STRATEGIES[error_type]
        try:
            outcome = strategy(ctx)
        except (StrategyUnavailable, BackendError, FormulaError) as exc:
            log.warning("%s strategy failed on %s (%s); falling back to reflection",
                        strategy_name, case.case_id, exc)
            actions.append(StrategyAction("note", {"degraded": strategy_name, "reason": str(exc)}))
            actions.append(StrategyAction("reflection", {"reason": "strategy unavailable"}))
            revised = _reflect(ctx)
            status = "degraded"
        else:
            actions.extend(outcome.actions)
            prompt = templates.render(
                "revise",
                routing={"case_id": case.case_id, "step_index": len(prefix) + 1,
                         "strategy": strategy_name},
                claim=case.claim, facts=case.facts, steps=list(prefix), step=step,
                error_type=error_type.value, evidence=evidence or "(none)",
                strategy=strategy_name, material="\n\n".join(outcome.material) or "(none)",
            )
            revised = generate_one(backend, prompt).strip()
    if not revised:
        raise DecodeError("correction produced an empty step", raw=revised)
    if status != "degraded" and _normalise(revised) == _normalise(step):
        status = "upheld"
    if not actions:
        actions.append(StrategyAction("note", {"strategy": strategy_name, "material": 0}))
    return CorrectionRecord(
        attempt=attempt, error_type=error_type, strategy=strategy_name,
        strategy_trace=tuple(actions), revised_step=revised,
        re_verification=verify(revised) if verify else None,
        status=status, evidence=evidence,
    )


def correction_loop(case: LegalCase, prefix: Sequence[str], index: int, step: str,
                    verification: StepVerification, services: CorrectionServices,
                    config: CorrectionConfig, backend: ChatBackend,
                    verify: Callable[[str], StepVerification], *,
                    disputes: Sequence[str] = (),
                    attributor: ChatBackend | None = None,
                    templates: TemplateSet | None = None) -> ReasoningStep:
    """Attribute, correct and re-verify until a revision passes or attempts run out.

    Returns the first unflagged revision, otherwise the revision with the
    highest aggregate (earliest on ties) marked ``unresolved``.
    """
    templates = templates or TemplateSet()
    if not verification.flagged:
        return ReasoningStep(index, step, verification, (), "accepted")
    if config.max_attempts == 0:
        return ReasoningStep(index, step, verification, (), "unresolved", original_text=step)
    records: list[CorrectionRecord] = []
    current, current_v = step, verification
    for attempt in range(1, config.max_attempts + 1):
        attribution = attribute_error(case, prefix, current, current_v, attributor or backend, templates)
        record = correct_step(case, prefix, current, attribution.error_type, services, backend,
                              disputes=disputes, evidence=attribution.evidence, attempt=attempt,
                              disabled=config.disabled, templates=templates, verify=verify)
        records.append(record)
        rv = record.re_verification
        assert rv is not None
        if not rv.flagged:
            return ReasoningStep(index, record.revised_step, rv, tuple(records), "corrected",
                                 original_text=step)
        current, current_v = record.revised_step, rv
    best = max(records, key=lambda r: r.re_verification.aggregate)  # max keeps the first on ties
    return ReasoningStep(index, best.revised_step, best.re_verification, tuple(records), "unresolved",
                         original_text=step)
