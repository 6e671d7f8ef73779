"""Shared builders for tests: cases, scripted services and planted-fault routing."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable

from lexstep.backends import (
    Backends,
    FunctionBackend,
    HashingEmbedding,
    IdentityReranker,
    SamplingParams,
    ScriptedScoreBackend,
)
from lexstep.case_model import ErrorType, LegalCase, Perspective
from lexstep.correction import CorrectionServices
from lexstep.arith import StatutoryCap
from lexstep.prompts import Prompt
from lexstep.retrieval import CaseEntry, CaseStore, CaseSummarizer, build_trie_from_records
from lexstep.verifier import make_verification

DEMO = Path(__file__).resolve().parent.parent / "demo"
FJ = "FINAL JUDGMENT:"


def make_case(case_id: str = "c1", decision: int = 1, **kw: Any) -> LegalCase:
    base = dict(
        case_id=case_id,
        claim="The plaintiff claims $20,000 for unpaid wages and a severance payment.",
        facts=("The plaintiff worked for the defendant for six years.",
               "The defendant dismissed the plaintiff without notice.",
               "The plaintiff's monthly wage was $5,000."),
        gold_decision=decision,
        gold_disputes=("Was the dismissal lawful?",),
        gold_reasoning=("The dismissal lacked notice.", "Wages in lieu of notice are due."),
        gold_judgments=("The defendant shall pay $20,000.",),
        plaintiff="Chan Tai Man",
        defendant="Acme Ltd",
    )
    base.update(kw)
    return LegalCase(**base)


def final(decision: int, judgments: tuple[str, ...] = ("Order made.",)) -> str:
    return f"{FJ} " + json.dumps({"judgments": list(judgments), "decision": decision})


def statute_records(chapters: int = 2, fan: int = 2) -> list[dict[str, str]]:
    out = []
    for c in range(chapters):
        for p in range(fan):
            for a in range(fan):
                for s in range(fan):
                    for v in range(fan):
                        out.append({"chapter": f"Cap {c}", "part": f"Part {p}",
                                    "article": f"Art {a}", "section": f"s{s}",
                                    "provision": f"({v})",
                                    "text": f"provision text {c}.{p}.{a}.{s}.{v}"})
    return out


def precedent_store(n: int = 6) -> CaseStore:
    entries = [CaseEntry(f"p{i}", f"precedent {i}: a fine of {1000 * (i + 1)} dollars for breach")
               for i in range(n)]
    return CaseStore.build(entries, HashingEmbedding(64))


def full_services(backend) -> CorrectionServices:
    emb = HashingEmbedding(64)
    return CorrectionServices(
        trie=build_trie_from_records(statute_records()),
        provision_backend=backend,
        case_store=precedent_store(),
        embedding=emb,
        reranker=IdentityReranker(),
        summarizer=CaseSummarizer(backend),
        caps=(StatutoryCap("s.31", 2_000_000),),
    )


FIXED = "The revised step rests on the record and the governing provision."


def planted_router(error_type: ErrorType, fixed: str = FIXED,
                   extra: Callable[[Prompt], str | None] | None = None) -> FunctionBackend:
    """A backend that answers every strategy prompt sensibly and attributes ``error_type``."""

    def fn(prompt: Prompt, sample_index: int, sampling: SamplingParams) -> str:
        if extra is not None:
            out = extra(prompt)
            if out is not None:
                return out
        t = prompt.template_id
        v = prompt.variables
        if t == "attribute":
            return json.dumps({"error_type": error_type.value, "evidence": f"planted {error_type.code}"})
        if t == "select_children":
            return json.dumps({"selected": v["options"][:1]})
        if t == "fact_link":
            return json.dumps({"supported": True})
        if t == "decompose_compensation":
            return json.dumps({
                "components": [
                    {"label": "wages in lieu", "amount": 6000, "formula": "monthly * 1",
                     "statute_ref": "s.7"},
                    {"label": "severance", "amount": 19000, "formula": "monthly * 2 / 3 * years",
                     "statute_ref": "s.31"},
                ],
                "variables": {"monthly": 5000, "years": 6},
                "stated_total": 25000,
            })
        if t == "evidence_trace":
            return json.dumps({"evidence": [
                {"item": "payslips", "credible": True, "relevant": True, "supports_conclusion": True},
                {"item": "oral account", "credible": False, "relevant": True,
                 "supports_conclusion": True}]})
        if t == "party_map":
            return json.dumps({"parties": [{"name": "Acme Ltd", "role": "employer",
                                            "liability": "primary"}]})
        if t == "disputes":
            return json.dumps({"disputes": ["Was the dismissal lawful?"]})
        if t == "dispute_coverage":
            n = len(v["disputes"])
            return json.dumps({"covered": [False] * n})
        if t == "penalty_extract":
            return json.dumps({"penalty": 5000 if v.get("source") == "step" else 2000})
        if t == "summarize_case":
            return f"summary of {v['case_id']}"
        if t in ("revise", "reflect"):
            return fixed
        raise AssertionError(f"unexpected prompt {t}")

    return FunctionBackend(fn)


def fixed_verify(fixed: str = FIXED):
    def verify(text: str):
        if text == fixed:
            return make_verification(0.9, 0.9, 0.9)
        return make_verification(0.2, 0.9, 0.9)

    return verify


def scripted_backends(reasoner, table=None, default=(0.9, 0.8, 0.7), **kw) -> Backends:
    scorer = ScriptedScoreBackend(table or {}, default)
    return Backends(reasoner=reasoner, scorers={p: scorer for p in Perspective}, **kw)
