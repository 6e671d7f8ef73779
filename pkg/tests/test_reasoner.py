from __future__ import annotations

import json

import pytest

from helpers import FIXED, final, make_case, planted_router, scripted_backends

from lexstep.backends import FunctionBackend
from lexstep.case_model import ErrorType
from lexstep.correction import CorrectionConfig
from lexstep.errors import DecodeError, DisputeIdentificationError, StepError
from lexstep.reasoner import (
    ReasonerConfig,
    ReasoningPipeline,
    identify_disputes,
    next_step,
    run_reasoning,
)
from lexstep.verifier import Verifier


def _reasoner(n_steps=2, decision=1, bad_step=None, extra=None):
    """Steps 'step k' then a final judgment; ``bad_step`` gets a planted text."""

    def fn(prompt, i, s):
        t, v = prompt.template_id, prompt.variables
        if extra:
            out = extra(prompt)
            if out is not None:
                return out
        if t == "disputes":
            return json.dumps({"disputes": ["Was notice given?"]})
        if t == "step":
            k = v["step_index"]
            if k > n_steps:
                return final(decision)
            return "BAD" if k == bad_step else f"step {k}"
        if t == "finalize":
            return json.dumps({"judgments": ["Forced order."], "decision": 0})
        raise AssertionError(t)

    return FunctionBackend(fn)


def test_identify_disputes():
    b = FunctionBackend(lambda p, i, s: '{"disputes": "single"}')
    assert identify_disputes(make_case(), b) == ["single"]
    with pytest.raises(DisputeIdentificationError):
        identify_disputes(make_case(), FunctionBackend(lambda p, i, s: '{"disputes": []}'))


def test_next_step_rules():
    b = _reasoner(n_steps=1)
    case = make_case()
    assert next_step(case, ["d"], [], b).step == "step 1"
    out = next_step(case, ["d"], ["step 1"], b)
    assert out.finalized and out.judgment.final_decision == 1 and not out.truncated
    forced = next_step(case, ["d"], ["a", "b"], b, ReasonerConfig(max_steps=2))
    assert forced.truncated and forced.judgment.items == ("Forced order.",)


def test_next_step_rejects_premature_or_broken_final():
    early = FunctionBackend(lambda p, i, s: final(1))
    with pytest.raises(DecodeError):
        next_step(make_case(), ["d"], [], early)
    broken = FunctionBackend(lambda p, i, s: "FINAL JUDGMENT: nope")
    with pytest.raises(DecodeError):
        next_step(make_case(), ["d"], ["s"], broken)
    with pytest.raises(DecodeError):
        next_step(make_case(), ["d"], [], FunctionBackend(lambda p, i, s: "   "))


def test_plain_mode_trace():
    pipe = ReasoningPipeline(scripted_backends(_reasoner()), mode="plain")
    t = run_reasoning(make_case(), pipe, seed=4)
    assert t.step_texts == ["step 1", "step 2"]
    assert t.decision == 1 and t.disputes == ("Was notice given?",)
    assert all(s.status == "unverified" and s.verification is None for s in t.steps)
    assert t.metadata["seed"] == 4 and t.metadata["templates"]["step"] == "v1/step"


def test_truncation_recorded():
    pipe = ReasoningPipeline(scripted_backends(_reasoner(n_steps=99)), mode="plain",
                             reasoner=ReasonerConfig(max_steps=3))
    t = run_reasoning(make_case(), pipe)
    assert len(t.steps) == 3 and t.metadata["truncated"] and t.decision == 0


def test_full_mode_corrects_flagged_step_before_continuing():
    router = planted_router(ErrorType.EVIDENCE_CHAIN_ERROR)
    seen_prefixes = []

    def extra(prompt):
        if prompt.template_id == "step":
            seen_prefixes.append(list(prompt.variables["steps"]))
            return None
        if prompt.template_id in ("disputes",):
            return None
        if prompt.template_id in ("attribute", "evidence_trace", "revise"):
            return router.fn(prompt, 0, None)
        return None

    backends = scripted_backends(_reasoner(n_steps=3, bad_step=2, extra=extra),
                                 table={"BAD": (0.2, 0.9, 0.9)})
    pipe = ReasoningPipeline(backends, Verifier(backends))
    t = run_reasoning(make_case(), pipe)
    assert [s.status for s in t.steps] == ["accepted", "corrected", "accepted"]
    assert t.steps[1].text == FIXED and t.steps[1].original_text == "BAD"
    # the step after the fix sees the corrected text, never the flagged one
    assert seen_prefixes[2] == ["step 1", FIXED]


def test_score_mode_never_corrects():
    backends = scripted_backends(_reasoner(bad_step=1), table={"BAD": (0.2, 0.9, 0.9)})
    t = run_reasoning(make_case(), ReasoningPipeline(backends, Verifier(backends), mode="score"))
    assert t.steps[0].status == "flagged" and t.steps[0].corrections == ()


def test_unresolved_after_zero_attempts():
    backends = scripted_backends(_reasoner(bad_step=1), table={"BAD": (0.2, 0.9, 0.9)})
    pipe = ReasoningPipeline(backends, Verifier(backends), correction=CorrectionConfig(max_attempts=0))
    t = run_reasoning(make_case(), pipe)
    assert t.steps[0].status == "unresolved"


def test_step_failures_carry_index():
    def extra(prompt):
        if prompt.template_id == "step" and prompt.variables["step_index"] == 2:
            return ""
        return None

    pipe = ReasoningPipeline(scripted_backends(_reasoner(extra=extra)), mode="plain")
    with pytest.raises(StepError) as info:
        run_reasoning(make_case(), pipe)
    assert info.value.step_index == 2


def test_pipeline_validation():
    with pytest.raises(ValueError):
        ReasoningPipeline(scripted_backends(_reasoner()), mode="full")
    with pytest.raises(ValueError):
        ReasoningPipeline(scripted_backends(_reasoner()), mode="fancy")
    with pytest.raises(ValueError):
        ReasonerConfig(max_steps=0)


def test_seeds_differ_per_step_and_are_reproducible():
    seeds = []

    def extra(prompt):
        return None

    def fn(prompt, i, s):
        if prompt.template_id == "step":
            seeds.append(s.seed)
        return _reasoner().fn(prompt, i, s)

    pipe = ReasoningPipeline(scripted_backends(FunctionBackend(fn)), mode="plain")
    run_reasoning(make_case(), pipe, seed=1)
    first = list(seeds)
    seeds.clear()
    run_reasoning(make_case(), pipe, seed=1)
    assert seeds == first and len(set(first)) == len(first)
