from __future__ import annotations

import json

import pytest

from helpers import final, make_case, scripted_backends

from lexstep.annotator import (
    AnnotationConfig,
    AnnotationRecord,
    HumanLabel,
    annotate_trace,
    annotation_agreement,
    export_jsonl,
    import_jsonl,
    split_quarantine,
    synthesize_negatives,
)
from lexstep.backends import FunctionBackend, ScriptedBackend
from lexstep.case_model import ErrorType, ReasoningStep, ReasoningTrace
from lexstep.errors import AlignmentError, AnnotationError


def _trace(case_id="c1", texts=("first step", "second step")):
    steps = tuple(ReasoningStep(i, t) for i, t in enumerate(texts, start=1))
    return ReasoningTrace(case_id, ("d",), steps, ("order",), 1)


def _judge(scores, rollouts=(final(1), final(0)), fail_step=None, attr="EvidenceChainError"):
    """scores: {(template, step_index): score}."""

    def fn(prompt, i, s):
        t, v = prompt.template_id, prompt.variables
        if t.startswith("annotate_"):
            if v["step_index"] == fail_step:
                return "garbage"
            return json.dumps({"score": scores[(t, v["step_index"])], "rationale": t})
        if t == "rollout":
            return rollouts[i % len(rollouts)]
        if t == "attribute":
            return json.dumps({"error_type": attr})
        raise AssertionError(t)

    return scripted_backends(FunctionBackend(fn))


SCORES = {("annotate_correctness", 1): 0.9, ("annotate_progressiveness", 1): 0.8,
          ("annotate_correctness", 2): 0.3, ("annotate_progressiveness", 2): 0.7}


def test_labels_follow_min_rule():
    recs = annotate_trace(make_case(), _trace(), _judge(SCORES), AnnotationConfig(potential_samples=4))
    assert [r.potential_label for r in recs] == [0.5, 0.5]
    assert [r.y for r in recs] == [0.5, 0.3]
    assert recs[0].potential_successes == 2 and recs[0].potential_n == 4
    assert recs[1].judge_rationales["correctness"] == "annotate_correctness"
    assert all(r.error_type is None for r in recs)


def test_binarize_and_attribute():
    cfg = AnnotationConfig(potential_samples=2, binarize=True, attribute=True)
    recs = annotate_trace(make_case(), _trace(), _judge(SCORES, rollouts=(final(1),)), cfg)
    assert recs[0].correctness_label == 1.0 and recs[1].correctness_label == 0.0
    assert recs[0].y == 1.0 and recs[0].error_type is None
    assert recs[1].y == 0.0 and recs[1].error_type is ErrorType.EVIDENCE_CHAIN_ERROR


def test_failed_step_is_quarantined_not_fatal():
    recs = annotate_trace(make_case(), _trace(), _judge(SCORES, fail_step=2),
                          AnnotationConfig(potential_samples=2))
    good, bad = split_quarantine(recs)
    assert [r.step_index for r in good] == [1]
    assert bad[0].error.startswith("JudgeFormatError") and bad[0].y is None


def test_ineligible_cases():
    with pytest.raises(AnnotationError):
        annotate_trace(make_case(gold_reasoning=()), _trace(), _judge(SCORES))
    with pytest.raises(AnnotationError):
        annotate_trace(make_case(), _trace("other"), _judge(SCORES))


def test_record_invariants():
    with pytest.raises(ValueError):
        AnnotationRecord("c", 1, "s", 0.9, 0.8, 0.7, 0.8)
    with pytest.raises(ValueError):
        AnnotationRecord("c", 1, "s", 1.2, 0.8, 0.7, 0.7)
    AnnotationRecord("c", 1, "s", None, None, None, None, error="boom")


def test_jsonl_round_trip(tmp_path):
    recs = annotate_trace(make_case(), _trace(), _judge(SCORES, fail_step=2),
                          AnnotationConfig(potential_samples=2, attribute=True))
    p = tmp_path / "a.jsonl"
    export_jsonl(recs, p)
    assert import_jsonl(p) == recs
    row = json.loads(p.read_text().splitlines()[0])
    assert set(row) == {"case_id", "step_index", "step_text", "correctness_label",
                        "progressiveness_label", "potential_label", "y", "error_type",
                        "judge_rationales", "potential_successes", "potential_n"}


def _rec(cid, idx, y, et=None):
    return AnnotationRecord(cid, idx, "s", y, y, y, y, et)


def test_agreement():
    auto = [_rec("a", 1, 0.9), _rec("a", 2, 0.2, ErrorType.SENTENCING_BIAS),
            _rec("b", 1, 0.1, ErrorType.EVIDENCE_CHAIN_ERROR)]
    human = [HumanLabel("a", 1, False), HumanLabel("a", 2, True, ErrorType.SENTENCING_BIAS),
             HumanLabel.from_dict({"case_id": "b", "step_index": 1, "flagged": True,
                                   "error_type": "JL"})]
    rep = annotation_agreement(auto, human)
    assert rep.verification_accuracy == 1.0
    assert rep.attribution_accuracy == 0.5 and rep.n_flagged == 2
    none_flagged = annotation_agreement(auto[:1], human[:1])
    assert none_flagged.attribution_accuracy is None
    with pytest.raises(AlignmentError):
        annotation_agreement(auto, human[:2])
    with pytest.raises(AlignmentError):
        annotation_agreement(auto, [])


def test_negatives_one_per_type_and_step():
    b = ScriptedBackend(rules=[
        {"template": "perturb_step", "where": {"error_type": "SentencingBias", "step_index": 1},
         "response": "The dismissal lacked notice."},  # unchanged: skipped
        {"template": "perturb_step", "response": "a subtly wrong step"},
    ])
    negs = synthesize_negatives(make_case(), b)
    assert len(negs) == 2 * 8 - 1
    assert {n.error_type for n in negs if n.source_index == 2} == set(ErrorType)
    assert negs[0].to_dict()["error_type"] == ErrorType.LEGAL_PRINCIPLE_MISAPPLICATION.value
