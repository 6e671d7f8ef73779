from __future__ import annotations

import json
import math
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from helpers import make_case

from lexstep.backends import FunctionBackend
from lexstep.errors import AlignmentError
from lexstep.metrics import (
    PredictionRecord,
    align,
    case_level,
    element_level,
    evaluate,
    fine_amount_match,
)


def test_case_level_counts_and_degenerate_f1():
    recs = [PredictionRecord("a", 1, 1), PredictionRecord("b", 0, 1), PredictionRecord("c", 0, 0)]
    cl = case_level(recs)
    assert (cl.counts.tp, cl.counts.fn, cl.counts.tn, cl.counts.fp) == (1, 1, 1, 0)
    assert cl.cl_acc == 2 / 3 and cl.cl_f1 == 2 / 3
    all_neg = case_level([PredictionRecord("a", 0, 0)])
    assert all_neg.cl_f1 == 0.0 and all_neg.warnings
    with pytest.raises(ValueError):
        case_level([])
    with pytest.raises(ValueError):
        PredictionRecord("a", 2, 1)


@given(st.lists(st.tuples(st.sampled_from([0, 1]), st.sampled_from([0, 1])), min_size=1, max_size=40))
def test_case_level_matches_direct_formula(pairs):
    recs = [PredictionRecord(str(i), p, g) for i, (p, g) in enumerate(pairs)]
    cl = case_level(recs)
    acc = sum(p == g for p, g in pairs) / len(pairs)
    tp = sum(p == g == 1 for p, g in pairs)
    pp = sum(p for p, _ in pairs)
    gp = sum(g for _, g in pairs)
    assert math.isclose(cl.cl_acc, acc)
    if pp + gp:
        assert math.isclose(cl.cl_f1, 2 * tp / (pp + gp))


def _judge(elements, matches, fail=()):
    def fn(prompt, i, s):
        v = prompt.variables
        if v["case_id"] in fail:
            return "not json"
        if prompt.template_id == "decompose_elements":
            return json.dumps({"elements": elements[(v["case_id"], v["side"])]})
        cov, cor = matches[v["case_id"]]
        return json.dumps({"covered": cov, "correct": cor})

    return FunctionBackend(fn)


def test_element_level_micro_average_and_exclusion():
    elements = {("a", "gold"): ["x", "y"], ("a", "predicted"): ["x"],
                ("b", "gold"): ["z"], ("b", "predicted"): ["z", "w"]}
    matches = {"a": ([True, False], [True]), "b": ([True], [True, False])}
    recs = [PredictionRecord(c, 1, 1, ("p",), ("g",)) for c in ("a", "b", "c")]
    el = element_level(recs, _judge(elements, matches, fail={"c"}))
    assert el.excluded == ("c",)
    assert el.e_cov == 2 / 3 and el.e_pre == 2 / 3
    # macro averaging would give (0.5 + 1) / 2 for coverage; pooling gives 2/3


def test_element_level_wrong_length_excludes_case():
    elements = {("a", "gold"): ["x", "y"], ("a", "predicted"): ["x"]}
    el = element_level([PredictionRecord("a", 1, 1, ("p",), ("g",))],
                       _judge(elements, {"a": ([True], [True])}))
    assert el.excluded == ("a",) and el.e_cov == 0.0 and el.warnings


def test_element_level_empty_prediction_side():
    elements = {("a", "gold"): ["x"]}
    el = element_level([PredictionRecord("a", 0, 1, (), ("g",))], _judge(elements, {}))
    assert el.gold_total == 1 and el.gold_matched == 0 and el.predicted_total == 0


@pytest.mark.parametrize("p, g, want", [
    (9999, 10000, False), (10000, 99999, True), (0, 0, True), (0, 1, False), (1, 0, False),
    (Decimal("1000.00"), 1000, True), (999.99, 1000, False), (0.01, 0.09, True),
])
def test_fine_amount_match(p, g, want):
    assert fine_amount_match(p, g) is want


@pytest.mark.parametrize("bad", [-1, "100", None, True])
def test_fine_amount_rejects_bad_inputs(bad):
    with pytest.raises(ValueError):
        fine_amount_match(bad, 100)


@given(st.integers(1, 10**12), st.integers(1, 10**12))
def test_fine_amount_matches_digit_count(p, g):
    assert fine_amount_match(p, g) == (len(str(p)) == len(str(g)))


def test_evaluate_report_dict():
    report, el = evaluate([PredictionRecord("a", 1, 1), PredictionRecord("b", 1, 0)])
    d = report.to_dict()
    assert el is None and d["e_cov"] is None
    assert d["percent"]["CL-Acc"] == 50.0 and d["counts"]["fp"] == 1


def test_align():
    gold = [make_case("a", 1, gold_judgments=("g",)), make_case("b", 0)]
    recs = align([{"case_id": "b", "decision": 1, "judgments": ["x"]},
                  {"case_id": "a", "predicted_decision": 1}], gold)
    assert [r.case_id for r in recs] == ["a", "b"]
    assert recs[0].gold_judgments == ("g",) and recs[1].predicted_judgments == ("x",)
    with pytest.raises(AlignmentError):
        align([{"case_id": "a", "decision": 1}], gold)
    with pytest.raises(AlignmentError):
        align([{"case_id": "a", "decision": 1}] * 2 + [{"case_id": "b", "decision": 0}], gold)
