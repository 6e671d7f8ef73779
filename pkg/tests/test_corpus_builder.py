from __future__ import annotations

import json

import pytest

from helpers import make_case

from lexstep.backends import FunctionBackend, ScriptedBackend
from lexstep.corpus_builder import (
    BuildContext,
    ExtractionError,
    PipelineStageReport,
    RawJudgment,
    Removal,
    WorkItem,
    build_corpus,
    completeness_problem,
    compress,
    enhance_facts,
    extract_structured,
    filter_complete,
    load_raw,
    load_work_items,
    normalize_fact,
    run_stage,
    save_work_items,
    screen_leakage,
)
from lexstep.errors import BackendError, CorpusError

TEXT = "x" * 100


def _record(**over):
    rec = {"plaintiff": "A", "defendant": "B", "plaintiff_claim": "claim", "lawsuit_type": "civil",
           "facts": ["f1"], "related_laws": "", "relevant_cases": [], "issues": ["i"],
           "court_reasoning": ["r"], "judgment_decision": ["j"], "support&reject": "support"}
    rec.update(over)
    return rec


def test_load_raw(tmp_path):
    p = tmp_path / "raw.jsonl"
    p.write_text(json.dumps({"doc_id": "d1", "text": "t"}) + "\n" + json.dumps({"doc_id": "d1", "text": "u"}))
    with pytest.raises(CorpusError, match="duplicate"):
        load_raw(p)
    p.write_text(json.dumps({"doc_id": "d1", "text": ""}))
    with pytest.raises(CorpusError, match="line 1"):
        load_raw(p)


def test_compress_retry_then_warning():
    replies = iter(["y" * 90, "y" * 40])
    res = compress(RawJudgment("d", TEXT), FunctionBackend(lambda p, i, s: next(replies)))
    assert res.attempts == 2 and res.in_band and res.ratio == 0.4
    res = compress(RawJudgment("d", TEXT), FunctionBackend(lambda p, i, s: "y" * 10))
    assert not res.in_band and res.warning and res.text == "y" * 10
    with pytest.raises(BackendError):
        compress(RawJudgment("d", TEXT), FunctionBackend(lambda p, i, s: " "))


def test_extract_schema_and_retry():
    replies = iter([json.dumps(_record(facts="not a list but a str")), json.dumps(_record())])
    # a non-empty string where a list belongs is a schema violation
    out = extract_structured("t", FunctionBackend(lambda p, i, s: next(replies)))
    assert out["facts"] == ["f1"] and out["related_laws"] == []
    bad = FunctionBackend(lambda p, i, s: json.dumps({"plaintiff_claim": "c"}))
    with pytest.raises(ExtractionError) as info:
        extract_structured("t", bad)
    assert len(info.value.raw_payloads) == 2
    with pytest.raises(ValueError):
        extract_structured(" ", bad)


@pytest.mark.parametrize("over, reason", [
    ({"plaintiff_claim": " "}, "missing plaintiff claim"),
    ({"issues": []}, "missing dispute points"),
    ({"judgment_decision": [" "]}, "missing judgment"),
    ({"support&reject": ""}, "missing decision"),
    ({"facts": []}, "missing facts"),
])
def test_completeness(over, reason):
    assert completeness_problem(_record(**over)) == reason
    kept, dropped = filter_complete([("d", _record(**over))])
    assert kept == [] and dropped[0].reason == reason


def test_filter_keeps_complete():
    kept, dropped = filter_complete([("d", _record())])
    assert kept[0].case_id == "d" and kept[0].gold_decision == 1 and not dropped


def test_normalize_fact():
    assert normalize_fact("The  Wage was $5,000.") == normalize_fact("the wage was $5,000")
    assert normalize_fact("Ｆｕｌｌ width") == "full width"


def test_enhance_appends_only_new_facts():
    case = make_case()
    b = FunctionBackend(lambda p, i, s: json.dumps({"more_facts": [
        "the plaintiff's monthly wage was $5,000", "The plaintiff received no notice pay.", ""]}))
    res = enhance_facts(case, "orig", b)
    assert res.case.facts[:3] == case.facts
    assert res.added == ("The plaintiff received no notice pay.",) and res.duplicates == 1
    failed = enhance_facts(case, "orig", FunctionBackend(lambda p, i, s: "garbage"))
    assert failed.case == case and failed.warning


def test_screen_leakage():
    leak = FunctionBackend(lambda p, i, s: '{"leaking": true, "spans": "the claim was allowed"}')
    assert screen_leakage(make_case(), leak).spans == ("the claim was allowed",)
    clean = FunctionBackend(lambda p, i, s: '{"leaking": false, "spans": ["ignored"]}')
    assert screen_leakage(make_case(), clean).spans == ()
    with pytest.raises(BackendError):
        screen_leakage(make_case(), FunctionBackend(lambda p, i, s: '{"leaking": "yes"}'))


def test_stage_report_conservation_enforced():
    with pytest.raises(AssertionError):
        PipelineStageReport("x", 3, 1, [Removal("a", "x", "r")])


def test_stage_order_enforced():
    with pytest.raises(ValueError, match="needs 'compress'"):
        run_stage("extract", [WorkItem("d", TEXT)], BuildContext(ScriptedBackend()))
    with pytest.raises(ValueError):
        run_stage("bogus", [], BuildContext(ScriptedBackend()))


def _ctx(workers=1):
    rules = [
        {"template": "compress", "response": "y" * 40},
        {"template": "extract", "where": {"doc_id": "bad"}, "response": _record(issues=[])},
        {"template": "extract", "response": _record()},
        {"template": "enhance", "response": {"more_facts": ["f2"]}},
        {"template": "screen_leakage", "where": {"doc_id": "leak"},
         "response": {"leaking": True, "spans": ["allowed"]}},
        {"template": "screen_leakage", "where": {"doc_id": "flaky"}, "response": "?"},
        {"template": "screen_leakage", "response": {"leaking": False}},
    ]
    return BuildContext(ScriptedBackend(rules=rules), workers=workers)


def _items():
    return [WorkItem.from_raw(RawJudgment(d, TEXT)) for d in ("ok", "bad", "leak", "flaky", "ok2")]


def test_build_corpus_end_to_end():
    res = build_corpus(_items(), _ctx())
    assert [c.case_id for c in res.kept] == ["ok", "ok2"]
    assert res.kept[0].facts == ("f1", "f2")
    assert res.ledger() == {"ok": "kept", "ok2": "kept", "bad": "dropped", "leak": "dropped",
                            "flaky": "quarantined"}
    assert [(q["doc_id"], q["disposition"]) for q in res.review_queue] == [
        ("flaky", "quarantined"), ("leak", "dropped")]
    assert [r.stage for r in res.reports] == ["compress", "extract", "filter", "enhance", "screen"]


def test_parallel_equals_serial():
    a = build_corpus(_items(), _ctx(1))
    b = build_corpus(_items(), _ctx(4))
    assert [r.to_dict() for r in a.reports] == [r.to_dict() for r in b.reports]


def test_resume_from_saved_stage(tmp_path):
    ctx = _ctx()
    first = build_corpus(_items(), ctx, ("compress", "extract"))
    assert first.kept == []
    path = tmp_path / "items.jsonl"
    save_work_items(first.items, path)
    rest = build_corpus(load_work_items(path), ctx, ("filter", "enhance", "screen"))
    full = build_corpus(_items(), ctx)
    assert rest.kept == full.kept
