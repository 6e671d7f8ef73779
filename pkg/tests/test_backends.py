from __future__ import annotations

import json
import math

import httpx
import numpy as np
import pytest

from helpers import make_case

from lexstep.backends import (
    Backends,
    ChatReranker,
    FunctionBackend,
    FunctionOutcomeScorer,
    HashingEmbedding,
    HttpChatBackend,
    HttpEmbeddingBackend,
    IdentityReranker,
    JudgeOutcomeScorer,
    JudgeScoreBackend,
    SamplingParams,
    ScoreContext,
    ScriptedBackend,
    ScriptedEmbedding,
    ScriptedScoreBackend,
    TokenProbScoreBackend,
    check_score,
    derive_seed,
    generate,
    judge_json,
    parse_json_object,
)
from lexstep.case_model import Perspective, PerspectiveSource
from lexstep.errors import (
    BackendError,
    DecodeError,
    JudgeFormatError,
    ScoreRangeError,
    TransportError,
    UnmatchedPromptError,
)
from lexstep.prompts import Prompt, TemplateSet, format_list


def _prompt(template="t", text="hello", **variables):
    return Prompt(template, text, "", variables)


# --------------------------------------------------------------------------
# prompts


def test_render_numbers_lists_and_records_routing():
    ts = TemplateSet()
    p = ts.render("disputes", routing={"case_id": "c9"}, claim="Pay me.", facts=("a", "b"))
    assert "1. a" in p.text and "2. b" in p.text
    assert p.variables["case_id"] == "c9"
    assert p.variables["facts"] == ["a", "b"]
    assert "c9" not in p.text


def test_every_template_loads():
    ts = TemplateSet()
    names = ts.names()
    assert len(names) >= 20
    for n in names:
        ts._load(n)


def test_missing_template_version():
    with pytest.raises(FileNotFoundError):
        TemplateSet("v999")


def test_format_list_empty():
    assert format_list([]) == "(none)"


def test_fingerprint_ignores_variables():
    assert _prompt(x=1).fingerprint == _prompt(x=2).fingerprint
    assert _prompt(text="a").fingerprint != _prompt(text="b").fingerprint


# --------------------------------------------------------------------------
# scripted doubles


def test_scripted_rules_route_on_variables_and_text():
    b = ScriptedBackend(rules=[
        {"template": "t", "where": {"case_id": "c1"}, "response": "one"},
        {"template": "t", "contains": "special", "response": {"k": 1}},
        {"template": "t", "responses": ["a", "b"], "cycle": True},
    ])
    s = SamplingParams(n_samples=3)
    assert generate(b, _prompt(case_id="c1"))[0].text == "one"
    assert json.loads(generate(b, _prompt(text="special"))[0].text) == {"k": 1}
    assert [c.text for c in generate(b, _prompt(), s)] == ["a", "b", "a"]


def test_scripted_exact_table_then_fallback():
    p = _prompt()
    b = ScriptedBackend(responses={p.fingerprint: ["exact"]}, fallback={"text": "fb"})
    assert [c.text for c in generate(b, p, SamplingParams(n_samples=2))] == ["exact", "fb"]
    with pytest.raises(UnmatchedPromptError):
        generate(ScriptedBackend(), p)


def test_scripted_rejects_bad_rules():
    with pytest.raises(ValueError):
        ScriptedBackend(rules=[{"template": "t"}])
    with pytest.raises(ValueError):
        ScriptedBackend(fallback="ignore")


def test_generate_rejects_empty_prompt_and_non_text():
    with pytest.raises(ValueError):
        generate(FunctionBackend(lambda p, i, s: "x"), _prompt(text="  "))
    with pytest.raises(DecodeError):
        generate(FunctionBackend(lambda p, i, s: 3), _prompt())


def test_sampling_validation():
    with pytest.raises(ValueError):
        SamplingParams(temperature=-1)
    with pytest.raises(ValueError):
        SamplingParams(n_samples=0)


def test_derive_seed_is_stable():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert 0 <= derive_seed("x") < 2 ** 63


# --------------------------------------------------------------------------
# judge JSON


def test_parse_json_object_variants():
    assert parse_json_object('{"a": 1}') == {"a": 1}
    assert parse_json_object('sure:\n```json\n{"a": 2}\n```') == {"a": 2}
    assert parse_json_object('prefix {"a": 3} suffix') == {"a": 3}
    assert parse_json_object("[1, 2]") is None
    assert parse_json_object("") is None


def test_judge_json_repairs_once():
    seen = []

    def fn(p, i, s):
        seen.append(p.variables.get("attempt"))
        return "garbage" if len(seen) == 1 else '{"score": 0.4}'

    res = judge_json(FunctionBackend(fn), _prompt(), ["score"])
    assert res.record == {"score": 0.4} and res.retry_count == 1
    assert seen == [None, 2]


def test_judge_json_gives_up_after_two():
    with pytest.raises(JudgeFormatError) as info:
        judge_json(FunctionBackend(lambda p, i, s: '{"other": 1}'), _prompt(), ["score"])
    assert len(info.value.raw_payloads) == 2


# --------------------------------------------------------------------------
# scoring


def test_check_score_rejects_instead_of_clamping():
    assert check_score(0) == 0.0 and check_score(1) == 1.0
    for bad in (-0.01, 1.01, float("nan"), True, "0.5", None):
        with pytest.raises(ScoreRangeError):
            check_score(bad)


def test_judge_score_backend():
    ctx = ScoreContext(make_case(), ("d",), ("prev",))
    chat = ScriptedBackend(rules=[
        {"template": "score_correctness", "response": {"score": 0.7, "rationale": "ok"}},
        {"template": "score_progressiveness", "response": {"score": 1.5}},
    ])
    sb = JudgeScoreBackend(chat)
    res = sb.judge_step(ctx, "step", Perspective.CORRECTNESS)
    assert res.value == 0.7 and res.rationale == "ok"
    with pytest.raises(ScoreRangeError):
        sb.score_step(ctx, "step", Perspective.PROGRESSIVENESS)


def test_score_prompt_routing_carries_step_index():
    seen = {}

    def fn(p, i, s):
        seen.update(p.variables)
        return '{"score": 0.5}'

    JudgeScoreBackend(FunctionBackend(fn)).score_step(
        ScoreContext(make_case("c7"), (), ("a", "b")), "c", Perspective.POTENTIAL)
    assert seen["case_id"] == "c7" and seen["step_index"] == 3
    assert seen["steps"] == ["a", "b", "c"]


def test_token_prob_scorer():
    chat = FunctionBackend(lambda p, i, s: "", token_probs=lambda p, t: {"+": 0.3, "-": 0.1})
    sb = TokenProbScoreBackend(chat)
    ctx = ScoreContext(make_case())
    assert math.isclose(sb.score_step(ctx, "s", Perspective.CORRECTNESS), 0.75)
    assert sb.judge_step(ctx, "s", Perspective.CORRECTNESS).source is PerspectiveSource.LEARNED_HEAD
    with pytest.raises(BackendError):
        TokenProbScoreBackend(FunctionBackend(lambda p, i, s: ""))
    zero = TokenProbScoreBackend(FunctionBackend(lambda p, i, s: "", token_probs=lambda p, t: {}))
    with pytest.raises(DecodeError):
        zero.score_step(ctx, "s", Perspective.CORRECTNESS)


def test_scripted_score_backend_table():
    sb = ScriptedScoreBackend({"x": (0.1, 0.2, 0.3)})
    ctx = ScoreContext(make_case())
    assert [sb.score_step(ctx, "x", p) for p in Perspective] == [0.1, 0.2, 0.3]
    with pytest.raises(BackendError):
        sb.score_step(ctx, "y", Perspective.CORRECTNESS)
    with pytest.raises(ScoreRangeError):
        ScriptedScoreBackend(default=(2, 0, 0)).score_step(ctx, "y", Perspective.CORRECTNESS)


def test_outcome_scorers():
    chat = ScriptedBackend(rules=[{"template": "outcome_score", "response": {"score": 0.65}}])
    assert JudgeOutcomeScorer(chat).score_outcome(make_case(), ["Pay."], 1) == 0.65
    with pytest.raises(ScoreRangeError):
        FunctionOutcomeScorer(lambda c, j, d: 3).score_outcome(make_case(), [], 1)


# --------------------------------------------------------------------------
# embeddings and reranking


def test_hashing_embedding_deterministic():
    e = HashingEmbedding(32)
    assert np.array_equal(e.embed("unpaid wages"), e.embed("unpaid wages"))
    assert e.embed_many([]).shape == (0, 32)
    assert e.embed_many(["a", "b"]).shape == (2, 32)


def test_scripted_embedding():
    e = ScriptedEmbedding({"a": [1, 0], "b": [0, 1]})
    assert e.dimension == 2
    with pytest.raises(BackendError):
        e.embed("c")


def test_rerankers():
    assert IdentityReranker().scores("q", ["a", "b", "c"]) == [3.0, 2.0, 1.0]
    chat = ScriptedBackend(rules=[{"template": "rerank", "response": {"scores": [0.1, 0.9]}}])
    assert ChatReranker(chat).scores("q", ["a", "b"]) == [0.1, 0.9]
    with pytest.raises(DecodeError):
        ChatReranker(chat).scores("q", ["a", "b", "c"])


def test_backends_roles_default_to_reasoner():
    r = FunctionBackend(lambda p, i, s: "")
    b = Backends(reasoner=r)
    assert b.judge is r and b.rollout is r and b.corrector is r and b.retriever is r


# --------------------------------------------------------------------------
# http


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_chat_backend_payload_and_auth(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekrit")
    captured = {}

    def handler(req):
        captured["auth"] = req.headers.get("authorization")
        captured["body"] = json.loads(req.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}}]})

    b = HttpChatBackend("http://x/v1/", "m", api_key_env="TEST_KEY", client=_client(handler))
    out = generate(b, Prompt("t", "hello", "sys"), SamplingParams(temperature=0.7, seed=5))
    assert out[0].text == "hi"
    assert captured["auth"] == "Bearer sekrit"
    body = captured["body"]
    assert body["model"] == "m" and body["temperature"] == 0.7
    assert body["messages"][0] == {"role": "system", "content": "sys"}


def test_http_retries_transient_errors_then_gives_up():
    calls = []

    def handler(req):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503, text="busy")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    b = HttpChatBackend("http://x", "m", client=_client(handler))
    b.backoff_base = 0.0
    assert generate(b, _prompt())[0].text == "ok"
    assert len(calls) == 3

    always = HttpChatBackend("http://x", "m", client=_client(lambda r: httpx.Response(429)))
    always.backoff_base = 0.0
    with pytest.raises(TransportError):
        generate(always, _prompt())


def test_http_client_errors_and_bad_payloads():
    b = HttpChatBackend("http://x", "m", client=_client(lambda r: httpx.Response(400, text="no")))
    with pytest.raises(BackendError):
        generate(b, _prompt())
    b = HttpChatBackend("http://x", "m", client=_client(lambda r: httpx.Response(200, json={})))
    with pytest.raises(DecodeError):
        generate(b, _prompt())


def test_http_logprobs():
    def handler(req):
        assert json.loads(req.content)["logprobs"] is True
        top = [{"token": "+", "logprob": math.log(0.6)}, {"token": "-", "logprob": math.log(0.2)}]
        return httpx.Response(200, json={"choices": [{"logprobs": {"content": [{"top_logprobs": top}]}}]})

    b = HttpChatBackend("http://x", "m", client=_client(handler), supports_logprobs=True)
    probs = b.token_probabilities(_prompt(), ["+", "-", "?"])
    assert math.isclose(probs["+"], 0.6) and probs["?"] == 0.0


def test_http_embeddings_shape_check():
    ok = _client(lambda r: httpx.Response(200, json={"data": [{"embedding": [0.1, 0.2]}]}))
    assert HttpEmbeddingBackend("http://x", "e", 2, client=ok).embed("q").tolist() == [0.1, 0.2]
    with pytest.raises(DecodeError):
        HttpEmbeddingBackend("http://x", "e", 3, client=ok).embed("q")
