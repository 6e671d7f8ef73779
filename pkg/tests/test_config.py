from __future__ import annotations

import json

import pytest

from helpers import DEMO, statute_records

from lexstep.backends import (
    BoundedBackend,
    ChatReranker,
    HashingEmbedding,
    IdentityReranker,
    JudgeOutcomeScorer,
    JudgeScoreBackend,
    ScriptedScoreBackend,
)
from lexstep.case_model import ErrorType, Perspective
from lexstep.config import RunConfig, parse_disabled
from lexstep.errors import ConfigError

BASE = {"backends": {"main": {"kind": "scripted", "rules": []}}, "roles": {"reasoner": "main"}}


def _cfg(**extra):
    return RunConfig.from_dict({**BASE, **extra})


def test_demo_config_loads():
    cfg = RunConfig.load(DEMO / "config.toml")
    assert cfg.seed == 7 and cfg.best_of_n == 3
    b = cfg.build_backends()
    assert isinstance(b.scorers[Perspective.CORRECTNESS], ScriptedScoreBackend)
    assert isinstance(b.outcome, JudgeOutcomeScorer)


def test_defaults():
    cfg = _cfg()
    assert cfg.best_of_n == 10 and cfg.selection_temperature == 0.7
    v = cfg.verifier_config()
    assert v.threshold == 0.5 and v.potential_samples == 8 and v.fail_flags
    assert cfg.correction_config().max_attempts == 2
    b = cfg.build_backends()
    assert isinstance(b.scorers[Perspective.POTENTIAL], JudgeScoreBackend)
    assert isinstance(b.embedding, HashingEmbedding) and isinstance(b.reranker, IdentityReranker)
    assert b.judge is b.reasoner
    assert cfg.gpv_verifier(b) is None


@pytest.mark.parametrize("data, msg", [
    ({"roles": {"reasoner": "main"}}, "at least one"),
    ({**BASE, "roles": {}}, "reasoner is required"),
    ({**BASE, "roles": {"reasoner": "nope"}}, "unknown backend"),
    ({"backends": {"m": {"kind": "carrier-pigeon"}}, "roles": {"reasoner": "m"}}, "kind"),
    ({"backends": {"m": {"kind": "http", "model": "x"}}, "roles": {"reasoner": "m"}}, "base_url"),
    ({"backends": {"m": {"kind": "http", "model": "x", "base_url": "u", "api_key": "s"}},
      "roles": {"reasoner": "m"}}, "api_key_env"),
    ({**BASE, "concurrency": 0}, "concurrency"),
    ({**BASE, "reasoner": {"max_steps": 100}}, "max_steps"),
    ({**BASE, "verifier": {"threshold": 1.5}}, "threshold"),
    ({**BASE, "selection": {"temperature": 3}}, "temperature"),
    ({**BASE, "correction": {"disable": ["Nonsense"]}}, "Nonsense"),
])
def test_validation_errors(data, msg):
    with pytest.raises(ConfigError, match=msg):
        RunConfig.from_dict(data)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)


def test_overrides_revalidate_and_skip_none():
    cfg = _cfg().with_overrides({("seed",): 5, ("verifier", "threshold"): None,
                                 ("correction", "disable"): "CS,SB"})
    assert cfg.seed == 5
    assert cfg.correction_config().disabled == {ErrorType.COMPENSATION_SCOPE_ERROR,
                                                ErrorType.SENTENCING_BIAS}
    with pytest.raises(ConfigError):
        cfg.with_overrides({("correction", "max_attempts"): -1})


def test_parse_disabled_forms():
    assert parse_disabled(None) == frozenset()
    assert parse_disabled("CompensationScopeError") == {ErrorType.COMPENSATION_SCOPE_ERROR}
    assert parse_disabled(["FD", "LegalPrincipleMisapplication"]) == {
        ErrorType.FACTS_REASONING_DISCREPANCY, ErrorType.LEGAL_PRINCIPLE_MISAPPLICATION}


def test_digest_stable_and_sensitive():
    assert _cfg().digest() == _cfg().digest()
    assert _cfg().digest() != _cfg(seed=1).digest()


def test_http_backend_bounded_and_reranker():
    cfg = RunConfig.from_dict({
        "backends": {"m": {"kind": "http", "base_url": "http://localhost:1", "model": "x",
                           "api_key_env": "NOPE", "max_concurrency": 2}},
        "roles": {"reasoner": "m"}, "reranker": {"kind": "chat"}, "outcome": {"kind": "none"},
    })
    b = cfg.build_backends()
    assert isinstance(b.reasoner, BoundedBackend)
    assert isinstance(b.reranker, ChatReranker) and b.outcome is None


def test_services_from_files(tmp_path):
    (tmp_path / "statutes.jsonl").write_text("".join(json.dumps(r) + "\n" for r in statute_records()))
    (tmp_path / "cases.jsonl").write_text(json.dumps({"case_id": "p1", "summary": "fine"}) + "\n")
    cfg = RunConfig.from_dict({**BASE, "retrieval": {
        "statutes": "statutes.jsonl", "cases": "cases.jsonl",
        "caps": [{"statute_ref": "s.31", "cap": "150000.00"}]}}, base_dir=tmp_path)
    svc = cfg.build_services(cfg.build_backends())
    assert len(svc.trie) == 32 and len(svc.case_store) == 1
    assert svc.caps[0].cap == 15_000_000 and svc.summarizer is not None


def test_gpv_section():
    cfg = _cfg(compare={"gpv": {"kind": "scripted", "default": [0.1, 0.1, 0.1]}})
    b = cfg.build_backends()
    gpv = cfg.gpv_verifier(b)
    assert isinstance(gpv.backends.scorers[Perspective.CORRECTNESS], ScriptedScoreBackend)
    assert isinstance(b.scorers[Perspective.CORRECTNESS], JudgeScoreBackend)
