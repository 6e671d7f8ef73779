"""Run configuration read from a TOML file.

Relative paths in the file resolve against the file's directory. Secrets are
never stored: HTTP backends name the environment variable holding the key.

Documented keys (all optional unless noted)::

    seed = 0                       # base seed for every derived seed
    concurrency = 4                # case-level worker pool size, 1..256
    template_version = "v1"

    [backends.<name>]              # at least one; kind = "scripted" | "http"
    kind = "scripted"
    path = "fixture.json"          # scripted: responses/rules/fallback JSON
    # http: base_url, model, api_key_env, timeout, logprobs (bool), max_concurrency

    [roles]                        # backend names per role; reasoner is required
    reasoner = "main"              # judge, rollout, corrector, retriever default to it

    [scoring]
    kind = "judge"                 # judge | token_prob | scripted
    backend = "main"               # judge/token_prob: which chat backend scores
    table = { "step text" = [c, p, v] }   # scripted
    default = [c, p, v]                   # scripted

    [outcome]                      # kind = "judge" (backend = name) | "none"
    [embedding]                    # kind = "hashing" (dimension) | "http" (base_url, model, dimension, api_key_env)
    [reranker]                     # kind = "identity" | "chat" (backend = name)
    [compare.gpv]                  # optional second step scorer, same keys as [scoring]

    [reasoner]      max_steps = 12                      # 1..64
    [verifier]      threshold = 0.5, potential_samples = 8, potential_mode = "scorer",
                    fail_flags = true, rollout_temperature = 0.7
    [correction]    max_attempts = 2, disable = ["CompensationScopeError"]
    [retrieval]     statutes = "statutes.jsonl", cases = "cases.jsonl", sidecar = "cases.f32",
                    fanout_cap = 3, k_initial = 10, k_final = 3,
                    caps = [{ statute_ref = "...", cap = "150000.00" }]
    [selection]     n = 10, temperature = 0.7
    [annotation]    binarize = false, attribute = false, potential_samples = 8
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .annotator import AnnotationConfig
from .arith import StatutoryCap, to_cents
from .backends import (
    Backends,
    BoundedBackend,
    ChatBackend,
    ChatReranker,
    EmbeddingBackend,
    HashingEmbedding,
    HttpChatBackend,
    HttpEmbeddingBackend,
    IdentityReranker,
    JudgeOutcomeScorer,
    JudgeScoreBackend,
    Reranker,
    ScoreBackend,
    ScriptedBackend,
    ScriptedScoreBackend,
    TokenProbScoreBackend,
)
from .case_model import ErrorType, Perspective
from .correction import CorrectionConfig, CorrectionServices
from .errors import ConfigError
from .prompts import TemplateSet
from .reasoner import ReasonerConfig
from .retrieval import CaseStore, CaseSummarizer, build_trie
from .verifier import Verifier, VerifierConfig

ROLES = ("reasoner", "judge", "rollout", "corrector", "retriever")

_RANGES = {
    ("concurrency",): (1, 256),
    ("reasoner", "max_steps"): (1, 64),
    ("verifier", "potential_samples"): (1, 1024),
    ("correction", "max_attempts"): (0, 16),
    ("selection", "n"): (1, 256),
    ("retrieval", "fanout_cap"): (1, 64),
    ("retrieval", "k_initial"): (1, 1000),
    ("retrieval", "k_final"): (1, 100),
    ("annotation", "potential_samples"): (1, 1024),
}


def _get(data: dict, path: tuple[str, ...], default: Any = None) -> Any:
    cur: Any = data
    for key in path:
        if not isinstance(cur, dict) or key not in cur:
            return default
        cur = cur[key]
    return cur


def parse_disabled(values: Any) -> frozenset[ErrorType]:
    if values is None:
        return frozenset()
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    try:
        return frozenset(ErrorType.parse(str(v)) for v in values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class RunConfig:
    data: dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)
    source_bytes: bytes = b""

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = cls(data, path.resolve().parent, raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | Path = ".") -> "RunConfig":
        cfg = cls(copy.deepcopy(data), Path(base_dir).resolve(),
                  json.dumps(data, sort_keys=True).encode())
        cfg.validate()
        return cfg

    # ------------------------------------------------------------------
    # overrides and validation

    def with_overrides(self, overrides: dict[tuple[str, ...], Any]) -> "RunConfig":
        """Apply CLI overrides keyed by path; ``None`` values are skipped."""
        data = copy.deepcopy(self.data)
        for path, value in overrides.items():
            if value is None:
                continue
            cur = data
            for key in path[:-1]:
                cur = cur.setdefault(key, {})
            cur[path[-1]] = value
        cfg = RunConfig(data, self.base_dir, self.source_bytes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        backends = self.data.get("backends")
        if not isinstance(backends, dict) or not backends:
            raise ConfigError("config needs at least one [backends.<name>] table")
        for name, spec in backends.items():
            kind = spec.get("kind") if isinstance(spec, dict) else None
            if kind not in ("scripted", "http"):
                raise ConfigError(f"backend {name!r}: kind must be 'scripted' or 'http'")
            if kind == "scripted" and "path" not in spec and "rules" not in spec:
                raise ConfigError(f"backend {name!r}: scripted backends need 'path' or 'rules'")
            if kind == "http":
                for key in ("base_url", "model"):
                    if key not in spec:
                        raise ConfigError(f"backend {name!r}: missing {key!r}")
                for key in spec:
                    if "key" in key.lower() and key != "api_key_env":
                        raise ConfigError(f"backend {name!r}: store secrets via api_key_env, "
                                          f"not {key!r}")
        if not _get(self.data, ("roles", "reasoner")):
            raise ConfigError("[roles] reasoner is required")
        for role in ROLES:
            name = _get(self.data, ("roles", role))
            if name is not None and name not in backends:
                raise ConfigError(f"role {role!r} names unknown backend {name!r}")
        for path, (lo, hi) in _RANGES.items():
            v = _get(self.data, path)
            if v is not None and (isinstance(v, bool) or not isinstance(v, int)
                                  or not lo <= v <= hi):
                raise ConfigError(f"{'.'.join(path)} must be an integer in [{lo}, {hi}], got {v!r}")
        # constructing these runs their own range checks
        self.verifier_config()
        self.correction_config()
        self.reasoner_config()
        t = self.selection_temperature
        if not 0.0 <= t <= 2.0:
            raise ConfigError(f"selection.temperature must lie in [0, 2], got {t}")

    # ------------------------------------------------------------------
    # typed views

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    @property
    def concurrency(self) -> int:
        return int(self.data.get("concurrency", 1))

    @property
    def template_version(self) -> str:
        return str(self.data.get("template_version", "v1"))

    @property
    def best_of_n(self) -> int:
        return int(_get(self.data, ("selection", "n"), 10))

    @property
    def selection_temperature(self) -> float:
        return float(_get(self.data, ("selection", "temperature"), 0.7))

    def templates(self) -> TemplateSet:
        root = self.data.get("template_root")
        return TemplateSet(self.template_version, self.path(root) if root else None)

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def verifier_config(self) -> VerifierConfig:
        v = self.data.get("verifier", {})
        try:
            return VerifierConfig(
                threshold=float(v.get("threshold", 0.5)),
                potential_samples=int(v.get("potential_samples", 8)),
                potential_mode=v.get("potential_mode", "scorer"),
                fail_flags=bool(v.get("fail_flags", True)),
                rollout_temperature=float(v.get("rollout_temperature", 0.7)),
                seed=self.seed,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[verifier]: {exc}") from None

    def correction_config(self) -> CorrectionConfig:
        c = self.data.get("correction", {})
        return CorrectionConfig(max_attempts=int(c.get("max_attempts", 2)),
                                disabled=parse_disabled(c.get("disable")))

    def reasoner_config(self) -> ReasonerConfig:
        try:
            return ReasonerConfig(max_steps=int(_get(self.data, ("reasoner", "max_steps"), 12)))
        except ValueError as exc:
            raise ConfigError(f"[reasoner]: {exc}") from None

    def annotation_config(self) -> AnnotationConfig:
        a = self.data.get("annotation", {})
        v = self.verifier_config()
        return AnnotationConfig(
            threshold=v.threshold,
            potential_samples=int(a.get("potential_samples", v.potential_samples)),
            seed=self.seed,
            rollout_temperature=v.rollout_temperature,
            binarize=bool(a.get("binarize", False)),
            attribute=bool(a.get("attribute", False)),
        )

    # ------------------------------------------------------------------
    # construction

    def _chat(self, name: str, cache: dict[str, ChatBackend]) -> ChatBackend:
        if name in cache:
            return cache[name]
        spec = self.data["backends"][name]
        if spec["kind"] == "scripted":
            if "path" in spec:
                backend: ChatBackend = ScriptedBackend.from_file(self.path(spec["path"]))
            else:
                backend = ScriptedBackend.from_dict(spec)
        else:
            backend = HttpChatBackend(spec["base_url"], spec["model"], spec.get("api_key_env"),
                                      timeout=float(spec.get("timeout", 120.0)),
                                      supports_logprobs=bool(spec.get("logprobs", False)))
            if spec.get("max_concurrency"):
                backend = BoundedBackend(backend, int(spec["max_concurrency"]))
        cache[name] = backend
        return backend

    def build_backends(self) -> Backends:
        cache: dict[str, ChatBackend] = {}
        roles = {r: self._chat(n, cache) for r in ROLES
                 if (n := _get(self.data, ("roles", r))) is not None}
        backends = Backends(**roles)
        templates = self.templates()

        scorer = self._scorer(self.data.get("scoring", {"kind": "judge"}), cache, backends,
                              templates)
        backends.scorers = {p: scorer for p in Perspective}

        outcome = self.data.get("outcome", {"kind": "judge"})
        if outcome.get("kind", "judge") == "judge":
            name = outcome.get("backend")
            backends.outcome = JudgeOutcomeScorer(self._chat(name, cache) if name
                                                  else backends.judge, templates)
        backends.embedding = self._embedding()
        backends.reranker = self._reranker(cache, templates, backends)
        return backends

    def _scorer(self, scoring: dict[str, Any], cache: dict[str, ChatBackend], backends: Backends,
                templates: TemplateSet) -> ScoreBackend:
        kind = scoring.get("kind", "judge")
        if kind == "scripted":
            return ScriptedScoreBackend(scoring.get("table"), scoring.get("default"))
        if kind in ("judge", "token_prob"):
            name = scoring.get("backend")
            chat = self._chat(name, cache) if name else backends.judge
            return (JudgeScoreBackend(chat, templates) if kind == "judge"
                    else TokenProbScoreBackend(chat, templates))
        raise ConfigError(f"unknown scoring kind {kind!r}")

    def gpv_verifier(self, backends: Backends) -> Verifier | None:
        """Second process verifier for comparisons, from ``[compare.gpv]`` (same keys as [scoring])."""
        section = _get(self.data, ("compare", "gpv"))
        if not section:
            return None
        scorer = self._scorer(section, {}, backends, self.templates())
        alt = replace(backends, scorers={p: scorer for p in Perspective})
        return Verifier(alt, self.verifier_config(), self.templates())

    def _embedding(self) -> EmbeddingBackend:
        e = self.data.get("embedding", {"kind": "hashing"})
        kind = e.get("kind", "hashing")
        if kind == "hashing":
            return HashingEmbedding(int(e.get("dimension", 256)))
        if kind == "http":
            return HttpEmbeddingBackend(e["base_url"], e["model"], int(e["dimension"]),
                                        e.get("api_key_env"))
        raise ConfigError(f"unknown embedding kind {kind!r}")

    def _reranker(self, cache: dict[str, ChatBackend], templates: TemplateSet,
                  backends: Backends) -> Reranker:
        r = self.data.get("reranker", {"kind": "identity"})
        kind = r.get("kind", "identity")
        if kind == "identity":
            return IdentityReranker()
        if kind == "chat":
            name = r.get("backend")
            return ChatReranker(self._chat(name, cache) if name else backends.retriever, templates)
        raise ConfigError(f"unknown reranker kind {kind!r}")

    def build_services(self, backends: Backends) -> CorrectionServices:
        r = self.data.get("retrieval", {})
        trie = build_trie(self.path(r["statutes"])) if r.get("statutes") else None
        store = None
        if r.get("cases"):
            sidecar = self.path(r["sidecar"]) if r.get("sidecar") else None
            store = CaseStore.load(self.path(r["cases"]), backends.embedding, sidecar)
        caps = [StatutoryCap(str(c["statute_ref"]), to_cents(c["cap"]))
                for c in r.get("caps", [])]
        return CorrectionServices(
            trie=trie, provision_backend=backends.retriever, case_store=store,
            embedding=backends.embedding, reranker=backends.reranker,
            summarizer=CaseSummarizer(backends.retriever, self.templates()) if store else None,
            caps=caps, fanout_cap=int(r.get("fanout_cap", 3)),
            k_initial=int(r.get("k_initial", 10)), k_final=int(r.get("k_final", 3)),
        )

    # ------------------------------------------------------------------
    # persistence

    def resolved(self) -> dict[str, Any]:
        return copy.deepcopy(self.data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.data, sort_keys=True).encode()).hexdigest()
