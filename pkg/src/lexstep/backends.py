"""Pluggable text-generation, scoring, embedding and reranking backends.

Every component talks to models through the small interfaces defined here.
``ScriptedBackend`` and ``FunctionBackend`` are deterministic test doubles;
``HttpChatBackend`` speaks the OpenAI-compatible chat-completions wire shape.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Sequence

import numpy as np

from .case_model import Perspective, PerspectiveSource
from .errors import (
    BackendError,
    DecodeError,
    JudgeFormatError,
    ScoreRangeError,
    TransportError,
    UnmatchedPromptError,
)
from .prompts import Prompt, TemplateSet

if TYPE_CHECKING:
    from .case_model import LegalCase

log = logging.getLogger(__name__)


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big") & ((1 << 63) - 1)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    seed: int = 0
    max_tokens: int = 1024
    n_samples: int = 1

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


GREEDY = SamplingParams()


@dataclass(frozen=True)
class Completion:
    text: str
    index: int


class ChatBackend(ABC):
    """Text generation.

    Implementations return one completion per call; ``generate`` fans out over
    ``n_samples`` and handles retries.
    """

    supports_logprobs: bool = False
    deterministic: bool = False
    max_retries: int = 3
    backoff_base: float = 0.5

    @abstractmethod
    def complete(self, prompt: Prompt, sampling: SamplingParams, sample_index: int) -> str:
        ...

    def token_probabilities(self, prompt: Prompt, tokens: Sequence[str]) -> dict[str, float]:
        raise NotImplementedError(f"{type(self).__name__} does not expose token probabilities")


def generate(backend: ChatBackend, prompt: Prompt, sampling: SamplingParams = GREEDY) -> list[Completion]:
    """Draw ``sampling.n_samples`` completions, tagged with their sample index."""
    if not prompt.text.strip():
        raise ValueError("prompt is empty")
    retries = 0 if backend.deterministic else backend.max_retries
    out = []
    for i in range(sampling.n_samples):
        attempt = 0
        while True:
            try:
                text = backend.complete(prompt, sampling, i)
                break
            except TransportError:
                if attempt >= retries:
                    raise
                delay = backend.backoff_base * (2 ** attempt)
                log.warning("transport error on %s sample %d, retrying in %.2fs",
                            prompt.template_id, i, delay)
                time.sleep(delay)
                attempt += 1
        if not isinstance(text, str):
            raise DecodeError(f"backend returned {type(text).__name__}, expected text", raw=repr(text))
        out.append(Completion(text, i))
    return out


def generate_one(backend: ChatBackend, prompt: Prompt, sampling: SamplingParams = GREEDY) -> str:
    return generate(backend, prompt, SamplingParams(sampling.temperature, sampling.seed,
                                                    sampling.max_tokens, 1))[0].text


# --------------------------------------------------------------------------
# JSON judging

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def parse_json_object(text: str) -> dict[str, Any] | None:
    text = (text or "").strip()
    if not text:
        return None
    candidates = [text]
    m = _FENCE.search(text)
    if m:
        candidates.append(m.group(1).strip())
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        candidates.append(text[start:end + 1])
    for cand in candidates:
        try:
            obj = json.loads(cand)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


@dataclass(frozen=True)
class JudgeResult:
    record: dict[str, Any]
    retry_count: int
    raw: tuple[str, ...]


REPAIR_SUFFIX = ("Your previous answer could not be parsed. Reply with ONLY a JSON object "
                 "containing the keys: {keys}.")


def judge_json(backend: ChatBackend, prompt: Prompt, schema: Sequence[str],
               sampling: SamplingParams = GREEDY) -> JudgeResult:
    """Ask for a JSON object carrying every key in ``schema``; one re-prompt on failure."""
    if not schema:
        raise ValueError("schema must name at least one field")
    raws: list[str] = []
    current = prompt
    for attempt in (1, 2):
        raw = generate_one(backend, current, sampling)
        raws.append(raw)
        obj = parse_json_object(raw)
        if obj is not None and all(k in obj for k in schema):
            return JudgeResult(obj, attempt - 1, tuple(raws))
        current = prompt.with_suffix(REPAIR_SUFFIX.format(keys=", ".join(schema)), attempt=2)
    raise JudgeFormatError(
        f"judge output for {prompt.template_id!r} did not match schema {list(schema)} twice",
        raws,
    )


# --------------------------------------------------------------------------
# test doubles


class ScriptedBackend(ChatBackend):
    """Replays canned responses.

    Lookup order: exact ``(fingerprint, sample index)`` table, then rules in
    declaration order. A rule matches on ``template`` (prompt template id),
    ``where`` (equality on prompt variables), ``contains`` (substring or list
    of substrings of the prompt text). ``responses`` is indexed by sample
    index; with ``cycle`` the list wraps around. Unmatched prompts follow
    ``fallback``: ``"error"`` or ``{"text": ...}``.

    Responses may be strings or JSON values; non-strings are serialised.
    """

    deterministic = True
    max_retries = 0

    def __init__(self, responses: dict[str, list[Any]] | None = None,
                 rules: list[dict[str, Any]] | None = None,
                 fallback: str | dict[str, str] = "error"):
        self.responses = {k: tuple(_as_text(x) for x in v) for k, v in (responses or {}).items()}
        self.rules = tuple(_freeze_rule(r) for r in (rules or []))
        if fallback != "error" and not (isinstance(fallback, dict) and "text" in fallback):
            raise ValueError("fallback must be 'error' or {'text': ...}")
        self.fallback = fallback

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptedBackend":
        return cls(data.get("responses"), data.get("rules"), data.get("fallback", "error"))

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, prompt: Prompt, sampling: SamplingParams, sample_index: int) -> str:
        table = self.responses.get(prompt.fingerprint)
        if table is not None and sample_index < len(table):
            return table[sample_index]
        for rule in self.rules:
            if _rule_matches(rule, prompt):
                resp = rule["responses"]
                if rule["cycle"]:
                    return resp[sample_index % len(resp)]
                if sample_index < len(resp):
                    return resp[sample_index]
        if self.fallback == "error":
            raise UnmatchedPromptError(prompt.fingerprint, prompt.template_id, sample_index)
        return self.fallback["text"]


def _as_text(x: Any) -> str:
    return x if isinstance(x, str) else json.dumps(x, ensure_ascii=False)


def _freeze_rule(rule: dict[str, Any]) -> dict[str, Any]:
    if "responses" in rule:
        responses = rule["responses"]
    elif "response" in rule:
        responses = [rule["response"]]
    else:
        raise ValueError(f"scripted rule without responses: {rule}")
    if not responses:
        raise ValueError("scripted rule has an empty response list")
    contains = rule.get("contains", ())
    if isinstance(contains, str):
        contains = (contains,)
    return {
        "template": rule.get("template"),
        "where": dict(rule.get("where", {})),
        "contains": tuple(contains),
        "responses": tuple(_as_text(r) for r in responses),
        "cycle": bool(rule.get("cycle", False)),
    }


def _rule_matches(rule: dict[str, Any], prompt: Prompt) -> bool:
    if rule["template"] is not None and rule["template"] != prompt.template_id:
        return False
    for key, value in rule["where"].items():
        if prompt.variables.get(key) != value:
            return False
    return all(s in prompt.text for s in rule["contains"])


class FunctionBackend(ChatBackend):
    """Wraps a pure function ``fn(prompt, sample_index, sampling) -> str``."""

    deterministic = True
    max_retries = 0

    def __init__(self, fn: Callable[[Prompt, int, SamplingParams], str],
                 token_probs: Callable[[Prompt, Sequence[str]], dict[str, float]] | None = None):
        self.fn = fn
        self._token_probs = token_probs
        self.supports_logprobs = token_probs is not None

    def complete(self, prompt: Prompt, sampling: SamplingParams, sample_index: int) -> str:
        return self.fn(prompt, sample_index, sampling)

    def token_probabilities(self, prompt: Prompt, tokens: Sequence[str]) -> dict[str, float]:
        if self._token_probs is None:
            return super().token_probabilities(prompt, tokens)
        return self._token_probs(prompt, tokens)


class BoundedBackend(ChatBackend):
    """Caps the number of in-flight calls to a shared backend."""

    def __init__(self, inner: ChatBackend, limit: int):
        if limit < 1:
            raise ValueError("concurrency limit must be >= 1")
        self.inner = inner
        self._sem = threading.BoundedSemaphore(limit)
        self.deterministic = inner.deterministic
        self.supports_logprobs = inner.supports_logprobs
        self.max_retries = inner.max_retries
        self.backoff_base = inner.backoff_base

    def complete(self, prompt: Prompt, sampling: SamplingParams, sample_index: int) -> str:
        with self._sem:
            return self.inner.complete(prompt, sampling, sample_index)

    def token_probabilities(self, prompt: Prompt, tokens: Sequence[str]) -> dict[str, float]:
        with self._sem:
            return self.inner.token_probabilities(prompt, tokens)


# --------------------------------------------------------------------------
# remote


class HttpChatBackend(ChatBackend):
    """OpenAI-compatible ``/chat/completions`` client.

    The API key is read from the environment variable named ``api_key_env``.
    """

    def __init__(self, base_url: str, model: str, api_key_env: str | None = None,
                 timeout: float = 120.0, client: Any = None, supports_logprobs: bool = False):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.supports_logprobs = supports_logprobs
        headers = {"Content-Type": "application/json"}
        if api_key_env:
            key = os.environ.get(api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=timeout, headers=headers)
        if client is not None:
            self._client.headers.update(headers)

    def _post(self, payload: dict[str, Any]) -> dict[str, Any]:
        import httpx

        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=payload)
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise DecodeError("response body is not JSON", raw=resp.text) from exc

    def _payload(self, prompt: Prompt, sampling: SamplingParams, sample_index: int) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": prompt.messages(),
            "temperature": sampling.temperature,
            "max_tokens": sampling.max_tokens,
            "seed": derive_seed(sampling.seed, sample_index) & 0x7FFFFFFF,
            "n": 1,
        }

    def complete(self, prompt: Prompt, sampling: SamplingParams, sample_index: int) -> str:
        body = self._post(self._payload(prompt, sampling, sample_index))
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise DecodeError("unexpected chat-completions payload", raw=json.dumps(body)) from exc
        if not isinstance(content, str):
            raise DecodeError("message content is not text", raw=json.dumps(body))
        return content

    def token_probabilities(self, prompt: Prompt, tokens: Sequence[str]) -> dict[str, float]:
        if not self.supports_logprobs:
            return super().token_probabilities(prompt, tokens)
        payload = self._payload(prompt, GREEDY, 0)
        payload.update(max_tokens=1, logprobs=True, top_logprobs=20)
        body = self._post(payload)
        try:
            top = body["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise DecodeError("no logprobs in response", raw=json.dumps(body)) from exc
        found = {t["token"].strip(): math.exp(t["logprob"]) for t in top}
        return {tok: found.get(tok, 0.0) for tok in tokens}


# --------------------------------------------------------------------------
# step scoring


@dataclass(frozen=True)
class ScoreContext:
    case: "LegalCase"
    disputes: tuple[str, ...] = ()
    prefix: tuple[str, ...] = ()  # accepted steps before the one being scored


@dataclass(frozen=True)
class PerspectiveScore:
    value: float
    rationale: str = ""
    source: PerspectiveSource = PerspectiveSource.JUDGE_PROMPT


def check_score(value: Any, what: str = "score") -> float:
    """Reject (never clamp) anything outside [0, 1]."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScoreRangeError(f"{what} is not a number: {value!r}")
    value = float(value)
    if math.isnan(value) or value < 0.0 or value > 1.0:
        raise ScoreRangeError(f"{what} {value!r} outside [0, 1]")
    return value


class ScoreBackend(ABC):
    source: PerspectiveSource = PerspectiveSource.JUDGE_PROMPT

    @abstractmethod
    def _score(self, context: ScoreContext, step: str, perspective: Perspective) -> PerspectiveScore:
        ...

    def judge_step(self, context: ScoreContext, step: str, perspective: Perspective) -> PerspectiveScore:
        result = self._score(context, step, perspective)
        check_score(result.value, f"{perspective.value} score")
        return result

    def score_step(self, context: ScoreContext, step: str, perspective: Perspective) -> float:
        return self.judge_step(context, step, perspective).value


_SCORE_TEMPLATES = {
    Perspective.CORRECTNESS: "score_correctness",
    Perspective.PROGRESSIVENESS: "score_progressiveness",
    Perspective.POTENTIAL: "score_potential",
}


def _score_prompt(templates: TemplateSet, context: ScoreContext, step: str,
                  perspective: Perspective) -> Prompt:
    case = context.case
    steps = list(context.prefix)
    if perspective is Perspective.POTENTIAL:
        steps = steps + [step]
    return templates.render(
        _SCORE_TEMPLATES[perspective],
        routing={"case_id": case.case_id, "step_index": len(context.prefix) + 1,
                 "perspective": perspective.value},
        claim=case.claim, facts=case.facts, disputes=context.disputes,
        steps=steps, step=step,
    )


class JudgeScoreBackend(ScoreBackend):
    """LLM-as-judge scoring: one JSON ``{"score", "rationale"}`` call per perspective."""

    source = PerspectiveSource.JUDGE_PROMPT

    def __init__(self, chat: ChatBackend, templates: TemplateSet | None = None):
        self.chat = chat
        self.templates = templates or TemplateSet()

    def _score(self, context: ScoreContext, step: str, perspective: Perspective) -> PerspectiveScore:
        prompt = _score_prompt(self.templates, context, step, perspective)
        res = judge_json(self.chat, prompt, ["score"])
        value = check_score(res.record["score"], f"{perspective.value} score")
        return PerspectiveScore(value, str(res.record.get("rationale", "")), self.source)


class TokenProbScoreBackend(ScoreBackend):
    """Reads a score off the probabilities of two designated tokens.

    score = p(positive) / (p(positive) + p(negative)); configurable tokens.
    Requires a backend with ``supports_logprobs``.
    """

    source = PerspectiveSource.LEARNED_HEAD

    def __init__(self, chat: ChatBackend, templates: TemplateSet | None = None,
                 positive_token: str = "+", negative_token: str = "-"):
        if not chat.supports_logprobs:
            raise BackendError("token-probability scoring needs a logprob-capable backend")
        self.chat = chat
        self.templates = templates or TemplateSet()
        self.positive_token = positive_token
        self.negative_token = negative_token

    def _score(self, context: ScoreContext, step: str, perspective: Perspective) -> PerspectiveScore:
        prompt = _score_prompt(self.templates, context, step, perspective)
        probs = self.chat.token_probabilities(prompt, [self.positive_token, self.negative_token])
        pos, neg = probs.get(self.positive_token, 0.0), probs.get(self.negative_token, 0.0)
        if pos + neg <= 0.0:
            raise DecodeError("neither score token appeared in the distribution", raw=json.dumps(probs))
        return PerspectiveScore(pos / (pos + neg), "", self.source)


class ScriptedScoreBackend(ScoreBackend):
    """Scores from a table keyed by step text, or from a callable.

    Table values are ``(correctness, progressiveness, potential)`` triples.
    Raw values are range-checked, so an out-of-range entry raises.
    """

    def __init__(self, table: dict[str, Sequence[float]] | None = None,
                 default: Sequence[float] | None = None,
                 fn: Callable[[ScoreContext, str, Perspective], float] | None = None,
                 source: PerspectiveSource = PerspectiveSource.JUDGE_PROMPT):
        self.table = {k: tuple(v) for k, v in (table or {}).items()}
        self.default = tuple(default) if default is not None else None
        self.fn = fn
        self.source = source

    _ORDER = (Perspective.CORRECTNESS, Perspective.PROGRESSIVENESS, Perspective.POTENTIAL)

    def _score(self, context: ScoreContext, step: str, perspective: Perspective) -> PerspectiveScore:
        if self.fn is not None:
            return PerspectiveScore(self.fn(context, step, perspective), "", self.source)
        triple = self.table.get(step, self.default)
        if triple is None:
            raise BackendError(f"no scripted score for step {step[:60]!r}")
        return PerspectiveScore(triple[self._ORDER.index(perspective)], "", self.source)


# --------------------------------------------------------------------------
# outcome scoring (judgment-level verifier)


class OutcomeScorer(ABC):
    @abstractmethod
    def score_outcome(self, case: "LegalCase", judgments: Sequence[str], decision: int) -> float:
        ...


class JudgeOutcomeScorer(OutcomeScorer):
    def __init__(self, chat: ChatBackend, templates: TemplateSet | None = None):
        self.chat = chat
        self.templates = templates or TemplateSet()

    def score_outcome(self, case: "LegalCase", judgments: Sequence[str], decision: int) -> float:
        prompt = self.templates.render(
            "outcome_score", routing={"case_id": case.case_id},
            claim=case.claim, facts=case.facts, judgments=list(judgments), decision=decision,
        )
        return check_score(judge_json(self.chat, prompt, ["score"]).record["score"], "outcome score")


class FunctionOutcomeScorer(OutcomeScorer):
    def __init__(self, fn: Callable[["LegalCase", Sequence[str], int], float]):
        self.fn = fn

    def score_outcome(self, case: "LegalCase", judgments: Sequence[str], decision: int) -> float:
        return check_score(self.fn(case, judgments, decision), "outcome score")


# --------------------------------------------------------------------------
# embeddings and reranking


class EmbeddingBackend(ABC):
    dimension: int

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return np.vstack([self.embed(t) for t in texts])


_TOKEN = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN.findall(text)]


class HashingEmbedding(EmbeddingBackend):
    """Signed feature hashing of word unigrams and bigrams. Offline and deterministic."""

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension)
        toks = tokenize(text)
        feats = toks + [a + " " + b for a, b in zip(toks, toks[1:])]
        for f in feats:
            d = hashlib.blake2b(f.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(d, "little")
            vec[h % self.dimension] += 1.0 if (h >> 63) & 1 else -1.0
        return vec


class ScriptedEmbedding(EmbeddingBackend):
    def __init__(self, table: dict[str, Sequence[float]], dimension: int | None = None):
        vecs = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        dims = {v.shape[0] for v in vecs.values()}
        if dimension is None:
            if len(dims) != 1:
                raise ValueError("cannot infer dimension from scripted vectors")
            dimension = dims.pop()
        self.dimension = dimension
        self.table = vecs

    def embed(self, text: str) -> np.ndarray:
        try:
            return self.table[text]
        except KeyError:
            raise BackendError(f"no scripted embedding for {text[:60]!r}") from None


class HttpEmbeddingBackend(EmbeddingBackend):
    """OpenAI-compatible ``/embeddings`` client."""

    def __init__(self, base_url: str, model: str, dimension: int,
                 api_key_env: str | None = None, client: Any = None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dimension = dimension
        headers = {}
        if api_key_env and os.environ.get(api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[api_key_env]}"
        self._client = client or httpx.Client(timeout=60.0, headers=headers)

    def embed(self, text: str) -> np.ndarray:
        import httpx

        try:
            resp = self._client.post(f"{self.base_url}/embeddings",
                                     json={"model": self.model, "input": text})
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:300]}")
        try:
            vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise DecodeError("unexpected embeddings payload", raw=resp.text) from exc
        if vec.shape != (self.dimension,):
            raise DecodeError(f"embedding has shape {vec.shape}, expected ({self.dimension},)")
        return vec


class Reranker(ABC):
    @abstractmethod
    def scores(self, query: str, texts: Sequence[str]) -> list[float]:
        ...


class ChatReranker(Reranker):
    def __init__(self, chat: ChatBackend, templates: TemplateSet | None = None):
        self.chat = chat
        self.templates = templates or TemplateSet()

    def scores(self, query: str, texts: Sequence[str]) -> list[float]:
        if not texts:
            return []
        prompt = self.templates.render("rerank", query=query, candidates=list(texts))
        raw = judge_json(self.chat, prompt, ["scores"]).record["scores"]
        if not isinstance(raw, list) or len(raw) != len(texts):
            raise DecodeError("reranker returned the wrong number of scores", raw=json.dumps(raw))
        try:
            return [float(x) for x in raw]
        except (TypeError, ValueError) as exc:
            raise DecodeError("non-numeric rerank score", raw=json.dumps(raw)) from exc


class FunctionReranker(Reranker):
    def __init__(self, fn: Callable[[str, Sequence[str]], list[float]]):
        self.fn = fn

    def scores(self, query: str, texts: Sequence[str]) -> list[float]:
        return list(self.fn(query, texts))


class IdentityReranker(Reranker):
    """Keeps the embedding order (scores decrease with rank)."""

    def scores(self, query: str, texts: Sequence[str]) -> list[float]:
        return [float(len(texts) - i) for i in range(len(texts))]


@dataclass
class Backends:
    """The set of backends one run uses, by role."""

    reasoner: ChatBackend
    judge: ChatBackend | None = None
    rollout: ChatBackend | None = None
    corrector: ChatBackend | None = None
    retriever: ChatBackend | None = None
    scorers: dict[Perspective, ScoreBackend] = field(default_factory=dict)
    outcome: OutcomeScorer | None = None
    embedding: EmbeddingBackend | None = None
    reranker: Reranker | None = None

    def __post_init__(self) -> None:
        self.judge = self.judge or self.reasoner
        self.rollout = self.rollout or self.reasoner
        self.corrector = self.corrector or self.reasoner
        self.retriever = self.retriever or self.reasoner
