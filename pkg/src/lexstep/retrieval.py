"""Statutory provision retrieval over a five-level trie, and precedent retrieval.

Provision retrieval walks chapter -> part -> article -> section -> provision,
asking a model at each level which children to expand so that irrelevant
branches are never shown to it. Precedent retrieval is an exact cosine scan
followed by a rerank and a cut to the top three.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .backends import (
    ChatBackend,
    EmbeddingBackend,
    Reranker,
    generate_one,
    judge_json,
)
from .errors import CatalogError, JudgeFormatError, StoreError
from .prompts import TemplateSet

log = logging.getLogger(__name__)

LEVELS = ("chapter", "part", "article", "section", "provision")
DEFAULT_FANOUT_CAP = 3
DEFAULT_K_INITIAL = 10
DEFAULT_K_FINAL = 3


@dataclass
class TrieNode:
    name: str
    level: int  # -1 for the root, else index into LEVELS
    children: dict[str, "TrieNode"] = field(default_factory=dict)
    text: str | None = None  # provision text on leaves

    @property
    def is_leaf(self) -> bool:
        return self.level == len(LEVELS) - 1


@dataclass(frozen=True)
class Provision:
    path: tuple[str, ...]
    text: str

    @property
    def ref(self) -> str:
        return " / ".join(self.path)


class StatuteTrie:
    def __init__(self) -> None:
        self.root = TrieNode("", -1)
        self._leaf_count = 0

    def add(self, path: Sequence[str], text: str) -> None:
        if len(path) != len(LEVELS):
            raise CatalogError(f"a provision path needs {len(LEVELS)} levels, got {len(path)}")
        node = self.root
        for depth, name in enumerate(path):
            child = node.children.get(name)
            if child is None:
                child = TrieNode(name, depth)
                node.children[name] = child
            node = child
        if node.text is not None:
            raise CatalogError(f"duplicate provision path {' / '.join(path)}")
        node.text = text
        self._leaf_count += 1

    def __len__(self) -> int:
        return self._leaf_count

    def node(self, path: Sequence[str]) -> TrieNode:
        node = self.root
        for name in path:
            node = node.children[name]
        return node

    def leaves(self, under: Sequence[str] = ()) -> list[Provision]:
        out: list[Provision] = []
        start = self.node(under)

        def walk(node: TrieNode, path: tuple[str, ...]) -> None:
            if node.is_leaf:
                out.append(Provision(path, node.text or ""))
                return
            for name, child in node.children.items():
                walk(child, path + (name,))

        walk(start, tuple(under))
        return out


def build_trie_from_records(records: Iterable[dict[str, Any]]) -> StatuteTrie:
    trie = StatuteTrie()
    for lineno, rec in enumerate(records, start=1):
        _add_record(trie, rec, lineno)
    return trie


def _add_record(trie: StatuteTrie, rec: Any, lineno: int) -> None:
    if not isinstance(rec, dict):
        raise CatalogError("catalog entry is not an object", line=lineno)
    path = []
    for level in LEVELS:
        value = rec.get(level)
        if not isinstance(value, str) or not value.strip():
            raise CatalogError(f"missing level {level!r}", line=lineno)
        path.append(value.strip())
    text = rec.get("text")
    if not isinstance(text, str):
        raise CatalogError("missing provision text", line=lineno)
    try:
        trie.add(path, text)
    except CatalogError as exc:
        raise CatalogError(str(exc), line=lineno) from None


def build_trie(catalog: str | Path) -> StatuteTrie:
    """Load a JSON-lines catalog with chapter/part/article/section/provision/text fields."""
    trie = StatuteTrie()
    with Path(catalog).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"malformed JSON: {exc.msg}", line=lineno) from None
            _add_record(trie, rec, lineno)
    return trie


@dataclass
class ProvisionResult:
    provisions: list[Provision]
    expanded: list[tuple[str, ...]]  # every path the model chose to expand
    warnings: list[str]
    calls: int = 0


def _dedupe(names: Iterable[Any]) -> list[str]:
    seen: dict[str, None] = {}
    for n in names:
        if isinstance(n, str):
            seen.setdefault(n.strip(), None)
    return list(seen)


def _ask_selection(backend: ChatBackend, templates: TemplateSet, query: str, path: tuple[str, ...],
                   level: str, options: list[str], cap: int, warnings: list[str]) -> tuple[list[str], int]:
    routing = {"path": list(path), "level": level, "options": options, "cap": cap}
    prompt = templates.render("select_children", routing=routing, query=query,
                              path=" / ".join(path) or "(top)", level=level, options=options, cap=cap)
    calls = 1
    try:
        raw = judge_json(backend, prompt, ["selected"]).record["selected"]
    except JudgeFormatError as exc:
        warnings.append(f"unreadable selection at {prompt.variables['path']}: {exc}")
        return [], calls
    names = _dedupe(raw if isinstance(raw, list) else [raw])
    invalid = [n for n in names if n not in options]
    if invalid:
        retry = prompt.with_suffix(
            "These names do not exist: " + ", ".join(invalid)
            + ". Choose only from: " + ", ".join(options) + '. Return {"selected": [...]}.',
            reprompt=1,
        )
        calls += 1
        try:
            raw = judge_json(backend, retry, ["selected"]).record["selected"]
            names = _dedupe(raw if isinstance(raw, list) else [raw])
        except JudgeFormatError:
            names = [n for n in names if n in options]
        still_invalid = [n for n in names if n not in options]
        if still_invalid:
            msg = f"dropping nonexistent {level} entries {still_invalid} under {list(path)}"
            log.warning(msg)
            warnings.append(msg)
        names = [n for n in names if n in options]
    if len(names) > cap:
        msg = f"{len(names)} {level} entries selected under {list(path)}; expanding first {cap}"
        log.warning(msg)
        warnings.append(msg)
        names = names[:cap]
    return names, calls


def retrieve_provisions(query: str, trie: StatuteTrie, backend: ChatBackend,
                        fanout_cap: int = DEFAULT_FANOUT_CAP,
                        templates: TemplateSet | None = None) -> ProvisionResult:
    if len(trie) == 0:
        raise ValueError("statute trie is empty")
    if fanout_cap < 1:
        raise ValueError("fanout_cap must be positive")
    templates = templates or TemplateSet()
    frontier: list[tuple[tuple[str, ...], TrieNode]] = [((), trie.root)]
    expanded: list[tuple[str, ...]] = []
    warnings: list[str] = []
    calls = 0
    for depth, level in enumerate(LEVELS):
        nxt = []
        for path, node in frontier:
            options = list(node.children)
            chosen, n = _ask_selection(backend, templates, query, path, level, options,
                                       fanout_cap, warnings)
            calls += n
            for name in chosen:
                child_path = path + (name,)
                expanded.append(child_path)
                nxt.append((child_path, node.children[name]))
        frontier = nxt
        if not frontier:
            break
    provisions = [Provision(path, node.text or "") for path, node in frontier if node.is_leaf]
    return ProvisionResult(provisions, expanded, warnings, calls)


# --------------------------------------------------------------------------
# precedent cases


class VectorIndex(ABC):
    @abstractmethod
    def search(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        """Row indices and cosine similarities, best first."""


class ExactCosineIndex(VectorIndex):
    def __init__(self, vectors: np.ndarray, ids: Sequence[str]):
        self.vectors = np.asarray(vectors, dtype=float)
        norms = np.linalg.norm(self.vectors, axis=1)
        safe = np.where(norms == 0.0, 1.0, norms)
        self._unit = self.vectors / safe[:, None]
        # rank of each id in ascending order, for deterministic tie-breaks
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(ids))

    def similarities(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=float)
        n = np.linalg.norm(q)
        if n == 0.0:
            return np.zeros(len(self._unit))
        return self._unit @ (q / n)

    def search(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        sims = self.similarities(query)
        order = np.lexsort((self._id_rank, -sims))[:k]
        return [(int(i), float(sims[i])) for i in order]


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    summary: str


class CaseStore:
    def __init__(self, entries: Sequence[CaseEntry], embeddings: np.ndarray, dimension: int,
                 index_cls: type[VectorIndex] = ExactCosineIndex):
        embeddings = np.asarray(embeddings, dtype=float)
        if len(entries) != embeddings.shape[0]:
            raise StoreError("entry count does not match embedding rows")
        if embeddings.size and embeddings.shape[1] != dimension:
            raise StoreError(f"embeddings have dimension {embeddings.shape[1]}, "
                             f"backend declares {dimension}")
        ids = [e.case_id for e in entries]
        if len(set(ids)) != len(ids):
            raise StoreError("duplicate case_id in case store")
        self.entries = tuple(entries)
        self.embeddings = embeddings.reshape(len(entries), dimension)
        self.dimension = dimension
        self.index = index_cls(self.embeddings, ids)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def build(cls, entries: Sequence[CaseEntry], embed: EmbeddingBackend) -> "CaseStore":
        vecs = embed.embed_many([e.summary for e in entries])
        if vecs.size and vecs.shape[1] != embed.dimension:
            raise StoreError("embedding backend returned vectors of the wrong dimension")
        return cls(entries, vecs.reshape(len(entries), embed.dimension), embed.dimension)

    @classmethod
    def load(cls, path: str | Path, embed: EmbeddingBackend,
             sidecar: str | Path | None = None) -> "CaseStore":
        """Read ``case_id``/``summary`` JSON lines.

        If ``sidecar`` is given, vectors come from it: raw little-endian
        float32, row-major, one row of ``embed.dimension`` values per entry in
        file order, no header. Otherwise every summary is embedded.
        """
        entries = []
        with Path(path).open("r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    rec = json.loads(raw)
                    entries.append(CaseEntry(str(rec["case_id"]), str(rec["summary"])))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise StoreError(f"line {lineno}: bad case store entry ({exc})") from None
        if sidecar is None:
            return cls.build(entries, embed)
        data = np.fromfile(sidecar, dtype="<f4")
        if data.size != len(entries) * embed.dimension:
            raise StoreError(f"sidecar holds {data.size} floats, expected "
                             f"{len(entries)} x {embed.dimension}")
        return cls(entries, data.reshape(len(entries), embed.dimension).astype(float), embed.dimension)

    def write_sidecar(self, path: str | Path) -> None:
        self.embeddings.astype("<f4").tofile(path)

    def nearest(self, query_vec: np.ndarray, k: int) -> list[tuple[CaseEntry, float]]:
        q = np.asarray(query_vec, dtype=float)
        if q.shape != (self.dimension,):
            raise StoreError(f"query vector has shape {q.shape}, store dimension is {self.dimension}")
        return [(self.entries[i], s) for i, s in self.index.search(q, k)]


@dataclass(frozen=True)
class RetrievedCase:
    case_id: str
    summary: str
    cosine: float
    rerank_score: float


def retrieve_cases(query: str, store: CaseStore, embed: EmbeddingBackend, rerank: Reranker,
                   k_initial: int = DEFAULT_K_INITIAL,
                   k_final: int = DEFAULT_K_FINAL) -> list[RetrievedCase]:
    if len(store) == 0:
        raise StoreError("case store is empty")
    if embed.dimension != store.dimension:
        raise StoreError(f"embedding dimension {embed.dimension} != store dimension {store.dimension}")
    hits = store.nearest(embed.embed(query), k_initial)
    scores = rerank.scores(query, [e.summary for e, _ in hits])
    if len(scores) != len(hits):
        raise StoreError("reranker returned the wrong number of scores")
    ranked = sorted(zip(hits, scores), key=lambda t: (-t[1], t[0][0].case_id))
    return [RetrievedCase(e.case_id, e.summary, cos, float(s)) for (e, cos), s in ranked[:k_final]]


class CaseSummarizer:
    """Summarises retrieved precedents for a query; cached by (case_id, query hash)."""

    def __init__(self, backend: ChatBackend, templates: TemplateSet | None = None):
        self.backend = backend
        self.templates = templates or TemplateSet()
        self._cache: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()

    def __call__(self, query: str, case: RetrievedCase) -> str:
        key = (case.case_id, hashlib.sha256(query.encode("utf-8")).hexdigest()[:16])
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        prompt = self.templates.render("summarize_case", routing={"case_id": case.case_id},
                                       query=query, case_id=case.case_id, summary=case.summary)
        text = generate_one(self.backend, prompt).strip()
        with self._lock:
            self._cache.setdefault(key, text)
        return text
