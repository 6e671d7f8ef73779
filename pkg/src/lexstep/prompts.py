"""Versioned prompt templates.

Templates are plain text files named ``<template>.txt`` inside a version
directory. Placeholders use ``string.Template`` syntax (``$claim``). The first
line may be ``#system: ...`` to set a system message.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

PACKAGE_TEMPLATES = Path(__file__).parent / "templates"
DEFAULT_VERSION = "v1"


@dataclass(frozen=True)
class Prompt:
    """A rendered prompt.

    ``variables`` carries the structured inputs used to render it. Scripted
    backends route on them; remote backends only see ``system`` and ``text``.
    """

    template_id: str
    text: str
    system: str = ""
    variables: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for part in (self.template_id, self.system, self.text):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()[:16]

    def with_suffix(self, suffix: str, **extra_vars: Any) -> "Prompt":
        return Prompt(self.template_id, self.text + "\n\n" + suffix, self.system,
                      {**self.variables, **extra_vars})

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system:
            msgs.append({"role": "system", "content": self.system})
        msgs.append({"role": "user", "content": self.text})
        return msgs


def format_list(items: Iterable[str], empty: str = "(none)") -> str:
    items = list(items)
    if not items:
        return empty
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, start=1))


class TemplateSet:
    def __init__(self, version: str = DEFAULT_VERSION, root: str | Path | None = None):
        self.version = version
        self.root = Path(root) if root else PACKAGE_TEMPLATES
        self.directory = self.root / version
        if not self.directory.is_dir():
            raise FileNotFoundError(f"template directory not found: {self.directory}")
        self._cache: dict[str, tuple[str, string.Template]] = {}

    def template_ref(self, name: str) -> str:
        return f"{self.version}/{name}"

    def _load(self, name: str) -> tuple[str, string.Template]:
        if name not in self._cache:
            raw = (self.directory / f"{name}.txt").read_text(encoding="utf-8")
            system = ""
            if raw.startswith("#system:"):
                first, _, raw = raw.partition("\n")
                system = first[len("#system:"):].strip()
            self._cache[name] = (system, string.Template(raw.rstrip("\n")))
        return self._cache[name]

    def render(self, name: str, routing: dict[str, Any] | None = None, **values: Any) -> Prompt:
        """Render ``name``. List values are shown as numbered lines.

        ``routing`` adds variables that are recorded on the prompt without
        being substituted into the text.
        """
        system, tmpl = self._load(name)
        rendered = {
            k: format_list(v) if isinstance(v, (list, tuple)) else str(v)
            for k, v in values.items()
        }
        text = tmpl.substitute(rendered)
        variables = {**values, **(routing or {})}
        variables = {k: list(v) if isinstance(v, tuple) else v for k, v in variables.items()}
        return Prompt(name, text, system, variables)

    def names(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.txt"))
