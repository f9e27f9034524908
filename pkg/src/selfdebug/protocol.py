"""Prompt construction for generation/fix mode and completion parsing."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .dataset import Problem
from .signature import SignatureHint

logger = logging.getLogger(__name__)

GENERATION = "generation"
FIX = "fix"

_PACKAGE_NAME = re.compile(r"[A-Za-z0-9._-]+")
_FENCE = re.compile(r"^[ \t]*```[^\n`]*\n(.*?)^[ \t]*```", re.S | re.M)
_HEADING = re.compile(r"^[ \t]*###[ \t]*(.+?)[ \t]*$", re.M)


class MissingCodeSection(ValueError):
    """The completion contained no fenced code block."""


def _asset(name: str) -> str:
    return resources.files("selfdebug").joinpath("assets", name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptTemplates:
    generation: str
    fix: str

    @classmethod
    def default(cls) -> "PromptTemplates":
        return cls(generation=_asset("generation_prompt.txt"), fix=_asset("fix_prompt.txt"))

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptTemplates":
        """Load overrides; a file missing from ``path`` keeps the built-in text."""
        base = cls.default()
        path = Path(path)
        gen = path / "generation_prompt.txt"
        fix = path / "fix_prompt.txt"
        return cls(
            generation=gen.read_text(encoding="utf-8") if gen.exists() else base.generation,
            fix=fix.read_text(encoding="utf-8") if fix.exists() else base.fix,
        )


@dataclass(frozen=True)
class PromptBundle:
    mode: str
    system_text: str
    user_text: str


@dataclass(frozen=True)
class ModelResponse:
    raw: str
    code: str
    requirements: tuple[str, ...] = ()
    reasoning: str | None = None
    dropped_requirements: tuple[str, ...] = field(default=(), compare=False)


def _problem_text(problem: Problem, hint: SignatureHint | None) -> str:
    if hint is None:
        return problem.description
    return f"{problem.description.rstrip()}\n\n{hint.rendered_hint}"


def build_generation_prompt(
    problem: Problem,
    hint: SignatureHint | None = None,
    templates: PromptTemplates | None = None,
) -> PromptBundle:
    templates = templates or PromptTemplates.default()
    return PromptBundle(GENERATION, templates.generation, _problem_text(problem, hint))


def build_fix_prompt(
    problem: Problem,
    last_code: str,
    refined,
    hint: SignatureHint | None = None,
    templates: PromptTemplates | None = None,
) -> PromptBundle:
    """Fix-mode prompt holding only the latest code and its refined error.

    ``refined`` is a ``RefinedError`` or its already rendered text.
    """
    error_text = refined if isinstance(refined, str) else refined.render()
    if not last_code.strip():
        raise ValueError("fix prompt needs the previous code")
    templates = templates or PromptTemplates.default()
    user_text = (
        f"{_problem_text(problem, hint).rstrip()}\n\n"
        "### Previous solution\n"
        f"```python\n{last_code.rstrip()}\n```\n\n"
        "### Error message\n"
        f"{error_text.rstrip()}"
    )
    return PromptBundle(FIX, templates.fix, user_text)


def _sections(raw: str) -> dict[str, tuple[int, int]]:
    """Map lower-cased heading title to the (start, end) offsets of its body."""
    heads = [m for m in _HEADING.finditer(raw)]
    out: dict[str, tuple[int, int]] = {}
    # headings that occur inside a fenced block do not delimit sections
    fences = [(m.start(), m.end()) for m in _FENCE.finditer(raw)]
    heads = [m for m in heads if not any(a < m.start() < b for a, b in fences)]
    for k, m in enumerate(heads):
        title = m.group(1).strip().rstrip(":").lower()
        end = heads[k + 1].start() if k + 1 < len(heads) else len(raw)
        out.setdefault(title, (m.end(), end))
    return out


def _parse_requirements(text: str) -> tuple[list[str], list[str]]:
    text = text.strip().strip("`").strip()
    if not text or text.lower().rstrip(".") == "none":
        return [], []
    kept, dropped = [], []
    for token in re.split(r"[,\n]", text):
        token = token.strip().strip("`").strip().lstrip("-*").strip()
        if not token or token.lower() == "none":
            continue
        if _PACKAGE_NAME.fullmatch(token):
            kept.append(token)
        else:
            dropped.append(token)
    if dropped:
        logger.warning("dropped invalid requirement tokens: %s", dropped)
    return kept, dropped


def parse_response(raw: str) -> ModelResponse:
    sections = _sections(raw)
    code = None
    code_span = sections.get("code")
    if code_span is not None:
        m = _FENCE.search(raw, code_span[0])
        if m:
            code = m.group(1)
    if code is None:
        m = _FENCE.search(raw)
        if m is None:
            raise MissingCodeSection("completion contains no fenced code block")
        code = m.group(1)
    code = code.rstrip("\n")
    if not code.strip():
        raise MissingCodeSection("fenced code block is empty")

    requirements: list[str] = []
    dropped: list[str] = []
    req_span = sections.get("requirements")
    if req_span is not None:
        requirements, dropped = _parse_requirements(raw[req_span[0] : req_span[1]])

    reasoning = None
    for title, span in sections.items():
        if title.startswith("step-by-step reasoning") or title.startswith("step by step reasoning"):
            reasoning = raw[span[0] : span[1]].strip() or None
            break

    return ModelResponse(
        raw=raw,
        code=code,
        requirements=tuple(requirements),
        reasoning=reasoning,
        dropped_requirements=tuple(dropped),
    )


def format_response(code: str, requirements: list[str] | None = None, reasoning: str = "") -> str:
    """Render a completion in the response structure the templates ask for."""
    reqs = ", ".join(requirements) if requirements else "None"
    return (
        f"### Step-by-step reasoning\n{reasoning or 'n/a'}\n\n"
        f"### Requirements\n{reqs}\n\n"
        f"### Code\n```python\n{code.rstrip()}\n```\n"
    )
