"""Turn raw sandbox failures into short, categorised feedback for fix mode."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import yaml

from .sandbox import STREAM_CAP, ExecutionResult

CATEGORIES = (
    "assertion", "syntax", "name", "type", "value", "index_key",
    "import_missing", "recursion", "timeout", "setup", "other",
)

DEFAULT_BUDGET = 2000
MIN_BUDGET = 256

DEFAULT_GUIDANCE = {
    "assertion": "Your generated solution failed a test case. Please improve the logic of your solution.",
    "syntax": "Your generated solution is not valid Python. Please fix the syntax error.",
    "name": "Your generated solution uses a name that is not defined. Please check spelling, imports and the required function name.",
    "type": "Your generated solution used a value of the wrong type. Please check the argument and return types of your solution.",
    "value": "Your generated solution received or produced an invalid value. Please check how your solution handles its inputs.",
    "index_key": "Your generated solution accessed a missing index or key. Please check the bounds and keys your solution uses.",
    "import_missing": "Your generated solution imports a module that is not available. Please list it under '### Requirements' or use the standard library.",
    "recursion": "Your generated solution exceeded the maximum recursion depth. Please check your base case or use an iterative approach.",
    "timeout": "Your solution exceeded the {limit}-second time limit; check for infinite loops or inefficiency.",
    "setup": "Installing the requirements you listed failed. Please check the package names in your '### Requirements' section.",
    "other": "Your generated solution raised an error. Please fix the problem described above.",
}

_EXCEPTION_CATEGORY = {
    "AssertionError": "assertion",
    "SyntaxError": "syntax",
    "IndentationError": "syntax",
    "TabError": "syntax",
    "NameError": "name",
    "UnboundLocalError": "name",
    "TypeError": "type",
    "ValueError": "value",
    "IndexError": "index_key",
    "KeyError": "index_key",
    "ModuleNotFoundError": "import_missing",
    "ImportError": "import_missing",
    "RecursionError": "recursion",
}

_EXC_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_.]*)(?::\s?(.*))?$")
_FRAME = re.compile(r'^  File "(?P<path>[^"]*)", line (?P<line>\d+)(?:, in (?P<func>.*))?$')
_REPEATED = re.compile(r"^  \[Previous line repeated (\d+) more times?\]$")
ELISION = "\n[... {n} characters elided ...]\n"


@dataclass(frozen=True)
class RefinedError:
    category: str
    filtered_traceback: str
    guidance: str
    truncated: bool
    original_length: int

    def render(self) -> str:
        if not self.filtered_traceback:
            return self.guidance
        return f"{self.filtered_traceback}\n\n{self.guidance}"


def load_guidance(path: str | Path | None) -> dict[str, str]:
    table = dict(DEFAULT_GUIDANCE)
    if path is not None:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        unknown = set(data) - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown guidance categories: {sorted(unknown)}")
        table.update({k: str(v) for k, v in data.items()})
    return table


def final_exception(stderr: str) -> str | None:
    """Name of the exception on the last exception-shaped line of ``stderr``."""
    for line in reversed(stderr.rstrip().splitlines()):
        if not line or line[0].isspace():
            continue
        m = _EXC_LINE.match(line)
        if m and (m.group(1)[0].isupper() or "." in m.group(1)):
            name = m.group(1).rsplit(".", 1)[-1]
            if name.endswith(("Error", "Exception", "Exit", "Interrupt", "Warning", "Iteration")) or m.group(2) is not None:
                return name
    return None


def classify(result: ExecutionResult) -> str:
    if result.status == "passed":
        raise ValueError("cannot classify a passing execution")
    if result.status == "timeout":
        return "timeout"
    if result.status == "setup_error":
        return "setup"
    name = final_exception(result.stderr)
    return _EXCEPTION_CATEGORY.get(name, "other")


@dataclass
class _Frame:
    header: str
    body: list[str]

    @property
    def key(self) -> tuple[str, ...]:
        return (self.header, *self.body)

    def lines(self) -> list[str]:
        return [self.header, *self.body]


def _split_blocks(stderr: str) -> list[tuple[str, list]]:
    """Break stderr into ('frames', [_Frame]) and ('text', [line]) runs."""
    blocks: list[tuple[str, list]] = []
    for line in stderr.splitlines():
        if _FRAME.match(line):
            if not blocks or blocks[-1][0] != "frames":
                blocks.append(("frames", []))
            blocks[-1][1].append(_Frame(line, []))
            continue
        rep = _REPEATED.match(line)
        if rep and blocks and blocks[-1][0] == "frames" and blocks[-1][1]:
            frames = blocks[-1][1]
            frames.extend(_Frame(frames[-1].header, list(frames[-1].body)) for _ in range(int(rep.group(1))))
            continue
        if line.startswith("    ") and blocks and blocks[-1][0] == "frames" and blocks[-1][1]:
            blocks[-1][1][-1].body.append(line)
            continue
        if not blocks or blocks[-1][0] != "text":
            blocks.append(("text", []))
        blocks[-1][1].append(line)
    return blocks


def _is_main(header: str, main_name: str) -> bool:
    path = _FRAME.match(header).group("path")
    if path == main_name:
        return True
    return path.endswith("/" + main_name) and not any(
        marker in path for marker in ("site-packages", "dist-packages", "/lib/python")
    )


def _collapse(frames: list[_Frame], max_period: int = 8) -> list[str]:
    """Fold consecutive repeats of a frame cycle into one copy plus a count."""
    out: list[str] = []
    i = 0
    n = len(frames)
    while i < n:
        best_period, best_reps = 1, 1
        for period in range(1, max_period + 1):
            if i + 2 * period > n:
                break
            block = [f.key for f in frames[i : i + period]]
            reps = 1
            while (
                i + (reps + 1) * period <= n
                and [f.key for f in frames[i + reps * period : i + (reps + 1) * period]] == block
            ):
                reps += 1
            if reps > 1 and reps * period > best_reps * best_period:
                best_period, best_reps = period, reps
        for f in frames[i : i + best_period]:
            out.extend(f.lines())
        if best_reps > 1:
            unit = "frame" if best_period == 1 else f"{best_period} frames"
            out.append(f"  [above {unit} repeated {best_reps - 1} more times]")
        i += best_period * best_reps
    return out


def filter_traceback(stderr: str, main_name: str = "main.py") -> str:
    kept: list[str] = []
    for kind, items in _split_blocks(stderr):
        if kind == "text":
            kept.extend(items)
            continue
        main_frames = [f for f in items if _is_main(f.header, main_name)]
        kept.extend(_collapse(main_frames))
    return "\n".join(kept).strip("\n")


def _fit(text: str, limit: int) -> tuple[str, bool]:
    """Keep head and tail of ``text`` so that the result has at most ``limit`` chars."""
    if len(text) <= limit:
        return text, False
    if limit <= 0:
        return "", True
    marker_len = len(ELISION.format(n=len(text)))
    room = limit - marker_len
    if room <= 0:
        return text[-limit:], True
    head = room // 3
    tail = room - head
    elided = len(text) - head - tail
    return f"{text[:head]}{ELISION.format(n=elided)}{text[len(text) - tail:]}", True


def refine(
    result: ExecutionResult,
    budget: int = DEFAULT_BUDGET,
    *,
    timeout: float | None = None,
    guidance: dict[str, str] | None = None,
    main_name: str = "main.py",
) -> RefinedError:
    """Refine a failed execution; ``render()`` of the result fits in ``budget``."""
    if budget < MIN_BUDGET:
        raise ValueError(f"budget must be at least {MIN_BUDGET} characters")
    table = guidance or DEFAULT_GUIDANCE
    category = classify(result)
    raw = result.stderr
    original_length = max(result.stderr_length, len(raw))

    if category == "timeout":
        limit = timeout if timeout is not None else result.timeout
        limit_text = f"{limit:g}" if limit is not None else "configured"
        text = table["timeout"].format(limit=limit_text)
        traceback = ""
    else:
        text = table[category]
        traceback = filter_traceback(raw, main_name) if category != "setup" else raw.strip()
    text, guidance_cut = _fit(text, budget)
    room = budget - len(text) - 2
    traceback, cut = _fit(traceback, room)
    truncated = cut or guidance_cut or result.stderr_length > STREAM_CAP
    return RefinedError(
        category=category,
        filtered_traceback=traceback,
        guidance=text,
        truncated=truncated,
        original_length=original_length,
    )


def missing_code_error(detail: str) -> RefinedError:
    guidance = (
        "Your response contained no code block. Put the complete solution in a "
        "'### Code' section enclosed with triple backticks."
    )
    return RefinedError("other", detail, guidance, False, len(detail))
