"""Remove example invocations from generated code before it is executed.

Models often append ``foo(4)`` or ``print(foo(4))`` or a ``__main__`` block
after the solution. Those lines would run before the test harness does, so
they are stripped. Everything else, including top-level calls to names the
code does not define, is kept byte for byte.

The scanner is line oriented: it groups physical lines into logical lines
(tracking brackets, string literals and backslash continuations) and only
looks at statements that start in column 0.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .signature import _matching_close, _skip_string, split_top_level

logger = logging.getLogger(__name__)

_DEF = re.compile(r"(?:async\s+)?def\s+([A-Za-z_][A-Za-z0-9_]*)")
_CLASS = re.compile(r"class\s+([A-Za-z_][A-Za-z0-9_]*)")
_MAIN_GUARD = re.compile(
    r"""if\s*\(?\s*(?:__name__\s*==\s*(['"])__main__\1|(['"])__main__\2\s*==\s*__name__)\s*\)?\s*:"""
)
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_ASSIGN = re.compile(r"[A-Za-z_][A-Za-z0-9_.,\s\[\]]*?(?<![=!<>])=(?!=)\s*(.*)", re.S)
_STRING_START = re.compile(r"(?i)(?:rb|br|fr|rf|r|b|u|f)?['\"]")


class _Unterminated(ValueError):
    pass


@dataclass
class LogicalLine:
    start: int  # first physical line, 0-based
    end: int  # one past the last physical line
    indent: int
    text: str
    blank: bool


@dataclass
class SanitizedCode:
    code: str
    removed: list[tuple[tuple[int, int], str]] = field(default_factory=list)
    defined_names: set[str] = field(default_factory=set)
    suspicious: list[str] = field(default_factory=list)
    warning: str | None = None


def _logical_lines(physical: list[str]) -> list[LogicalLine]:
    """Group physical lines into logical lines; raises on unterminated input."""
    out: list[LogicalLine] = []
    depth = 0
    string_quote: str | None = None  # open triple-quoted string delimiter
    start = None
    for idx, line in enumerate(physical):
        if start is None:
            start = idx
        i = 0
        n = len(line)
        continued = False
        while i < n:
            if string_quote is not None:
                end = line.find(string_quote, i)
                while end != -1 and _odd_backslashes(line, end):
                    end = line.find(string_quote, end + 1)
                if end == -1:
                    i = n
                    break
                i = end + 3
                string_quote = None
                continue
            ch = line[i]
            if ch == "#":
                break
            if ch in "'\"":
                if line.startswith(ch * 3, i):
                    end = line.find(ch * 3, i + 3)
                    while end != -1 and _odd_backslashes(line, end):
                        end = line.find(ch * 3, end + 1)
                    if end == -1:
                        string_quote = ch * 3
                        i = n
                        break
                    i = end + 3
                    continue
                try:
                    i = _skip_string(line, i)
                except ValueError:
                    raise _Unterminated(f"unterminated string on line {idx + 1}") from None
                continue
            if ch in "([{":
                depth += 1
            elif ch in ")]}":
                depth -= 1
                if depth < 0:
                    raise _Unterminated(f"unbalanced bracket on line {idx + 1}")
            elif ch == "\\" and line[i + 1 :].strip() == "":
                continued = True
                break
            i += 1
        if string_quote is None and depth == 0 and not continued:
            first = physical[start]
            stripped = first.lstrip(" \t")
            text = "".join(physical[start : idx + 1])
            blank = stripped.strip() == "" or (stripped.startswith("#") and idx == start)
            out.append(
                LogicalLine(
                    start=start,
                    end=idx + 1,
                    indent=len(first) - len(stripped),
                    text=text,
                    blank=blank,
                )
            )
            start = None
    if start is not None:
        raise _Unterminated("input ends inside a bracket, string or continuation")
    return out


def _odd_backslashes(line: str, idx: int) -> bool:
    n = 0
    k = idx - 1
    while k >= 0 and line[k] == "\\":
        n += 1
        k -= 1
    return n % 2 == 1


def _strip_trailing_comment(text: str) -> str:
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "'\"":
            try:
                i = _skip_string(text, i)
            except ValueError:
                return text
            continue
        if ch == "#":
            return text[:i]
        i += 1
    return text


def _statement(line: LogicalLine) -> str:
    """Logical line text with comments and line continuations folded away."""
    parts = [_strip_trailing_comment(p) for p in line.text.split("\n")]
    joined = " ".join(p.rstrip().rstrip("\\") for p in parts)
    return joined.strip().rstrip(";").strip()


def _top_level_statements(lines: list[LogicalLine]) -> list[tuple[int, int]]:
    """``(first, last)`` logical-line indices of each column-0 statement and its block."""
    spans = []
    current: int | None = None
    last_body: int | None = None
    for k, line in enumerate(lines):
        if line.blank:
            continue
        if line.indent == 0:
            if current is not None:
                spans.append((current, last_body))
            current = k
            last_body = k
        elif current is not None:
            last_body = k
    if current is not None:
        spans.append((current, last_body))
    return spans


def _call_root(expr: str) -> str | None:
    """Root name of an expression that is a call chain, e.g. ``A().run(1)`` -> ``A``."""
    m = _NAME.match(expr)
    if not m or m.group(0) in ("lambda", "not", "await", "yield", "return"):
        return None
    i = m.end()
    ends_with_call = False
    while i < len(expr):
        ch = expr[i]
        if ch in " \t":
            i += 1
            continue
        if ch in "([":
            try:
                close = _matching_close(expr, i)
            except ValueError:
                return None
            ends_with_call = ch == "("
            i = close + 1
            continue
        if ch == ".":
            nm = _NAME.match(expr, i + 1)
            if not nm:
                return None
            i = nm.end()
            ends_with_call = False
            continue
        return None
    return m.group(0) if ends_with_call else None


def _is_example_call(stmt: str, defined: set[str]) -> bool:
    # ``foo(1); foo(2)`` counts only when every simple statement is a call
    try:
        parts = [p for p in split_top_level(stmt, ";") if p]
    except ValueError:
        return False
    if len(parts) > 1:
        return all(_is_example_call(p, defined) for p in parts)
    root = _call_root(stmt)
    if root is None:
        return False
    if root in defined:
        return True
    if root == "print":
        open_idx = stmt.index("(")
        try:
            close = _matching_close(stmt, open_idx)
            args = split_top_level(stmt[open_idx + 1 : close])
        except ValueError:
            return False
        return any(_call_root(a) in defined for a in args if a)
    return False


def _physical_lines(code: str) -> list[str]:
    # the tokenizer only breaks on newlines; str.splitlines would also split on \x0c, \u2028, ...
    return re.findall(r"[^\n]*\n|[^\n]+$", code)


def scan_definitions(code: str) -> set[str]:
    """Names bound by column-0 ``def``/``class`` statements."""
    try:
        lines = _logical_lines(_physical_lines(code))
    except _Unterminated:
        lines = []
    names = set()
    for line in lines:
        if line.blank or line.indent != 0:
            continue
        m = _DEF.match(line.text) or _CLASS.match(line.text)
        if m:
            names.add(m.group(1))
    return names


def strip_example_calls(code: str) -> SanitizedCode:
    physical = _physical_lines(code)
    try:
        lines = _logical_lines(physical)
    except _Unterminated as exc:
        logger.warning("sanitizer left code unchanged: %s", exc)
        return SanitizedCode(code=code, warning=str(exc))

    defined = scan_definitions(code)
    drop: set[int] = set()
    removed = []
    suspicious = []
    for first, last in _top_level_statements(lines):
        head = lines[first]
        stmt = _statement(head)
        if _MAIN_GUARD.match(stmt):
            span = (head.start, lines[last].end)
        elif first == last and _is_example_call(stmt, defined):
            span = (head.start, head.end)
        else:
            m = _ASSIGN.match(stmt)
            if first == last and m and not _STRING_START.match(stmt) and _call_root(m.group(1).strip()) in defined:
                suspicious.append(stmt)
                logger.info("kept top-level assignment calling a defined name: %s", stmt)
            continue
        drop.update(range(*span))
        removed.append(((span[0] + 1, span[1]), "".join(physical[span[0] : span[1]])))

    if not removed:
        return SanitizedCode(code=code, defined_names=defined, suspicious=suspicious)
    kept = "".join(line for idx, line in enumerate(physical) if idx not in drop)
    return SanitizedCode(code=kept, removed=removed, defined_names=defined, suspicious=suspicious)
