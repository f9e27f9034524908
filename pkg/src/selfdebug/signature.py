"""Infer a function signature hint from the first assert of a problem.

The hint names the function, gives a typed parameter list built from the
literal kinds of the call arguments, and shows the call itself. The expected
value on the other side of the comparison is never part of the hint.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .dataset import Problem

KINDS = ("int", "float", "str", "bool", "list", "dict", "tuple", "set", "none", "other")

ANNOTATIONS = {
    "int": "int",
    "float": "float",
    "str": "str",
    "bool": "bool",
    "list": "list",
    "dict": "dict",
    "tuple": "tuple",
    "set": "set",
    "none": "None",
    "other": "Any",
}

# Wrappers that MBPP-style tests put around the call under test.
TRANSPARENT_WRAPPERS = frozenset(
    {"set", "sorted", "list", "tuple", "frozenset", "abs", "round", "len", "str",
     "int", "float", "bool", "math.isclose", "isclose", "dict", "sum", "max", "min"}
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_CALLEE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*(?:\s*\.\s*[A-Za-z_][A-Za-z0-9_]*)*)\s*\(")
_INT = re.compile(r"[+-]?(?:0[xX][0-9a-fA-F_]+|0[oO][0-7_]+|0[bB][01_]+|\d[\d_]*)")
_FLOAT = re.compile(r"[+-]?(?:\d[\d_]*\.[\d_]*(?:[eE][+-]?\d+)?|\.\d[\d_]*(?:[eE][+-]?\d+)?|\d[\d_]*[eE][+-]?\d+)")
_STRING_PREFIX = re.compile(r"(?i)(?:r|u|f|fr|rf)?(['\"])")
_BYTES_PREFIX = re.compile(r"(?i)(?:b|br|rb)['\"]")
_KEYWORD_ARG = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=(?!=)")
_COMPARISONS = ("==", "!=", "<=", ">=", "<", ">")
_WORD_COMPARISONS = ("not in", "is not", "in", "is")
_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = {")", "]", "}"}


class SignatureError(ValueError):
    """The assert text does not have a recognisable call shape."""


@dataclass(frozen=True)
class Argument:
    text: str
    kind: str
    keyword: str | None = None


@dataclass(frozen=True)
class CallShape:
    function_name: str
    args: tuple[Argument, ...]
    call_text: str
    expected_text: str | None = None

    def __post_init__(self) -> None:
        if not _IDENT.fullmatch(self.function_name.split(".")[-1]):
            raise SignatureError(f"invalid function name {self.function_name!r}")


@dataclass(frozen=True)
class SignatureHint:
    function_name: str
    signature_text: str
    example_call: str
    rendered_hint: str


def _skip_string(text: str, i: int) -> int:
    """Return the index just past the string literal whose quote is at ``i``."""
    quote = text[i]
    triple = text.startswith(quote * 3, i)
    if triple:
        end = text.find(quote * 3, i + 3)
        while end != -1 and _escaped(text, end):
            end = text.find(quote * 3, end + 1)
        if end == -1:
            raise SignatureError("unterminated string literal")
        return end + 3
    j = i + 1
    while j < len(text):
        ch = text[j]
        if ch == "\\":
            j += 2
            continue
        if ch == quote:
            return j + 1
        if ch == "\n":
            break
        j += 1
    raise SignatureError("unterminated string literal")


def _escaped(text: str, idx: int) -> bool:
    n = 0
    k = idx - 1
    while k >= 0 and text[k] == "\\":
        n += 1
        k -= 1
    return n % 2 == 1


def _top_level(text: str):
    """Yield ``(index, char)`` for characters at bracket depth 0 outside strings."""
    depth: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "'\"":
            i = _skip_string(text, i)
            continue
        if ch == "#":
            break
        if ch in _OPEN:
            if not depth:
                yield i, ch
            depth.append(_OPEN[ch])
        elif ch in _CLOSE:
            if not depth or depth.pop() != ch:
                raise SignatureError(f"unbalanced bracket {ch!r} at offset {i}")
            if not depth:
                yield i, ch
        elif not depth:
            yield i, ch
        i += 1
    if depth:
        raise SignatureError("unbalanced brackets")


def split_top_level(text: str, sep: str = ",") -> list[str]:
    parts: list[str] = []
    start = 0
    for i, ch in _top_level(text):
        if ch == sep:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return [p.strip() for p in parts]


def _matching_close(text: str, open_idx: int) -> int:
    """Index of the bracket closing the one at ``open_idx``."""
    depth = 0
    i = open_idx
    while i < len(text):
        ch = text[i]
        if ch in "'\"":
            i = _skip_string(text, i)
            continue
        if ch in _OPEN:
            depth += 1
        elif ch in _CLOSE:
            depth -= 1
            if depth == 0:
                return i
        i += 1
    raise SignatureError("unbalanced brackets")


def _strip_comment(text: str) -> str:
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "'\"":
            i = _skip_string(text, i)
            continue
        if ch == "#":
            return text[:i]
        i += 1
    return text


def _find_comparison(expr: str) -> tuple[int, int] | None:
    """Locate the first top-level comparison operator as ``(start, end)``."""
    positions = [i for i, _ in _top_level(expr)]
    top = set(positions)
    for i in positions:
        for op in _COMPARISONS:
            if expr.startswith(op, i) and all(k in top for k in range(i, i + len(op))):
                # skip '=' halves of '<=' etc. and the '->' arrow
                if op in ("<", ">") and expr.startswith("=", i + 1):
                    continue
                if op == ">" and i > 0 and expr[i - 1] in "-=!<>":
                    continue
                if op == "<" and i > 0 and expr[i - 1] in "<":
                    continue
                if op in ("<", ">") and expr.startswith(op, i + 1):
                    continue
                return i, i + len(op)
        for op in _WORD_COMPARISONS:
            if expr.startswith(op, i) and (i == 0 or not (expr[i - 1].isalnum() or expr[i - 1] == "_")):
                end = i + len(op)
                if end < len(expr) and (expr[end].isalnum() or expr[end] == "_"):
                    continue
                if not all(k in top for k in range(i, end)):
                    continue
                if op == "in" and expr[:i].rstrip().endswith("not"):
                    continue
                return i, end
    return None


def classify_literal(text: str) -> str:
    """Classify a literal from its surface syntax alone."""
    t = text.strip()
    if not t:
        return "other"
    if t in ("True", "False"):
        return "bool"
    if t == "None":
        return "none"
    if _BYTES_PREFIX.match(t):
        return "other"
    m = _STRING_PREFIX.match(t)
    if m:
        try:
            end = _skip_string(t, m.end() - 1)
        except SignatureError:
            return "other"
        rest = t[end:].strip()
        # implicit concatenation of adjacent literals
        return "str" if not rest or classify_literal(rest) == "str" else "other"
    if _FLOAT.fullmatch(t):
        return "float"
    if _INT.fullmatch(t):
        return "int"
    head = t[0]
    if head in _OPEN:
        try:
            close = _matching_close(t, 0)
        except SignatureError:
            return "other"
        if close != len(t) - 1:
            return "other"
        inner = t[1:-1]
        if head == "[":
            return "list"
        if head == "{":
            if not inner.strip():
                return "dict"
            parts = split_top_level(inner)
            first = parts[0]
            if first.startswith("**") or any(ch == ":" for _, ch in _top_level(first)):
                return "dict"
            return "set"
        if not inner.strip():
            return "tuple"
        parts = split_top_level(inner)
        if len(parts) > 1:
            return "tuple"
        return classify_literal(inner)
    return "other"


def _parse_call(expr: str) -> tuple[str, str] | None:
    """Split ``name(args)`` into ``(name, args_text)`` when ``expr`` is exactly a call."""
    expr = expr.strip()
    m = _CALLEE.match(expr)
    if not m:
        return None
    open_idx = m.end() - 1
    close = _matching_close(expr, open_idx)
    if close != len(expr) - 1:
        return None
    name = re.sub(r"\s+", "", m.group(1))
    return name, expr[open_idx + 1 : close]


def _unwrap(expr: str) -> tuple[str, str, str] | None:
    """Descend through transparent wrappers to the call under test."""
    call = _parse_call(expr)
    if call is None:
        return None
    name, args_text = call
    if name in TRANSPARENT_WRAPPERS:
        parts = [p for p in split_top_level(args_text) if p]
        if parts:
            inner = _unwrap(parts[0])
            if inner is not None:
                return inner
    return name, args_text, expr.strip()


def parse_assert(test_text: str) -> CallShape:
    text = test_text.strip()
    if not re.match(r"assert\b", text):
        raise SignatureError(f"not an assert statement: {test_text!r}")
    body = _strip_comment(text[len("assert"):]).strip()
    # drop the assertion message
    body = split_top_level(body)[0]
    if not body:
        raise SignatureError("empty assertion")
    while re.match(r"not\b", body):
        body = body[3:].strip()
    if body.startswith("(") and _matching_close(body, 0) == len(body) - 1 and _parse_call(body) is None:
        inner = body[1:-1].strip()
        if len(split_top_level(inner)) == 1:
            body = inner

    comparison = _find_comparison(body)
    if comparison is None:
        sides = [(body, None)]
    else:
        left = body[: comparison[0]].strip()
        right = body[comparison[1]:].strip()
        sides = [(left, right), (right, left)]

    for candidate, other in sides:
        found = _unwrap(candidate)
        if found is None:
            continue
        name, args_text, call_text = found
        args = []
        for part in split_top_level(args_text):
            if not part:
                continue
            keyword = None
            km = _KEYWORD_ARG.match(part)
            if km and not part.startswith(("**", "*")):
                keyword = km.group(1)
                value = part[km.end():].strip()
            else:
                value = part
            args.append(Argument(text=part, kind=classify_literal(value), keyword=keyword))
        if not args_text.strip() or args:
            return CallShape(
                function_name=name,
                args=tuple(args),
                call_text=f"{name}({', '.join(a.text for a in args)})",
                expected_text=other,
            )
    if comparison is None and _parse_call(body) is None:
        raise SignatureError(f"assertion has neither a comparison nor a call: {test_text!r}")
    raise SignatureError(f"no call expression found in {test_text!r}")


def _parameter_names(args: tuple[Argument, ...]) -> list[str]:
    totals: dict[str, int] = {}
    for arg in args:
        if arg.keyword is None:
            totals[arg.kind] = totals.get(arg.kind, 0) + 1
    seen: dict[str, int] = {}
    names = []
    for arg in args:
        if arg.keyword is not None:
            names.append(arg.keyword)
            continue
        if totals[arg.kind] > 1:
            seen[arg.kind] = seen.get(arg.kind, 0) + 1
            names.append(f"arg_{arg.kind}{seen[arg.kind]}")
        else:
            names.append(f"arg_{arg.kind}")
    return names


def _render(function_name: str, signature_text: str, example_call: str) -> str:
    return (
        f"### Required function name for your reference '{function_name}()'\n"
        f"### Function signature for your reference - {signature_text}\n"
        f"### An example function call from private test cases - {example_call}"
    )


def hint_from_shape(shape: CallShape) -> SignatureHint:
    names = _parameter_names(shape.args)
    params = ", ".join(
        f"{pname}: {ANNOTATIONS[arg.kind]}" for pname, arg in zip(names, shape.args)
    )
    signature_text = f"{shape.function_name}({params})"
    example_call = shape.call_text
    return SignatureHint(
        function_name=shape.function_name,
        signature_text=signature_text,
        example_call=example_call,
        rendered_hint=_render(shape.function_name, signature_text, example_call),
    )


def render_hint(hint: SignatureHint) -> str:
    return _render(hint.function_name, hint.signature_text, hint.example_call)


def infer_signature(problem: Problem) -> SignatureHint:
    """Build the hint from ``problem.tests[0]``; raises ``SignatureError``."""
    return hint_from_shape(parse_assert(problem.tests[0]))
