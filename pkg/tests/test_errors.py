from __future__ import annotations

import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfdebug.errors import (
    CATEGORIES,
    DEFAULT_GUIDANCE,
    classify,
    filter_traceback,
    final_exception,
    load_guidance,
    missing_code_error,
    refine,
)
from selfdebug.sandbox import ExecutionResult, SubprocessExecutor, cleanup, prepare_workspace

from .corpus import RECURSION_FIXTURE, RECURSION_HARNESS

ASSERTION_GUIDANCE = "Your generated solution failed a test case. Please improve the logic of your solution."
_FRAME_PATH = re.compile(r'^  File "([^"]*)"', re.M)


def failed(stderr: str, status: str = "failed", **kw) -> ExecutionResult:
    return ExecutionResult(status, 1, "", stderr, 0.1, stderr_length=len(stderr), **kw)


def sandbox(code: str, harness: str = "", timeout: float = 10) -> ExecutionResult:
    ws = prepare_workspace(code, harness, [], "e", 0)
    try:
        return SubprocessExecutor(timeout=timeout).execute(ws)
    finally:
        cleanup(ws)


@pytest.mark.parametrize("code,category", [
    ("assert 1 == 2", "assertion"),
    ("def f(:\n    pass", "syntax"),
    ("undefined_name", "name"),
    ("len(5)", "type"),
    ("int('x')", "value"),
    ("[][1]", "index_key"),
    ("{}['k']", "index_key"),
    ("import definitely_missing_module", "import_missing"),
    ("def r(): return r()\nr()", "recursion"),
    ("raise RuntimeError('x')", "other"),
    ("import sys\nsys.exit(3)", "other"),
])
def test_classify_real_failures(code, category):
    assert classify(sandbox(code)) == category


def test_classify_status_precedence():
    assert classify(failed("AssertionError", status="timeout")) == "timeout"
    assert classify(failed("whatever", status="setup_error")) == "setup"
    with pytest.raises(ValueError):
        classify(ExecutionResult("passed", 0, "", "", 0.0))


@pytest.mark.parametrize("stderr,name", [
    ("Traceback...\nAssertionError", "AssertionError"),
    ("RecursionError: maximum recursion depth exceeded", "RecursionError"),
    ("x\njson.decoder.JSONDecodeError: Expecting value", "JSONDecodeError"),
    ("KeyError: 'k'\n\nsome trailing note", "KeyError"),
    ("", None),
])
def test_final_exception(stderr, name):
    assert final_exception(stderr) == name


def test_assertion_guidance_verbatim():
    refined = refine(sandbox("def foo(x):\n    return x + x", "assert foo(4) == 16"))
    assert refined.category == "assertion"
    assert refined.guidance == ASSERTION_GUIDANCE
    assert refined.render().endswith(ASSERTION_GUIDANCE)
    assert 'File "main.py"' in refined.filtered_traceback
    assert not refined.truncated


def test_timeout_guidance_uses_limit():
    refined = refine(failed("", status="timeout", timeout=2.0))
    assert refined.guidance == "Your solution exceeded the 2-second time limit; check for infinite loops or inefficiency."
    assert refined.filtered_traceback == ""
    assert refine(failed("", status="timeout"), timeout=7.5).guidance.startswith("Your solution exceeded the 7.5-second")


def test_library_frames_dropped():
    result = sandbox("import json\njson.loads('{')")
    raw_paths = set(_FRAME_PATH.findall(result.stderr))
    assert len(raw_paths) > 1  # the decoder frames come from the standard library
    refined = refine(result)
    assert set(_FRAME_PATH.findall(refined.filtered_traceback)) == {"main.py"}
    assert "JSONDecodeError" in refined.filtered_traceback


def test_recursion_traceback_condensed():
    result = sandbox(RECURSION_FIXTURE, RECURSION_HARNESS)
    assert result.stderr_length > 100 * 1024
    refined = refine(result, 2000)
    text = refined.render()
    assert len(text) <= 2000
    assert "RecursionError" in text
    assert re.search(r"repeated \d+ more times", text)
    assert refined.truncated
    assert refined.original_length == result.stderr_length


def test_identical_frames_collapse_to_one():
    frame = '  File "main.py", line 2, in r\n    return r(n + 1)'
    stderr = "Traceback (most recent call last):\n" + "\n".join([frame] * 5000) + \
        "\nRecursionError: maximum recursion depth exceeded"
    refined = refine(failed(stderr))
    assert refined.filtered_traceback.count('File "main.py"') == 1
    assert "[above frame repeated 4999 more times]" in refined.filtered_traceback


def test_previous_line_repeated_expanded_then_collapsed():
    stderr = (
        "Traceback (most recent call last):\n"
        '  File "main.py", line 4, in <module>\n    r(0)\n'
        '  File "main.py", line 2, in r\n    return r(n + 1)\n'
        '  File "main.py", line 2, in r\n    return r(n + 1)\n'
        "  [Previous line repeated 996 more times]\n"
        "RecursionError: maximum recursion depth exceeded"
    )
    out = filter_traceback(stderr)
    assert "[above frame repeated 997 more times]" in out
    assert "Previous line" not in out


def test_setup_category_keeps_installer_log():
    result = ExecutionResult("setup_error", 1, "", "ERROR: No matching distribution found for nopkg", 0.0,
                             reason="dependency_install")
    refined = refine(result)
    assert refined.category == "setup"
    assert "nopkg" in refined.filtered_traceback


def test_budget_minimum():
    with pytest.raises(ValueError):
        refine(failed("AssertionError"), 255)


def test_guidance_override(tmp_path):
    path = tmp_path / "g.yaml"
    path.write_text("assertion: Try again.\n")
    table = load_guidance(path)
    assert table["assertion"] == "Try again."
    assert table["syntax"] == DEFAULT_GUIDANCE["syntax"]
    assert refine(failed("AssertionError"), guidance=table).guidance == "Try again."
    path.write_text("bogus: x\n")
    with pytest.raises(ValueError):
        load_guidance(path)


def test_every_category_has_guidance():
    assert set(DEFAULT_GUIDANCE) == set(CATEGORIES)


def test_missing_code_error():
    refined = missing_code_error("completion contains no fenced code block")
    assert "### Code" in refined.render()


# --- properties ----------------------------------------------------------------

_funcs = st.sampled_from(["f", "g", "helper", "a_rather_long_function_name"])
_paths = st.sampled_from(["main.py", "/usr/lib/python3.10/json/decoder.py",
                          "/venv/lib/site-packages/pkg/mod.py", "/tmp/x/main.py"])


@st.composite
def frame(draw, path=None):
    p = path or draw(_paths)
    fn = draw(_funcs)
    line = draw(st.integers(1, 50))
    return f'  File "{p}", line {line}, in {fn}\n    {fn}(x)'


@st.composite
def tracebacks(draw):
    unit = draw(st.lists(frame(), min_size=1, max_size=4))
    reps = draw(st.integers(1, 300))
    frames = draw(st.lists(frame(), max_size=3)) + unit * reps + draw(st.lists(frame(), max_size=3))
    exc = draw(st.sampled_from(["AssertionError", "RecursionError: maximum recursion depth exceeded",
                                "TypeError: bad", "ValueError: x" * draw(st.integers(1, 400))]))
    return "Traceback (most recent call last):\n" + "\n".join(frames) + "\n" + exc


@settings(max_examples=150, deadline=None)
@given(tracebacks(), st.integers(256, 4000))
def test_render_fits_budget(stderr, budget):
    refined = refine(failed(stderr), budget)
    assert len(refined.render()) <= budget
    assert refined.category in CATEGORIES


def _expand(filtered: str) -> list[str]:
    """Undo the repeat markers: the oracle for what the collapse must preserve."""
    frames: list[str] = []
    for line in filtered.splitlines():
        m = re.match(r"  \[above (?:frame|(\d+) frames) repeated (\d+) more times\]$", line)
        if m:
            period = int(m.group(1) or 1)
            frames.extend(frames[-period:] * int(m.group(2)))
        elif line.startswith('  File "'):
            frames.append(line)
        elif line.startswith("    ") and frames:
            frames[-1] += "\n" + line
    return frames


@settings(max_examples=150, deadline=None)
@given(tracebacks())
def test_collapse_is_lossless_for_main_frames(stderr):
    kept = [f for f in re.findall(r'  File "[^"]*", line \d+, in \w+\n    \w+\(x\)', stderr)
            if re.match(r'  File "(main\.py|/tmp/x/main\.py)"', f)]
    assert _expand(filter_traceback(stderr)) == kept
