from __future__ import annotations

import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfdebug.dataset import (
    DatasetError,
    Problem,
    assemble_test_harness,
    dump_problems,
    load_problems,
    problem_needs_hint,
)

from .conftest import write_jsonl

HUMANEVAL_RECORD = {
    "task_id": "HumanEval/0",
    "prompt": "from typing import List\n\ndef has_close_elements(numbers: List[float], threshold: float) -> bool:\n",
    "canonical_solution": "    return False\n",
    "test": "def check(candidate):\n    assert candidate([1.0, 2.0], 0.5) == False\n",
    "entry_point": "has_close_elements",
}
MBPP_RECORD = {
    "task_id": 11,
    "text": "Write a python function foo that squares a number.",
    "code": "def foo(x): return x*x",
    "test_list": ["assert foo(4) == 16"],
    "test_setup_code": "",
    "challenge_test_list": [],
}
BCB_RECORD = {
    "task_id": "BigCodeBench/1",
    "complete_prompt": "import random\ndef task_func(n):\n    \"\"\"doc\"\"\"\n",
    "instruct_prompt": "Write a function task_func(n) returning n.",
    "test": "import unittest\nclass TestCases(unittest.TestCase):\n    def test_1(self):\n        self.assertEqual(task_func(1), 1)\n",
    "entry_point": "task_func",
}


def test_humaneval_record(tmp_path):
    [p] = load_problems(write_jsonl(tmp_path / "he.jsonl", [HUMANEVAL_RECORD]), "humaneval")
    assert p.id == "HumanEval/0"
    assert p.entry_point == "has_close_elements"
    assert p.description == HUMANEVAL_RECORD["prompt"]
    assert p.tests == (HUMANEVAL_RECORD["test"],)


def test_mbpp_record(tmp_path):
    [p] = load_problems(write_jsonl(tmp_path / "mbpp.jsonl", [MBPP_RECORD]), "mbpp")
    assert p.id == "11"
    assert p.tests == ("assert foo(4) == 16",)
    assert p.entry_point is None
    assert problem_needs_hint(p)


@pytest.mark.parametrize("split", ["instruct", "complete"])
def test_bigcodebench_split(tmp_path, split):
    [p] = load_problems(write_jsonl(tmp_path / "bcb.jsonl", [BCB_RECORD]), "bigcodebench_lite", split=split)
    assert p.description == BCB_RECORD[f"{split}_prompt"]
    assert not problem_needs_hint(p)


def test_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_problems(path, "custom") == []
    assert "no problems" in caplog.text


def test_all_bad_lines_reported_together(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"id": "a", "description": "d", "tests": ["assert 1"]}\n'
        "not json\n"
        '{"id": "b", "description": "d"}\n'
        '{"id": "a", "description": "d", "tests": ["assert 1"]}\n'
    )
    with pytest.raises(DatasetError) as info:
        load_problems(path, "custom")
    msg = str(info.value)
    assert ":2: invalid JSON" in msg
    assert ":3: missing field 'tests'" in msg
    assert ":4: duplicate id 'a'" in msg


def test_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="nope.jsonl"):
        load_problems(tmp_path / "nope.jsonl", "custom")


def test_unknown_format(tmp_path):
    with pytest.raises(DatasetError):
        load_problems(tmp_path / "x.jsonl", "apps")


def test_humaneval_needs_entry_point():
    with pytest.raises(DatasetError):
        Problem(id="x", description="d", tests=("t",), source_format="humaneval")


def test_harness_single_and_order():
    one = Problem(id="a", description="d", tests=("assert foo(4) == 16",))
    assert assemble_test_harness(one).body == "assert foo(4) == 16"
    two = Problem(id="b", description="d", tests=("assert a(1)==1", "assert a(2)==4"))
    assert assemble_test_harness(two).body.splitlines() == ["assert a(1)==1", "assert a(2)==4"]


def test_harness_humaneval_calls_check(tmp_path):
    [p] = load_problems(write_jsonl(tmp_path / "he.jsonl", [HUMANEVAL_RECORD]), "humaneval")
    body = assemble_test_harness(p).body
    assert body.rstrip().endswith("check(has_close_elements)")
    # the harness runs against a correct solution
    ns: dict = {}
    exec("def has_close_elements(numbers, threshold):\n    return False\n" + body, ns)


def test_harness_setup_code_first():
    p = Problem(id="a", description="d", tests=("assert f() == 1",), source_format="mbpp",
                test_setup="def f():\n    return 1")
    body = assemble_test_harness(p).body
    assert body.index("def f()") < body.index("assert f()")


def test_harness_is_pure():
    p = Problem(id="a", description="d", tests=("assert a(1)==1",))
    assert assemble_test_harness(p) == assemble_test_harness(p)


_ident = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)
_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=40)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(_ident, _text, st.lists(_text, min_size=1, max_size=3)),
                max_size=5, unique_by=lambda t: t[0]))
def test_custom_round_trip(tmp_path_factory, rows):
    problems = [Problem(id=i, description=d, tests=tuple(t)) for i, d, t in rows]
    path = tmp_path_factory.mktemp("rt") / "p.jsonl"
    dump_problems(problems, path)
    assert load_problems(path, "custom") == problems


def test_mbpp_round_trip(tmp_path):
    src = write_jsonl(tmp_path / "a.jsonl", [MBPP_RECORD])
    problems = load_problems(src, "mbpp")
    dump_problems(problems, tmp_path / "b.jsonl")
    assert load_problems(tmp_path / "b.jsonl", "mbpp") == problems
