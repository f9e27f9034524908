from __future__ import annotations

import json
import os
from pathlib import Path

import pytest
from hypothesis import settings

from selfdebug.backends import MockBackend
from selfdebug.dataset import Problem
from selfdebug.protocol import format_response
from selfdebug.sandbox import SubprocessExecutor

# reproducible property runs; HYPOTHESIS_PROFILE=explore for fresh examples
settings.register_profile("repro", derandomize=True, deadline=None)
settings.register_profile("explore", deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repro"))

SQUARE_GOOD = "def square(x):\n    return x * x"
SQUARE_BAD = "def square(x):\n    return x + x"


def custom_problem(pid: str = "sq", fn: str = "square") -> Problem:
    return Problem(
        id=pid,
        description=f"Write a function {fn}(x) that returns x squared.",
        tests=(f"assert {fn}(4) == 16", f"assert {fn}(3) == 9"),
        source_format="custom",
    )


def square_code(fn: str, good: bool, variant: int = 0) -> str:
    body = "x * x" if good else f"x + x + {variant}"
    return f"def {fn}(x):\n    return {body}"


def scripted(fn: str, failures: int) -> list[str]:
    """``failures`` wrong completions, each distinct, followed by a correct one."""
    out = [format_response(square_code(fn, False, k)) for k in range(failures)]
    out.append(format_response(square_code(fn, True)))
    return out


def toy_suite(n: int = 10) -> tuple[list[Problem], dict[str, list[str]]]:
    """``n`` problems; problem k needs ``k % 7`` fixes (6 means never solved)."""
    problems, script = [], {}
    for k in range(n):
        fn = f"sq{k}"
        pid = f"toy/{k}"
        problems.append(custom_problem(pid, fn))
        fails = k % 7
        script[pid] = scripted(fn, fails)[:6] if fails < 6 else [
            format_response(square_code(fn, False, j)) for j in range(6)
        ]
    return problems, script


def write_jsonl(path: Path, records: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def problem_record(p: Problem) -> dict:
    return {"id": p.id, "description": p.description, "tests": list(p.tests)}


@pytest.fixture
def executor() -> SubprocessExecutor:
    return SubprocessExecutor(timeout=5)


@pytest.fixture
def toy_files(tmp_path: Path) -> tuple[Path, Path]:
    problems, script = toy_suite(10)
    data = write_jsonl(tmp_path / "toy.jsonl", [problem_record(p) for p in problems])
    mock = tmp_path / "script.json"
    mock.write_text(json.dumps({"problems": script}), encoding="utf-8")
    return data, mock


@pytest.fixture
def toy_backend() -> tuple[list[Problem], MockBackend]:
    problems, script = toy_suite(10)
    return problems, MockBackend(problems=script)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: l.split("]")[0][-2:]):
            terminalreporter.write_line(line)
