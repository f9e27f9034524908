"""Benchmark problem loading and test harness assembly.

Supported JSONL layouts (one record per line, UTF-8):

- ``humaneval``: ``{task_id, prompt, test, entry_point}``
- ``mbpp``: ``{task_id, text, test_list}`` (``prompt`` is accepted in place of
  ``text`` for the sanitized release; ``test_setup_code`` is honoured)
- ``bigcodebench_lite``: ``{task_id, instruct_prompt | complete_prompt, test,
  entry_point?}``
- ``custom``: ``{id, description, tests, entry_point?}``

The ET variants of HumanEval/MBPP share the base schemas.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

logger = logging.getLogger(__name__)

FORMATS = ("humaneval", "mbpp", "bigcodebench_lite", "custom")
BIGCODEBENCH_SPLITS = ("instruct", "complete")


class DatasetError(ValueError):
    """Raised when a dataset file cannot be turned into problems."""


@dataclass(frozen=True)
class Problem:
    id: str
    description: str
    tests: tuple[str, ...]
    entry_point: str | None = None
    source_format: str = "custom"
    test_setup: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise DatasetError("problem id must be non-empty")
        if not self.tests:
            raise DatasetError(f"problem {self.id!r} has no tests")
        if self.source_format not in FORMATS:
            raise DatasetError(f"unknown source format {self.source_format!r}")
        if self.source_format == "humaneval" and not self.entry_point:
            raise DatasetError(f"humaneval problem {self.id!r} lacks an entry_point")


@dataclass(frozen=True)
class TestHarnessText:
    body: str


def _require(record: dict[str, Any], key: str) -> Any:
    if key not in record or record[key] is None:
        raise KeyError(key)
    return record[key]


def _record_to_problem(record: dict[str, Any], fmt: str, split: str) -> Problem:
    if fmt == "humaneval":
        return Problem(
            id=str(_require(record, "task_id")),
            description=str(_require(record, "prompt")),
            tests=(str(_require(record, "test")),),
            entry_point=str(_require(record, "entry_point")),
            source_format=fmt,
        )
    if fmt == "mbpp":
        if "text" in record:
            description = record["text"]
        elif "prompt" in record:
            description = record["prompt"]
        else:
            raise KeyError("text")
        tests = _require(record, "test_list")
        if not isinstance(tests, list):
            raise DatasetError("test_list must be a list")
        return Problem(
            id=str(_require(record, "task_id")),
            description=str(description),
            tests=tuple(str(t) for t in tests),
            source_format=fmt,
            test_setup=str(record.get("test_setup_code") or ""),
        )
    if fmt == "bigcodebench_lite":
        key = f"{split}_prompt"
        return Problem(
            id=str(_require(record, "task_id")),
            description=str(_require(record, key)),
            tests=(str(_require(record, "test")),),
            entry_point=record.get("entry_point") or None,
            source_format=fmt,
        )
    tests = _require(record, "tests")
    if not isinstance(tests, list):
        raise DatasetError("tests must be a list")
    return Problem(
        id=str(_require(record, "id")),
        description=str(_require(record, "description")),
        tests=tuple(str(t) for t in tests),
        entry_point=record.get("entry_point") or None,
        source_format="custom",
    )


def load_problems(
    path: str | Path, fmt: str, *, split: str = "instruct"
) -> list[Problem]:
    """Read every record of a JSONL dataset file.

    All malformed lines are collected and reported together in a single
    ``DatasetError`` so a broken file is never partially loaded.
    """
    if fmt not in FORMATS:
        raise DatasetError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    if split not in BIGCODEBENCH_SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc

    problems: list[Problem] = []
    errors: list[str] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise DatasetError("record is not a JSON object")
            problem = _record_to_problem(record, fmt, split)
        except json.JSONDecodeError as exc:
            errors.append(f"{path}:{lineno}: invalid JSON ({exc.msg})")
            continue
        except KeyError as exc:
            errors.append(f"{path}:{lineno}: missing field {exc.args[0]!r} for format {fmt}")
            continue
        except DatasetError as exc:
            errors.append(f"{path}:{lineno}: {exc}")
            continue
        if problem.id in seen:
            errors.append(
                f"{path}:{lineno}: duplicate id {problem.id!r} (first seen on line {seen[problem.id]})"
            )
            continue
        seen[problem.id] = lineno
        problems.append(problem)

    if errors:
        raise DatasetError("\n".join(errors))
    if not problems:
        logger.warning("dataset %s contains no problems", path)
    return problems


def problem_to_record(problem: Problem, *, split: str = "instruct") -> dict[str, Any]:
    """Inverse of the loader mapping for the problem's own source format."""
    fmt = problem.source_format
    if fmt == "humaneval":
        return {
            "task_id": problem.id,
            "prompt": problem.description,
            "test": problem.tests[0],
            "entry_point": problem.entry_point,
        }
    if fmt == "mbpp":
        record: dict[str, Any] = {
            "task_id": problem.id,
            "text": problem.description,
            "test_list": list(problem.tests),
        }
        if problem.test_setup:
            record["test_setup_code"] = problem.test_setup
        return record
    if fmt == "bigcodebench_lite":
        return {
            "task_id": problem.id,
            f"{split}_prompt": problem.description,
            "test": problem.tests[0],
            "entry_point": problem.entry_point,
        }
    record = {"id": problem.id, "description": problem.description, "tests": list(problem.tests)}
    if problem.entry_point:
        record["entry_point"] = problem.entry_point
    return record


def dump_problems(problems: Iterable[Problem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for problem in problems:
            fh.write(json.dumps(problem_to_record(problem), ensure_ascii=False) + "\n")


def assemble_test_harness(problem: Problem) -> TestHarnessText:
    if problem.source_format == "humaneval":
        body = f"{problem.tests[0].rstrip()}\n\n\ncheck({problem.entry_point})"
    elif problem.source_format == "bigcodebench_lite":
        body = (
            f"{problem.tests[0].rstrip()}\n\n\n"
            "import unittest as _unittest\n"
            "_unittest.main(argv=['main'], exit=True)"
        )
    else:
        body = "\n".join(problem.tests)
        if problem.test_setup:
            body = f"{problem.test_setup.rstrip()}\n{body}"
    return TestHarnessText(body=body)


def problem_needs_hint(problem: Problem) -> bool:
    """Datasets without a signature in their description get a signature hint."""
    return problem.source_format in ("mbpp", "custom")

