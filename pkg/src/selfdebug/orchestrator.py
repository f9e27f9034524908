"""The generate / execute / fix loop for one problem, and suite runs over many."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable

from . import errors as error_handler
from .backends import BackendError, CompletionRequest
from .dataset import Problem, assemble_test_harness, problem_needs_hint
from .errors import RefinedError
from .protocol import (
    MissingCodeSection,
    PromptBundle,
    PromptTemplates,
    build_fix_prompt,
    build_generation_prompt,
    parse_response,
)
from .sandbox import ExecutionResult, WorkspaceError, cleanup, prepare_workspace
from .sanitizer import strip_example_calls
from .signature import SignatureError, SignatureHint, infer_signature

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 5
HINT_MODES = ("auto", "always", "never")


@dataclass
class SolverConfig:
    max_attempts: int = MAX_ATTEMPTS
    timeout: float = 10.0
    error_budget: int = error_handler.DEFAULT_BUDGET
    model_name: str = "gpt-3.5-turbo-1106"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    inject_hint: str = "auto"
    keep_artifacts: bool = False
    work_dir: str | None = None
    workers: int = 1
    guidance: dict[str, str] | None = None
    templates: PromptTemplates | None = None

    def __post_init__(self) -> None:
        if self.max_attempts < 0:
            raise ValueError("max_attempts must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.inject_hint not in HINT_MODES:
            raise ValueError(f"inject_hint must be one of {HINT_MODES}")

    def snapshot(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("templates")
        data["guidance_overridden"] = data.pop("guidance") is not None
        return data


@dataclass
class AttemptRecord:
    index: int
    prompt_tokens: int
    completion_tokens: int
    code_digest: str
    code: str
    requirements: list[str]
    execution: ExecutionResult
    refined: RefinedError | None = None
    removed_calls: list[str] = field(default_factory=list)


@dataclass
class SolveOutcome:
    problem_id: str
    solved: bool
    attempts: list[AttemptRecord]
    llm_calls: int
    wall_time: float
    setup_error: str | None = None
    hint_used: bool = False

    @property
    def final_code(self) -> str | None:
        return self.attempts[-1].code if self.attempts else None

    @property
    def total_tokens(self) -> int:
        return sum(a.prompt_tokens + a.completion_tokens for a in self.attempts)


def code_digest(code: str) -> str:
    return hashlib.sha256(code.encode("utf-8")).hexdigest()[:16]


def _wants_hint(problem: Problem, mode: str) -> bool:
    if mode == "always":
        return True
    if mode == "never":
        return False
    return problem_needs_hint(problem)


def solve(
    problem: Problem,
    backend,
    executor,
    config: SolverConfig | None = None,
    on_prompt: Callable[[int, PromptBundle], None] | None = None,
) -> SolveOutcome:
    """Drive one problem through generation and up to ``max_attempts`` fixes."""
    config = config or SolverConfig()
    templates = config.templates or PromptTemplates.default()
    started = time.monotonic()
    harness = assemble_test_harness(problem).body

    hint: SignatureHint | None = None
    if _wants_hint(problem, config.inject_hint):
        try:
            hint = infer_signature(problem)
        except SignatureError as exc:
            logger.info("%s: no signature hint (%s)", problem.id, exc)

    attempts: list[AttemptRecord] = []
    setup_error = None
    prompt = build_generation_prompt(problem, hint, templates)

    for index in range(config.max_attempts + 1):
        if on_prompt is not None:
            on_prompt(index, prompt)
        request = CompletionRequest(
            system_text=prompt.system_text,
            user_text=prompt.user_text,
            model_name=config.model_name,
            temperature=config.temperature,
            max_output_tokens=config.max_output_tokens,
            problem_id=problem.id,
        )
        try:
            completion = backend.complete(request)
        except BackendError as exc:
            setup_error = f"{type(exc).__name__}: {exc}"
            logger.error("%s: %s", problem.id, setup_error)
            break

        refined: RefinedError | None
        try:
            response = parse_response(completion.text)
        except MissingCodeSection as exc:
            code = ""
            requirements: list[str] = []
            removed: list[str] = []
            execution = ExecutionResult("failed", -1, "", str(exc), 0.0, timeout=config.timeout,
                                        reason="missing_code")
            refined = error_handler.missing_code_error(str(exc))
        else:
            sanitized = strip_example_calls(response.code)
            code = sanitized.code
            requirements = list(response.requirements)
            removed = [text for _, text in sanitized.removed]
            try:
                workspace = prepare_workspace(code, harness, requirements, problem.id, index,
                                              base_dir=config.work_dir)
            except WorkspaceError as exc:
                execution = ExecutionResult("setup_error", -1, "", str(exc), 0.0,
                                            timeout=config.timeout, reason="filesystem")
            else:
                try:
                    execution = executor.execute(workspace, config.timeout)
                finally:
                    cleanup(workspace, keep=config.keep_artifacts)
            refined = None
            if execution.status != "passed" and not execution.infrastructure_failure:
                refined = error_handler.refine(
                    execution, config.error_budget, timeout=config.timeout, guidance=config.guidance
                )

        record = AttemptRecord(
            index=index,
            prompt_tokens=completion.prompt_tokens,
            completion_tokens=completion.completion_tokens,
            code_digest=code_digest(code),
            code=code,
            requirements=requirements,
            execution=execution,
            refined=refined,
            removed_calls=removed,
        )
        attempts.append(record)

        if execution.status == "passed":
            break
        if execution.infrastructure_failure:
            setup_error = f"{execution.reason}: {execution.stderr.strip()[:500]}"
            break
        if index == config.max_attempts:
            record.refined = None
            break
        last_code = code or "# (no code was extracted from the previous response)"
        prompt = build_fix_prompt(problem, last_code, refined, hint, templates)

    solved = bool(attempts) and attempts[-1].execution.status == "passed"
    return SolveOutcome(
        problem_id=problem.id,
        solved=solved,
        attempts=attempts,
        llm_calls=len(attempts),
        wall_time=time.monotonic() - started,
        setup_error=setup_error,
        hint_used=hint is not None,
    )


# --- RunLog -----------------------------------------------------------------

VOLATILE_KEYS = frozenset({"duration", "wall_time", "started_at", "finished_at"})


@dataclass
class RunLog:
    config: dict[str, Any]
    outcomes: list[SolveOutcome]


def outcome_to_dict(outcome: SolveOutcome) -> dict[str, Any]:
    return {"type": "outcome", **asdict(outcome)}


def outcome_from_dict(data: dict[str, Any]) -> SolveOutcome:
    attempts = []
    for a in data.get("attempts", []):
        a = dict(a)
        a["execution"] = ExecutionResult(**a["execution"])
        if a.get("refined") is not None:
            a["refined"] = RefinedError(**a["refined"])
        attempts.append(AttemptRecord(**a))
    return SolveOutcome(
        problem_id=data["problem_id"],
        solved=data["solved"],
        attempts=attempts,
        llm_calls=data["llm_calls"],
        wall_time=data.get("wall_time", 0.0),
        setup_error=data.get("setup_error"),
        hint_used=data.get("hint_used", False),
    )


def strip_volatile(value: Any) -> Any:
    """Drop timing fields so logs of repeated runs can be compared."""
    if isinstance(value, dict):
        return {k: strip_volatile(v) for k, v in value.items() if k not in VOLATILE_KEYS}
    if isinstance(value, list):
        return [strip_volatile(v) for v in value]
    return value


def load_runlog(path: str | Path) -> RunLog:
    config: dict[str, Any] = {}
    outcomes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            kind = record.get("type")
            if kind == "config":
                config = {k: v for k, v in record.items() if k != "type"}
            elif kind == "outcome":
                outcomes.append(outcome_from_dict(record))
            else:
                raise ValueError(f"{path}:{lineno}: unknown record type {kind!r}")
    return RunLog(config=config, outcomes=outcomes)


class RunLogWriter:
    """Append outcomes in input order as soon as every earlier one is done."""

    def __init__(self, path: str | Path | None, config: dict[str, Any], total: int) -> None:
        self._pending: dict[int, SolveOutcome] = {}
        self._next = 0
        self._total = total
        self._lock = threading.Lock()
        self._fh = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")
            self._write({"type": "config", **config})

    def _write(self, record: dict[str, Any]) -> None:
        self._fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._fh.flush()

    def add(self, position: int, outcome: SolveOutcome) -> None:
        with self._lock:
            self._pending[position] = outcome
            while self._next in self._pending:
                done = self._pending.pop(self._next)
                if self._fh is not None:
                    self._write(outcome_to_dict(done))
                self._next += 1

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def run_suite(
    problems: Iterable[Problem],
    backend,
    executor,
    config: SolverConfig | None = None,
    log_path: str | Path | None = None,
    extra_config: dict[str, Any] | None = None,
    progress: Callable[[SolveOutcome], None] | None = None,
) -> RunLog:
    problems = list(problems)
    if not problems:
        raise ValueError("run_suite needs at least one problem")
    config = config or SolverConfig()
    snapshot = {
        **(extra_config or {}),
        **config.snapshot(),
        "started_at": datetime.now(timezone.utc).isoformat(),
        "problems": len(problems),
    }
    writer = RunLogWriter(log_path, snapshot, len(problems))
    results: list[SolveOutcome | None] = [None] * len(problems)

    def work(position: int, problem: Problem) -> None:
        outcome = solve(problem, backend, executor, config)
        results[position] = outcome
        writer.add(position, outcome)
        if progress is not None:
            progress(outcome)

    pool = ThreadPoolExecutor(max_workers=config.workers)
    futures = []
    try:
        futures = [pool.submit(work, i, p) for i, p in enumerate(problems)]
        for future in futures:
            future.result()
    except BaseException:
        for future in futures:
            future.cancel()
        pool.shutdown(wait=False, cancel_futures=True)
        writer.close()
        raise
    pool.shutdown(wait=True)
    writer.close()
    return RunLog(config=snapshot, outcomes=[r for r in results if r is not None])
