"""Command-line entry point.

Subcommands::

    selfdebug run      --dataset toy.jsonl --format custom --backend mock --mock-script s.json
    selfdebug solve    --description "..." --test "assert f(1) == 2" --backend http
    selfdebug replay   transcript.jsonl --dataset toy.jsonl --format custom
    selfdebug analyze  runlog.jsonl --fit --out-dir report/
    selfdebug analyze  --from-table 92.0,3.8,1.9,1.1,1.1,0.2 --n 100 --fit

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analytics
from .backends import BackendError, RecordingBackend, make_backend
from .config import ConfigError, RunConfig, load_file, resolve
from .dataset import DatasetError, Problem, load_problems
from .errors import load_guidance
from .orchestrator import SolverConfig, load_runlog, run_suite, solve, strip_volatile, outcome_to_dict
from .protocol import PromptTemplates
from .sandbox import kill_running, make_executor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

logger = logging.getLogger("selfdebug")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser, dataset: bool = True) -> None:
    p.add_argument("--config", help="YAML config file")
    if dataset:
        p.add_argument("--dataset", help="JSONL dataset path")
        p.add_argument("--format", choices=["humaneval", "mbpp", "bigcodebench_lite", "custom"])
        p.add_argument("--split", choices=["instruct", "complete"], help="BigCodeBench prompt split")
    p.add_argument("--backend", choices=["mock", "http", "replay"])
    p.add_argument("--mock-script", dest="mock_script")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-output-tokens", dest="max_output_tokens", type=int)
    p.add_argument("--max-attempts", dest="max_attempts", type=int)
    p.add_argument("--timeout", type=float, help="seconds per execution")
    p.add_argument("--workers", type=int)
    p.add_argument("--error-budget", dest="error_budget", type=int)
    p.add_argument("--exec", dest="exec_backend", choices=["subprocess", "container"])
    p.add_argument("--image", help="container image for --exec container")
    p.add_argument("--output", help="RunLog JSONL path")
    p.add_argument("--keep-artifacts", dest="keep_artifacts", action="store_const", const=True)
    p.add_argument("--record-transcript", dest="record_transcript")
    p.add_argument("--inject-hint", dest="inject_hint", choices=["auto", "always", "never"])
    p.add_argument("--prompt-dir", dest="prompt_dir")
    p.add_argument("--guidance-file", dest="guidance_file")
    p.add_argument("--work-dir", dest="work_dir")
    p.add_argument("--max-concurrency", dest="max_concurrency", type=int,
                   help="concurrent HTTP requests")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selfdebug", description="Self-debugging code generation harness")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="solve every problem of a dataset")
    _add_run_flags(run)

    one = sub.add_parser("solve", help="solve a single problem given inline")
    _add_run_flags(one, dataset=False)
    one.add_argument("--description", required=True)
    one.add_argument("--test", action="append", required=True, dest="tests")
    one.add_argument("--entry-point", dest="entry_point")
    one.add_argument("--id", dest="problem_id", default="inline")

    replay = sub.add_parser("replay", help="re-run a dataset against a recorded transcript")
    replay.add_argument("transcript")
    _add_run_flags(replay)
    replay.add_argument("--compare", help="original RunLog; exit 2 if outcomes differ")

    analyze = sub.add_parser("analyze", help="per-attempt influence, decay fit and summary")
    analyze.add_argument("logs", nargs="*")
    analyze.add_argument("--from-table", dest="from_table",
                         help="comma-separated per-attempt solved counts or percentages")
    analyze.add_argument("--n", type=float, default=None, help="problem count for --from-table")
    analyze.add_argument("--fit", action="store_true")
    analyze.add_argument("--pool", action="store_true",
                         help="fit every point of several logs instead of per-attempt means")
    analyze.add_argument("--max-attempts", dest="max_attempts", type=int, default=5)
    analyze.add_argument("--out-dir", dest="out_dir")
    return parser


_CONFIG_KEYS = {
    "dataset", "format", "split", "backend", "mock_script", "model", "temperature",
    "max_output_tokens", "max_attempts", "timeout", "workers", "error_budget",
    "exec_backend", "image", "output", "keep_artifacts", "record_transcript",
    "inject_hint", "prompt_dir", "guidance_file", "work_dir", "max_concurrency", "transcript",
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS}
    file_values = load_file(args.config) if getattr(args, "config", None) else {}
    return resolve(flags, None, file_values)


def solver_config(cfg: RunConfig) -> SolverConfig:
    templates = PromptTemplates.from_dir(cfg.prompt_dir) if cfg.prompt_dir else None
    guidance = load_guidance(cfg.guidance_file) if cfg.guidance_file else None
    return SolverConfig(
        max_attempts=cfg.max_attempts,
        timeout=cfg.timeout,
        error_budget=cfg.error_budget,
        model_name=cfg.model,
        temperature=cfg.temperature,
        max_output_tokens=cfg.max_output_tokens,
        inject_hint=cfg.inject_hint,
        keep_artifacts=cfg.keep_artifacts,
        work_dir=cfg.work_dir,
        workers=cfg.workers,
        guidance=guidance,
        templates=templates,
    )


def _backend(cfg: RunConfig):
    try:
        backend = make_backend(
            cfg.backend,
            mock_script=cfg.mock_script,
            transcript=cfg.transcript,
            **({"max_concurrency": cfg.max_concurrency} if cfg.backend == "http" else {}),
        )
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load backend input: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.record_transcript:
        backend = RecordingBackend(backend, cfg.record_transcript)
    return backend


def _executor(cfg: RunConfig):
    kwargs = {"timeout": cfg.timeout}
    if cfg.exec_backend == "container":
        kwargs["image"] = cfg.image
    return make_executor(cfg.exec_backend, **kwargs)


def _load(cfg: RunConfig) -> list[Problem]:
    if not cfg.dataset:
        raise ConfigError("no dataset given (--dataset)")
    if not Path(cfg.dataset).exists():
        raise ConfigError(f"dataset file not found: {cfg.dataset}")
    return load_problems(cfg.dataset, cfg.format, split=cfg.split)


def _run_dataset(cfg: RunConfig) -> int:
    problems = _load(cfg)
    if not problems:
        print(f"no problems in {cfg.dataset}", file=sys.stderr)
        return EXIT_OK
    backend = _backend(cfg)
    executor = _executor(cfg)
    extra = {"dataset": cfg.dataset, "format": cfg.format, "backend": cfg.backend,
             "exec_backend": cfg.exec_backend}
    try:
        log = run_suite(problems, backend, executor, solver_config(cfg), log_path=cfg.output,
                        extra_config=extra)
    finally:
        if isinstance(backend, RecordingBackend):
            backend.close()
    print(analytics.format_summary(analytics.summarize(log)))
    print(f"RunLog written to {cfg.output}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    return _run_dataset(config_from_args(args))


def cmd_replay(args: argparse.Namespace) -> int:
    args.backend = "replay"
    cfg = config_from_args(args)
    problems = _load(cfg)
    backend = _backend(cfg)
    log = run_suite(problems, backend, _executor(cfg), solver_config(cfg), log_path=cfg.output,
                    extra_config={"dataset": cfg.dataset, "backend": "replay"})
    aborted = [o for o in log.outcomes if o.setup_error and "ReplayExhausted" in o.setup_error]
    print(analytics.format_summary(analytics.summarize(log)))
    if aborted:
        print(f"ReplayExhausted for {len(aborted)} problem(s): "
              + ", ".join(o.problem_id for o in aborted), file=sys.stderr)
        return EXIT_RUNTIME
    if args.compare:
        original = load_runlog(args.compare)
        ours = [strip_volatile(outcome_to_dict(o)) for o in log.outcomes]
        theirs = [strip_volatile(outcome_to_dict(o)) for o in original.outcomes]
        if ours != theirs:
            print("replayed outcomes differ from the original run", file=sys.stderr)
            return EXIT_RUNTIME
        print("replay matches the original run")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    problem = Problem(
        id=args.problem_id,
        description=args.description,
        tests=tuple(args.tests),
        entry_point=args.entry_point,
        source_format="custom",
    )
    backend = _backend(cfg)
    outcome = solve(problem, backend, _executor(cfg), solver_config(cfg))
    if isinstance(backend, RecordingBackend):
        backend.close()
    if outcome.solved:
        print(f"solved at attempt {outcome.attempts[-1].index} ({outcome.llm_calls} LLM calls)")
        print(outcome.final_code)
        return EXIT_OK
    print(f"not solved after {outcome.llm_calls} LLM calls")
    for attempt in outcome.attempts:
        print(f"--- attempt {attempt.index}: {attempt.execution.status}")
        if attempt.refined is not None:
            print(attempt.refined.render())
    if outcome.setup_error:
        print(f"setup error: {outcome.setup_error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    if bool(args.logs) == bool(args.from_table):
        raise UsageError("give either RunLog paths or --from-table")
    summary = None
    sd = None
    if args.from_table:
        if args.n is None:
            raise UsageError("--from-table needs --n")
        try:
            values = [v.strip() for v in args.from_table.split(",") if v.strip()]
            counts = analytics.AttemptCounts.from_values(values, repr(args.n) if args.n % 1 else int(args.n),
                                                               lenient=True)
        except (ValueError, ArithmeticError) as exc:
            raise UsageError(f"bad --from-table values: {exc}") from exc
        points = analytics.influence(counts)
        fit_input = points
    else:
        logs = [load_runlog(p) for p in args.logs]
        series = [analytics.influence(analytics.tally(log, args.max_attempts)) for log in logs]
        if len(logs) == 1:
            points = series[0]
            fit_input = points
            summary = analytics.summarize(logs[0])
        else:
            counts, sd = analytics.combine_counts([analytics.tally(l, args.max_attempts) for l in logs])
            points = analytics.influence(counts)
            fit_input = analytics.mean_influence(series, pool=args.pool)
            summary = analytics.summarize([o for log in logs for o in log.outcomes])

    table = analytics.influence_table(points, sd)
    print(table, end="")
    fit = None
    if args.fit:
        fit = analytics.fit_decay(fit_input)
        print(analytics.dumps(fit))
    if summary is not None:
        print(analytics.format_summary(summary))

    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "influence.csv").write_text(table, encoding="utf-8")
        if fit is not None:
            (out / "fit.json").write_text(analytics.dumps(fit) + "\n", encoding="utf-8")
        if summary is not None:
            (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "solve": cmd_solve, "replay": cmd_replay, "analyze": cmd_analyze}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except analytics.InsufficientPoints as exc:
        print(f"InsufficientPoints: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        kill_running()
        print("interrupted; completed outcomes were flushed to the log", file=sys.stderr)
        return EXIT_RUNTIME
    except (BackendError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
