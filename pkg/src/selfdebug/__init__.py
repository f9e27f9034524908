"""Two-agent self-debugging code generation harness.

A completion backend writes code, a sandbox runs it against the problem's
tests, and failures are refined into short feedback for up to five fix
attempts.
"""

from .analytics import (
    AttemptCounts,
    DecayFit,
    InfluencePoint,
    InsufficientPoints,
    fit_decay,
    influence,
    summarize,
    tally,
)
from .backends import (
    BackendUnavailable,
    CompletionRequest,
    CompletionResult,
    HTTPBackend,
    MockBackend,
    RecordingBackend,
    ReplayBackend,
    ReplayExhausted,
)
from .dataset import Problem, assemble_test_harness, load_problems
from .errors import RefinedError, classify, refine
from .orchestrator import RunLog, SolveOutcome, SolverConfig, load_runlog, run_suite, solve
from .protocol import ModelResponse, MissingCodeSection, build_fix_prompt, build_generation_prompt, parse_response
from .sandbox import ContainerExecutor, ExecutionResult, SubprocessExecutor, cleanup, prepare_workspace
from .sanitizer import SanitizedCode, scan_definitions, strip_example_calls
from .signature import CallShape, SignatureError, SignatureHint, infer_signature, parse_assert, render_hint

__version__ = "0.1.0"
