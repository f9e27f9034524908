"""Workspace materialisation and isolated execution of generated code.

Two backends share one interface:

- ``SubprocessExecutor`` runs ``main.py`` with a fresh interpreter in a
  temporary directory and a scrubbed environment (no container daemon needed).
- ``ContainerExecutor`` runs the static ``entry.sh`` inside an OCI container
  with networking disabled.

Requirements are installed once per distinct requirement set and reused for
the rest of the run.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

logger = logging.getLogger(__name__)

STATUSES = ("passed", "failed", "timeout", "setup_error")
STREAM_CAP = 64 * 1024
DEFAULT_TIMEOUT = 10.0
GRACE = 1.0
MAIN_FILE = "main.py"
REQUIREMENTS_FILE = "requirements.txt"
ELISION = "\n[... {n} bytes elided ...]\n"


class WorkspaceError(OSError):
    """The workspace could not be written."""


@dataclass
class ExecutionResult:
    status: str
    exit_code: int
    stdout: str
    stderr: str
    duration: float
    stdout_length: int = 0
    stderr_length: int = 0
    timeout: float | None = None
    reason: str = ""

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def infrastructure_failure(self) -> bool:
        """Setup errors the model cannot fix (anything but a bad requirement)."""
        return self.status == "setup_error" and self.reason != "dependency_install"


@dataclass
class Workspace:
    root: Path
    main_file: Path
    requirements_file: Path
    problem_id: str
    attempt_index: int
    requirements: tuple[str, ...] = ()


def _safe_id(problem_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", problem_id)[:60] or "problem"


def main_file_text(code: str, harness: str) -> str:
    return f"{code.rstrip()}\n\n{harness.rstrip()}\n"


def prepare_workspace(
    code: str,
    harness: str,
    requirements: Sequence[str],
    problem_id: str,
    attempt_index: int,
    base_dir: str | Path | None = None,
) -> Workspace:
    if not 0 <= attempt_index:
        raise ValueError("attempt_index must be non-negative")
    try:
        if base_dir is not None:
            Path(base_dir).mkdir(parents=True, exist_ok=True)
        root = Path(
            tempfile.mkdtemp(prefix=f"{_safe_id(problem_id)}-a{attempt_index}-", dir=base_dir)
        )
        main_file = root / MAIN_FILE
        req_file = root / REQUIREMENTS_FILE
        main_file.write_text(main_file_text(code, harness), encoding="utf-8")
        req_file.write_text("".join(f"{r}\n" for r in requirements), encoding="utf-8")
    except OSError as exc:
        raise WorkspaceError(f"cannot prepare workspace: {exc}") from exc
    return Workspace(root, main_file, req_file, problem_id, attempt_index, tuple(requirements))


def cleanup(workspace: Workspace, keep: bool = False) -> None:
    if keep:
        return
    try:
        shutil.rmtree(workspace.root)
    except FileNotFoundError:
        pass
    except OSError as exc:
        logger.warning("could not remove %s: %s", workspace.root, exc)


class _CappedReader(threading.Thread):
    """Drain a pipe keeping only the first and last bytes of the stream."""

    def __init__(self, stream, cap: int = STREAM_CAP) -> None:
        super().__init__(daemon=True)
        self.stream = stream
        self.head_cap = cap // 4
        self.tail_cap = cap - self.head_cap - len(ELISION.format(n=10**12))
        self.head = bytearray()
        self.tail: deque[bytes] = deque()
        self.tail_size = 0
        self.total = 0

    def run(self) -> None:
        try:
            while True:
                chunk = self.stream.read1(65536) if hasattr(self.stream, "read1") else self.stream.read(65536)
                if not chunk:
                    break
                self.total += len(chunk)
                room = self.head_cap - len(self.head)
                if room > 0:
                    self.head += chunk[:room]
                    chunk = chunk[room:]
                if chunk:
                    self.tail.append(chunk)
                    self.tail_size += len(chunk)
                    while self.tail_size - len(self.tail[0]) >= self.tail_cap:
                        self.tail_size -= len(self.tail.popleft())
        except (OSError, ValueError):
            pass

    def text(self) -> str:
        tail = b"".join(self.tail)
        if len(tail) > self.tail_cap:
            tail = tail[-self.tail_cap:]
        head = bytes(self.head)
        if self.total - len(head) - len(tail) > 0:
            # cut on line boundaries so no traceback line is half kept
            nl = head.rfind(b"\n")
            head = head[: nl + 1] if nl != -1 else head
            nl = tail.find(b"\n")
            tail = tail[nl + 1 :] if nl != -1 else tail
            elided = self.total - len(head) - len(tail)
            data = head + ELISION.format(n=elided).lstrip("\n").encode() + tail
        else:
            data = head + tail
        return data.decode("utf-8", errors="replace")


@dataclass
class _RawRun:
    exit_code: int
    stdout: str
    stderr: str
    stdout_length: int
    stderr_length: int
    duration: float
    timed_out: bool


class _ProcessRegistry:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._procs: set[subprocess.Popen] = set()

    def add(self, proc: subprocess.Popen) -> None:
        with self._lock:
            self._procs.add(proc)

    def discard(self, proc: subprocess.Popen) -> None:
        with self._lock:
            self._procs.discard(proc)

    def kill_all(self) -> None:
        with self._lock:
            procs = list(self._procs)
        for proc in procs:
            _kill_group(proc)


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass
    except OSError:
        proc.kill()


_RUNNING = _ProcessRegistry()


def kill_running() -> None:
    """Kill every process started by any executor (used on Ctrl-C)."""
    _RUNNING.kill_all()


def _run(
    cmd: Sequence[str],
    *,
    cwd: Path | None,
    env: dict[str, str] | None,
    timeout: float,
    on_timeout=None,
) -> _RawRun:
    start = time.monotonic()
    proc = subprocess.Popen(
        list(cmd),
        cwd=cwd,
        env=env,
        stdin=subprocess.DEVNULL,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        start_new_session=True,
    )
    _RUNNING.add(proc)
    out_reader = _CappedReader(proc.stdout)
    err_reader = _CappedReader(proc.stderr)
    out_reader.start()
    err_reader.start()
    timed_out = False
    try:
        proc.wait(timeout=timeout)
    except subprocess.TimeoutExpired:
        timed_out = True
        if on_timeout is not None:
            on_timeout()
        _kill_group(proc)
        proc.wait()
    finally:
        _RUNNING.discard(proc)
    out_reader.join(GRACE / 2)
    err_reader.join(GRACE / 2)
    duration = time.monotonic() - start
    return _RawRun(
        exit_code=proc.returncode,
        stdout=out_reader.text(),
        stderr=err_reader.text(),
        stdout_length=out_reader.total,
        stderr_length=err_reader.total,
        duration=duration,
        timed_out=timed_out,
    )


def _digest(requirements: Sequence[str]) -> str:
    joined = "\n".join(sorted(set(requirements)))
    return hashlib.sha256(joined.encode()).hexdigest()[:16]


class _DependencyCache:
    """One install per distinct requirement set; failures are cached too."""

    def __init__(self, root: Path | None) -> None:
        self.root = Path(root) if root else Path(tempfile.mkdtemp(prefix="selfdebug-deps-"))
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self._results: dict[str, tuple[bool, str]] = {}

    def ensure(self, requirements: Sequence[str], install) -> tuple[Path, bool, str]:
        key = _digest(requirements)
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        target = self.root / key
        with lock:
            if key not in self._results:
                target.mkdir(parents=True, exist_ok=True)
                self._results[key] = install(target)
        ok, log = self._results[key]
        return target, ok, log


class SubprocessExecutor:
    """Run ``main.py`` with a fresh interpreter process and a scrubbed environment."""

    name = "subprocess"

    def __init__(
        self,
        timeout: float = DEFAULT_TIMEOUT,
        python: str = sys.executable,
        install_command: Sequence[str] | None = None,
        deps_dir: str | Path | None = None,
        install_timeout: float = 600.0,
    ) -> None:
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.timeout = timeout
        self.python = python
        self.install_command = list(install_command) if install_command else [
            python, "-m", "pip", "install", "--quiet", "--disable-pip-version-check",
            "--no-warn-script-location",
        ]
        self.install_timeout = install_timeout
        self._deps = _DependencyCache(deps_dir)

    def _install(self, workspace: Workspace):
        def install(target: Path) -> tuple[bool, str]:
            cmd = [*self.install_command, "--target", str(target), "-r", str(workspace.requirements_file)]
            raw = _run(cmd, cwd=workspace.root, env=None, timeout=self.install_timeout)
            ok = raw.exit_code == 0 and not raw.timed_out
            return ok, raw.stderr or raw.stdout
        return install

    def _env(self, workspace: Workspace, deps: Path | None) -> dict[str, str]:
        env = {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "HOME": str(workspace.root),
            "LANG": "C.UTF-8",
            "PYTHONHASHSEED": "0",
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONIOENCODING": "utf-8",
            "PYTHONUNBUFFERED": "1",
        }
        if deps is not None:
            env["PYTHONPATH"] = str(deps)
        return env

    def execute(self, workspace: Workspace, timeout: float | None = None) -> ExecutionResult:
        timeout = self.timeout if timeout is None else timeout
        deps = None
        if workspace.requirements:
            deps, ok, log = self._deps.ensure(workspace.requirements, self._install(workspace))
            if not ok:
                return ExecutionResult(
                    "setup_error", 1, "", log[-STREAM_CAP:], 0.0,
                    stderr_length=len(log), timeout=timeout, reason="dependency_install",
                )
        try:
            raw = _run(
                [self.python, "-s", MAIN_FILE],
                cwd=workspace.root,
                env=self._env(workspace, deps),
                timeout=timeout,
            )
        except OSError as exc:
            return ExecutionResult(
                "setup_error", -1, "", str(exc), 0.0, timeout=timeout, reason="engine_unavailable"
            )
        return _to_result(raw, timeout, str(workspace.root))


def _to_result(raw: _RawRun, timeout: float, *prefixes: str) -> ExecutionResult:
    def normalize(text: str) -> str:
        for prefix in prefixes:
            text = text.replace(prefix.rstrip("/") + "/", "")
        return text

    if raw.timed_out:
        status = "timeout"
    elif raw.exit_code == 0:
        status = "passed"
    else:
        status = "failed"
    return ExecutionResult(
        status=status,
        exit_code=raw.exit_code,
        stdout=normalize(raw.stdout),
        stderr=normalize(raw.stderr),
        duration=raw.duration,
        stdout_length=raw.stdout_length,
        stderr_length=raw.stderr_length,
        timeout=timeout,
    )


def entry_script_path() -> Path:
    return Path(str(resources.files("selfdebug").joinpath("assets", "entry.sh")))


class ContainerExecutor:
    """Run the entry script inside an OCI container via the engine CLI.

    The run phase has networking disabled; installs happen in a separate
    container that writes into the shared dependency cache.
    """

    name = "container"

    def __init__(
        self,
        timeout: float = DEFAULT_TIMEOUT,
        image: str = "python:3.11-slim",
        engine: str = "docker",
        deps_dir: str | Path | None = None,
        memory: str | None = None,
        cpus: str | None = None,
        install_timeout: float = 600.0,
    ) -> None:
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.timeout = timeout
        self.image = image
        self.engine = engine
        self.memory = memory
        self.cpus = cpus
        self.install_timeout = install_timeout
        self._deps = _DependencyCache(deps_dir)
        self._engine_ok: bool | None = None
        self._engine_lock = threading.Lock()

    def engine_available(self) -> bool:
        with self._engine_lock:
            if self._engine_ok is None:
                exe = shutil.which(self.engine)
                if exe is None:
                    self._engine_ok = False
                else:
                    try:
                        probe = subprocess.run(
                            [exe, "version", "--format", "{{.Server.Version}}"],
                            capture_output=True, timeout=15,
                        )
                        self._engine_ok = probe.returncode == 0
                    except (OSError, subprocess.TimeoutExpired):
                        self._engine_ok = False
            return self._engine_ok

    def run_command(self, workspace: Workspace, deps: Path | None, name: str) -> list[str]:
        cmd = [
            self.engine, "run", "--rm", "--name", name, "--network", "none",
            "-v", f"{workspace.root}:/workspace",
            "-v", f"{entry_script_path()}:/opt/entry.sh:ro",
            "-e", "PYTHONHASHSEED=0", "-e", "PYTHONDONTWRITEBYTECODE=1",
            "-w", "/workspace",
        ]
        if deps is not None:
            cmd += ["-v", f"{deps}:/deps:ro", "-e", "PYTHONPATH=/deps"]
        if self.memory:
            cmd += ["--memory", self.memory]
        if self.cpus:
            cmd += ["--cpus", self.cpus]
        return cmd + [self.image, "sh", "/opt/entry.sh", "run"]

    def install_command(self, workspace: Workspace, target: Path) -> list[str]:
        return [
            self.engine, "run", "--rm",
            "-v", f"{workspace.root}:/workspace:ro",
            "-v", f"{target}:/deps",
            "-v", f"{entry_script_path()}:/opt/entry.sh:ro",
            self.image, "sh", "/opt/entry.sh", "install",
        ]

    def execute(self, workspace: Workspace, timeout: float | None = None) -> ExecutionResult:
        timeout = self.timeout if timeout is None else timeout
        if not self.engine_available():
            return ExecutionResult(
                "setup_error", -1, "", f"container engine {self.engine!r} is unreachable", 0.0,
                timeout=timeout, reason="engine_unavailable",
            )
        deps = None
        if workspace.requirements:
            def install(target: Path) -> tuple[bool, str]:
                raw = _run(self.install_command(workspace, target), cwd=None, env=None,
                           timeout=self.install_timeout)
                return raw.exit_code == 0 and not raw.timed_out, raw.stderr or raw.stdout

            deps, ok, log = self._deps.ensure(workspace.requirements, install)
            if not ok:
                return ExecutionResult(
                    "setup_error", 1, "", log[-STREAM_CAP:], 0.0,
                    stderr_length=len(log), timeout=timeout, reason="dependency_install",
                )
        name = f"selfdebug-{uuid.uuid4().hex[:12]}"

        def kill_container() -> None:
            subprocess.run([self.engine, "kill", name], capture_output=True, timeout=10)

        raw = _run(self.run_command(workspace, deps, name), cwd=None, env=None,
                   timeout=timeout, on_timeout=kill_container)
        return _to_result(raw, timeout, "/workspace", str(workspace.root))


def make_executor(kind: str | None = None, **kwargs) -> SubprocessExecutor | ContainerExecutor:
    """Build an executor; ``kind`` defaults to ``$CAPSULE_EXEC_BACKEND`` or subprocess."""
    kind = kind or os.environ.get("CAPSULE_EXEC_BACKEND") or "subprocess"
    if kind == "subprocess":
        kwargs.pop("image", None)
        return SubprocessExecutor(**kwargs)
    if kind == "container":
        return ContainerExecutor(**kwargs)
    raise ValueError(f"unknown execution backend {kind!r}")
