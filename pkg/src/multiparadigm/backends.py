"""Adapters for the three external actors: generator, prover, executor.

Real backends (HTTP chat-completion endpoint, external prover command,
sandboxed code runner) and scripted stand-ins live behind the same small
interfaces so that every pipeline in this package can run fully offline.

All adapters tolerate concurrent callers: the HTTP generator enforces an
in-flight request cap, the prover cache takes a lock, and every executor
job owns a private workspace.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import shlex
import signal
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from importlib import util as importlib_util
from typing import Callable, Mapping, Protocol, Sequence

import requests

logger = logging.getLogger(__name__)

STOP_SEQUENCE = "stop_sequence"
MAX_TOKENS = "max_tokens"
END_OF_TEXT = "end_of_text"


class BackendError(RuntimeError):
    """Base class for backend adapter failures."""


class BackendUnavailable(BackendError):
    """The generator endpoint could not be reached after retries."""


class ContextOverflow(BackendError):
    """The prompt exceeds the backend's context limit."""


class ProverTimeout(BackendError):
    """The prover ran out of time; distinct from a refutation."""


class ProverCrash(BackendError):
    """The prover process failed to run; carries captured stderr."""

    def __init__(self, message: str, stderr: str = "") -> None:
        super().__init__(message)
        self.stderr = stderr


class SandboxSpawnFailure(BackendError):
    """The sandbox runner shim could not be spawned or spoke garbage."""


class TranscriptExhausted(BackendError):
    """A scripted backend ran past the end of its transcript."""


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

@dataclass
class GenerationRequest:
    prompt: str
    stop_sequences: list[str] = field(default_factory=list)
    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")


@dataclass
class GenerationDefaults:
    """Per-run generation parameters applied to every chain step."""

    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int | None = None


@dataclass
class GenerationResult:
    text: str
    stop_reason: str  # stop_sequence | max_tokens | end_of_text


class Generator(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResult: ...


def _truncate_at_stop(text: str, stop_sequences: Sequence[str]) -> tuple[str, bool]:
    """Cut ``text`` before the earliest stop-sequence match."""
    earliest = None
    for stop in stop_sequences:
        if not stop:
            continue
        pos = text.find(stop)
        if pos != -1 and (earliest is None or pos < earliest):
            earliest = pos
    if earliest is None:
        return text, False
    return text[:earliest], True


def _cap_tokens(text: str, max_tokens: int) -> tuple[str, bool]:
    """Approximate token cap: whitespace-delimited words."""
    words = text.split()
    if len(words) <= max_tokens:
        return text, False
    cut = 0
    seen = 0
    for match in re.finditer(r"\S+", text):
        seen += 1
        cut = match.end()
        if seen == max_tokens:
            break
    return text[:cut], True


def apply_request_limits(text: str, request: GenerationRequest) -> GenerationResult:
    """Shared stop-sequence and token-cap handling for mock backends."""
    text, stopped = _truncate_at_stop(text, request.stop_sequences)
    text, capped = _cap_tokens(text, request.max_tokens)
    if capped:
        return GenerationResult(text, MAX_TOKENS)
    if stopped:
        return GenerationResult(text, STOP_SEQUENCE)
    return GenerationResult(text, END_OF_TEXT)


class ScriptedGenerator:
    """Replays a fixed list of completions, one per call, in order.

    The transcript is consumed monotonically; running off the end raises
    TranscriptExhausted so a misbehaving test fails loudly instead of
    looping.
    """

    def __init__(self, replies: Sequence[str]) -> None:
        self._replies = list(replies)
        self._cursor = 0
        self.calls = 0

    def generate(self, request: GenerationRequest) -> GenerationResult:
        if self._cursor >= len(self._replies):
            raise TranscriptExhausted(
                f"scripted transcript exhausted after {self._cursor} replies"
            )
        chunk = self._replies[self._cursor]
        self._cursor += 1
        self.calls += 1
        return apply_request_limits(chunk, request)

    def reset(self) -> None:
        self._cursor = 0


class CallableGenerator:
    """Wraps a pure function of the request; deterministic under concurrency."""

    def __init__(self, fn: Callable[[GenerationRequest], str]) -> None:
        self._fn = fn
        self.calls = 0

    def generate(self, request: GenerationRequest) -> GenerationResult:
        self.calls += 1
        return apply_request_limits(self._fn(request), request)


_CONTEXT_OVERFLOW_MARKERS = ("context length", "context_length", "maximum context", "too many tokens")


class HttpChatGenerator:
    """Chat-completion REST adapter.

    Speaks the common ``POST {base_url}/chat/completions`` shape with
    system/user messages, temperature, stop, and seed. Transient transport
    failures are retried with exponential backoff up to ``max_retries``.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        system_prompt: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self._url = base_url.rstrip("/") + "/chat/completions"
        self._model = model
        self._api_key = api_key
        self._system_prompt = system_prompt
        self._timeout = timeout
        self._max_retries = max_retries
        self._backoff_base = backoff_base
        self._slots = threading.Semaphore(max_in_flight)
        self._session = session or requests.Session()
        self._sleep = sleep

    def _payload(self, request: GenerationRequest) -> dict:
        messages = []
        if self._system_prompt:
            messages.append({"role": "system", "content": self._system_prompt})
        messages.append({"role": "user", "content": request.prompt})
        payload: dict = {
            "model": self._model,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        if request.seed is not None:
            payload["seed"] = request.seed
        return payload

    def generate(self, request: GenerationRequest) -> GenerationResult:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        last_error: Exception | None = None
        with self._slots:
            for attempt in range(self._max_retries + 1):
                if attempt:
                    self._sleep(self._backoff_base * (2 ** (attempt - 1)))
                try:
                    response = self._session.post(
                        self._url,
                        json=self._payload(request),
                        headers=headers,
                        timeout=self._timeout,
                    )
                except (requests.ConnectionError, requests.Timeout) as exc:
                    last_error = exc
                    continue
                if response.status_code in (429,) or response.status_code >= 500:
                    last_error = BackendUnavailable(
                        f"generator returned HTTP {response.status_code}"
                    )
                    continue
                if response.status_code >= 400:
                    detail = response.text[:500]
                    if any(marker in detail.lower() for marker in _CONTEXT_OVERFLOW_MARKERS):
                        raise ContextOverflow(detail)
                    raise BackendUnavailable(
                        f"generator rejected request (HTTP {response.status_code}): {detail}"
                    )
                return self._parse_response(response, request)
        raise BackendUnavailable(f"generator unreachable after retries: {last_error}")

    def _parse_response(
        self, response: requests.Response, request: GenerationRequest
    ) -> GenerationResult:
        try:
            data = response.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
            finish = choice.get("finish_reason", "stop")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed generator response: {exc}") from exc
        text, stopped = _truncate_at_stop(text, request.stop_sequences)
        if stopped or (finish == "stop" and request.stop_sequences):
            return GenerationResult(text, STOP_SEQUENCE)
        if finish == "length":
            return GenerationResult(text, MAX_TOKENS)
        return GenerationResult(text, END_OF_TEXT)


# ---------------------------------------------------------------------------
# Prover
# ---------------------------------------------------------------------------

VERDICT_VERIFIED = "verified"
VERDICT_REFUTED = "refuted"


@dataclass(frozen=True)
class Verdict:
    status: str  # verified | refuted
    diagnostics: str = ""
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if self.status not in (VERDICT_VERIFIED, VERDICT_REFUTED):
            raise ValueError(f"unknown verdict status {self.status!r}")
        if (self.status == VERDICT_VERIFIED) != (self.diagnostics == ""):
            raise ValueError("diagnostics must be empty iff the verdict is verified")

    @property
    def verified(self) -> bool:
        return self.status == VERDICT_VERIFIED


class Prover(Protocol):
    def verify(self, source: str) -> Verdict: ...


class ScriptedProver:
    """Canned verdicts, either keyed by exact source text or as a schedule.

    Schedule entries may be Verdict objects or the shorthand strings
    "verified", "refuted", "refuted:<diagnostics>", and "timeout".
    """

    def __init__(
        self,
        verdicts: Mapping[str, Verdict] | None = None,
        schedule: Sequence[Verdict | str] | None = None,
        default: Verdict | str | None = None,
    ) -> None:
        self._verdicts = dict(verdicts or {})
        self._schedule = list(schedule or [])
        self._default = default
        self._cursor = 0
        self.calls = 0
        self._lock = threading.Lock()

    @staticmethod
    def _resolve(entry: Verdict | str) -> Verdict:
        if isinstance(entry, Verdict):
            return entry
        if entry == "verified":
            return Verdict(VERDICT_VERIFIED)
        if entry == "timeout":
            raise ProverTimeout("scripted prover timeout")
        if entry.startswith("refuted"):
            _, _, diag = entry.partition(":")
            return Verdict(VERDICT_REFUTED, diag or "scripted refutation")
        raise ValueError(f"unknown scripted verdict {entry!r}")

    def verify(self, source: str) -> Verdict:
        with self._lock:
            self.calls += 1
            if source in self._verdicts:
                return self._verdicts[source]
            if self._cursor < len(self._schedule):
                entry = self._schedule[self._cursor]
                self._cursor += 1
                return self._resolve(entry)
            if self._default is not None:
                return self._resolve(self._default)
        raise TranscriptExhausted("scripted prover has no verdict for this source")


class CommandProver:
    """Runs an external prover command on a source file.

    ``argv`` is a template; the placeholder ``{path}`` is substituted with
    the temp file holding the proof source. Exit status 0 means verified,
    anything else is a refutation whose diagnostics are the combined
    standard streams, passed through verbatim.
    """

    def __init__(self, argv: Sequence[str], timeout: float = 60.0, suffix: str = ".lean") -> None:
        self._argv = list(argv)
        self._timeout = timeout
        self._suffix = suffix

    @classmethod
    def from_command_string(cls, command: str, **kwargs) -> "CommandProver":
        return cls(shlex.split(command), **kwargs)

    def verify(self, source: str) -> Verdict:
        started = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="prover-") as workdir:
            path = os.path.join(workdir, "proof" + self._suffix)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(source)
            argv = [arg.replace("{path}", path) for arg in self._argv]
            try:
                proc = subprocess.run(
                    argv,
                    capture_output=True,
                    text=True,
                    timeout=self._timeout,
                    cwd=workdir,
                )
            except subprocess.TimeoutExpired:
                raise ProverTimeout(f"prover exceeded {self._timeout}s") from None
            except OSError as exc:
                raise ProverCrash(f"failed to spawn prover: {exc}", stderr=str(exc)) from exc
        elapsed = time.monotonic() - started
        if proc.returncode == 0:
            return Verdict(VERDICT_VERIFIED, wall_time=elapsed)
        diagnostics = (proc.stderr + proc.stdout).strip() or f"exit status {proc.returncode}"
        return Verdict(VERDICT_REFUTED, diagnostics, wall_time=elapsed)


class CachedProver:
    """Content-hash verdict cache in front of any prover.

    A cache hit performs no external call and returns the identical
    verdict. Timeouts and crashes are never cached; the caller may retry.
    """

    def __init__(self, inner: Prover) -> None:
        self.inner = inner
        self._cache: dict[str, Verdict] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(source: str) -> str:
        return hashlib.sha256(source.encode("utf-8")).hexdigest()

    def verify(self, source: str) -> Verdict:
        key = self._key(source)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        verdict = self.inner.verify(source)
        with self._lock:
            self._cache[key] = verdict
        return verdict


# ---------------------------------------------------------------------------
# Executor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExecLimits:
    wall_time: float = 10.0
    memory_bytes: int = 1 << 30
    output_cap: int = 65536

    def __post_init__(self) -> None:
        if self.wall_time <= 0 or self.memory_bytes <= 0 or self.output_cap <= 0:
            raise ValueError("all execution limits must be strictly positive")


@dataclass
class ExecResult:
    stdout: str
    stderr: str
    exit_status: int
    timed_out: bool = False
    wall_time: float = 0.0
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return self.exit_status == 0 and not self.timed_out


class Executor(Protocol):
    def execute(self, source: str, limits: ExecLimits = ...) -> ExecResult: ...


def _cap_text(text: str, cap: int) -> tuple[str, bool]:
    data = text.encode("utf-8", errors="replace")
    if len(data) <= cap:
        return text, False
    return data[:cap].decode("utf-8", errors="replace"), True


class LocalExecutor:
    """Subprocess executor with wall/CPU/memory limits but no isolation.

    This is the fallback used when the sandbox runner shim is not
    installed; it offers resource limits and a private workspace per job
    but does not deny network access.
    """

    def __init__(self, python: str | None = None) -> None:
        self._python = python or sys.executable

    def execute(self, source: str, limits: ExecLimits = ExecLimits()) -> ExecResult:
        started = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="exec-") as workdir:
            path = os.path.join(workdir, "job.py")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(source)

            def _limits() -> None:
                import resource

                cpu = max(1, int(limits.wall_time) + 1)
                resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))
                try:
                    resource.setrlimit(
                        resource.RLIMIT_AS, (limits.memory_bytes, limits.memory_bytes)
                    )
                except (ValueError, OSError):
                    pass

            proc = subprocess.Popen(
                [self._python, "-I", path],
                cwd=workdir,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                preexec_fn=_limits,
                start_new_session=True,
            )
            timed_out = False
            try:
                stdout, stderr = proc.communicate(timeout=limits.wall_time)
            except subprocess.TimeoutExpired:
                timed_out = True
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except OSError:
                    proc.kill()
                stdout, stderr = proc.communicate()
        stdout, out_trunc = _cap_text(stdout or "", limits.output_cap)
        stderr, err_trunc = _cap_text(stderr or "", limits.output_cap)
        return ExecResult(
            stdout=stdout,
            stderr=stderr,
            exit_status=proc.returncode if not timed_out else -signal.SIGKILL,
            timed_out=timed_out,
            wall_time=time.monotonic() - started,
            truncated=out_trunc or err_trunc,
        )


SANDBOX_CMD_ENV = "MPR_SANDBOX_CMD"
FORCE_LOCAL_ENV = "MPR_FORCE_LOCAL_EXECUTOR"


class SandboxExecutor:
    """Spawns the sandbox runner shim and speaks its JSON job protocol.

    One JSON job document goes to the shim's stdin; exactly one JSON
    report comes back on its stdout. Field names are the frozen schema
    shared with the shim.
    """

    def __init__(self, command: Sequence[str] | None = None) -> None:
        if command is None:
            env_cmd = os.environ.get(SANDBOX_CMD_ENV)
            command = shlex.split(env_cmd) if env_cmd else (sys.executable, "-m", "sandbox_runner")
        self._command = list(command)

    def execute(self, source: str, limits: ExecLimits = ExecLimits()) -> ExecResult:
        job = {
            "source": source,
            "wall_time_limit": limits.wall_time,
            "memory_limit": limits.memory_bytes,
            "output_cap": limits.output_cap,
        }
        started = time.monotonic()
        try:
            proc = subprocess.run(
                self._command,
                input=json.dumps(job),
                capture_output=True,
                text=True,
                timeout=limits.wall_time * 2 + 30,
            )
        except OSError as exc:
            raise SandboxSpawnFailure(f"cannot spawn sandbox runner: {exc}") from exc
        except subprocess.TimeoutExpired:
            return ExecResult(
                stdout="",
                stderr="sandbox runner shim hung and was killed",
                exit_status=-signal.SIGKILL,
                timed_out=True,
                wall_time=time.monotonic() - started,
            )
        try:
            report = json.loads(proc.stdout)
        except ValueError as exc:
            raise SandboxSpawnFailure(
                f"sandbox runner emitted no JSON report (stderr: {proc.stderr[:300]!r})"
            ) from exc
        return ExecResult(
            stdout=report.get("stdout", ""),
            stderr=report.get("stderr", ""),
            exit_status=int(report.get("exit_status", -1)),
            timed_out=bool(report.get("timed_out", False)),
            wall_time=float(report.get("wall_time", time.monotonic() - started)),
            truncated=bool(report.get("truncated", False)),
        )


class ScriptedExecutor:
    """Canned execution results, one per call, or a function of the source."""

    def __init__(
        self,
        results: Sequence[ExecResult] | None = None,
        fn: Callable[[str], ExecResult] | None = None,
    ) -> None:
        self._results = list(results or [])
        self._fn = fn
        self._cursor = 0
        self.calls = 0

    def execute(self, source: str, limits: ExecLimits = ExecLimits()) -> ExecResult:
        self.calls += 1
        if self._fn is not None:
            return self._fn(source)
        if self._cursor >= len(self._results):
            raise TranscriptExhausted("scripted executor exhausted")
        result = self._results[self._cursor]
        self._cursor += 1
        return result


def sandbox_available() -> bool:
    if os.environ.get(FORCE_LOCAL_ENV):
        return False
    if os.environ.get(SANDBOX_CMD_ENV):
        return True
    try:
        return importlib_util.find_spec("sandbox_runner") is not None
    except (ImportError, ValueError):
        return False


def default_executor() -> Executor:
    """Sandbox runner when installed, local subprocess stub otherwise."""
    if sandbox_available():
        return SandboxExecutor()
    logger.info("sandbox runner not available; using local executor without isolation")
    return LocalExecutor()
