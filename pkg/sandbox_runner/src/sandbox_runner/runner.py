"""In-sandbox job shim: run untrusted Python under resource limits.

The shim reads exactly one JSON job document from standard input, runs the
job's source in a fresh workspace with CPU, memory, wall-time, and
output-size limits and network access denied, then writes exactly one JSON
report to standard output and exits 0. User-code failure lives in the
report, never in the shim's exit status; a malformed job yields a report
with exit_status -1 and the diagnostic in its stderr field.

Job and report field names are a frozen schema shared with the executor
adapter that spawns this shim:

    job:    {"source", "wall_time_limit", "memory_limit", "output_cap"}
    report: {"stdout", "stderr", "exit_status", "timed_out", "truncated",
             "wall_time"}
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass

JOB_FIELDS = ("source", "wall_time_limit", "memory_limit", "output_cap")
REPORT_FIELDS = ("stdout", "stderr", "exit_status", "timed_out", "truncated", "wall_time")

# Runs inside the child interpreter before any user code: deny network at
# the socket layer, then execute the job file as __main__.
_BOOTSTRAP = """\
import socket as _socket_module
import sys
import traceback

def _deny_network(*args, **kwargs):
    raise OSError("network access is disabled inside the sandbox")

for _name in ("socket", "socketpair", "create_connection", "create_server",
              "fromfd", "getaddrinfo"):
    if hasattr(_socket_module, _name):
        setattr(_socket_module, _name, _deny_network)

_path = sys.argv[1]
sys.argv = [_path]
with open(_path, "rb") as _fh:
    _code = compile(_fh.read(), "job.py", "exec")
_globals = {"__name__": "__main__", "__file__": "job.py"}
try:
    exec(_code, _globals)
except SystemExit:
    raise
except BaseException:
    traceback.print_exc()
    sys.exit(1)
"""


class MalformedJob(ValueError):
    """The job document on stdin is missing or invalid."""


@dataclass(frozen=True)
class SandboxJob:
    source: str
    wall_time_limit: float
    memory_limit: int
    output_cap: int

    def __post_init__(self) -> None:
        if self.wall_time_limit <= 0 or self.memory_limit <= 0 or self.output_cap <= 0:
            raise MalformedJob("all job limits must be strictly positive")

    @classmethod
    def from_json(cls, raw: str) -> "SandboxJob":
        try:
            data = json.loads(raw)
        except ValueError as exc:
            raise MalformedJob(f"job input is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise MalformedJob("job input must be a JSON object")
        missing = [name for name in JOB_FIELDS if name not in data]
        if missing:
            raise MalformedJob(f"job input is missing fields: {', '.join(missing)}")
        if not isinstance(data["source"], str):
            raise MalformedJob("job source must be a string")
        try:
            return cls(
                source=data["source"],
                wall_time_limit=float(data["wall_time_limit"]),
                memory_limit=int(data["memory_limit"]),
                output_cap=int(data["output_cap"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, MalformedJob):
                raise
            raise MalformedJob(f"job limits must be numbers: {exc}") from exc


@dataclass
class SandboxReport:
    stdout: str
    stderr: str
    exit_status: int
    timed_out: bool = False
    truncated: bool = False
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "stdout": self.stdout,
                "stderr": self.stderr,
                "exit_status": self.exit_status,
                "timed_out": self.timed_out,
                "truncated": self.truncated,
                "wall_time": self.wall_time,
            }
        )


def _cap_bytes(data: bytes, cap: int) -> tuple[str, bool]:
    truncated = len(data) > cap
    if truncated:
        data = data[:cap]
    return data.decode("utf-8", errors="replace"), truncated


def _limit_resources(job: SandboxJob):
    def apply() -> None:
        import resource

        cpu_seconds = max(1, int(job.wall_time_limit) + 1)
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds))
        try:
            resource.setrlimit(resource.RLIMIT_AS, (job.memory_limit, job.memory_limit))
        except (ValueError, OSError):
            pass  # some platforms refuse RLIMIT_AS; wall-time kill still applies

    return apply


def run_job(job: SandboxJob) -> SandboxReport:
    """Execute one job in a private workspace and report the outcome."""
    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="sandbox-job-") as workspace:
        job_path = os.path.join(workspace, "job.py")
        with open(job_path, "w", encoding="utf-8") as fh:
            fh.write(job.source)
        proc = subprocess.Popen(
            [sys.executable, "-I", "-c", _BOOTSTRAP, job_path],
            cwd=workspace,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            preexec_fn=_limit_resources(job),
            start_new_session=True,
        )
        timed_out = False
        try:
            out, err = proc.communicate(timeout=job.wall_time_limit)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            out, err = proc.communicate()
    stdout, out_truncated = _cap_bytes(out or b"", job.output_cap)
    stderr, err_truncated = _cap_bytes(err or b"", job.output_cap)
    return SandboxReport(
        stdout=stdout,
        stderr=stderr,
        exit_status=proc.returncode if not timed_out else -signal.SIGKILL,
        timed_out=timed_out,
        truncated=out_truncated or err_truncated,
        wall_time=round(time.monotonic() - started, 4),
    )


def main() -> int:
    """Protocol entry point: one job on stdin, one report on stdout."""
    try:
        job = SandboxJob.from_json(sys.stdin.read())
        report = run_job(job)
    except MalformedJob as exc:
        report = SandboxReport(stdout="", stderr=str(exc), exit_status=-1)
    except Exception as exc:  # the shim must still emit its one report
        report = SandboxReport(
            stdout="", stderr=f"sandbox shim error: {type(exc).__name__}: {exc}", exit_status=-1
        )
    sys.stdout.write(report.to_json() + "\n")
    sys.stdout.flush()
    return 0
