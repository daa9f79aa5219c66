"""Sandbox runner shim: limits, isolation, and the JSON job protocol."""

from __future__ import annotations

import json
import random
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from sandbox_runner import (
    JOB_FIELDS,
    REPORT_FIELDS,
    MalformedJob,
    SandboxJob,
    run_job,
)


def _job(source: str, wall: float = 10.0, memory: int = 1 << 30, cap: int = 65536) -> SandboxJob:
    return SandboxJob(
        source=source, wall_time_limit=wall, memory_limit=memory, output_cap=cap
    )


def _invoke_shim(payload: str) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "sandbox_runner"],
        input=payload,
        capture_output=True,
        text=True,
        timeout=60,
    )


class TestRunJob:
    def test_simple_print(self):
        report = run_job(_job("print(2+2)"))
        assert report.stdout == "4\n"
        assert report.exit_status == 0
        assert not report.timed_out
        assert not report.truncated

    def test_empty_source(self):
        report = run_job(_job(""))
        assert report.exit_status == 0
        assert report.stdout == ""

    def test_user_exception_reported_not_raised(self):
        report = run_job(_job("raise RuntimeError('boom')"))
        assert report.exit_status != 0
        assert "RuntimeError: boom" in report.stderr
        assert "job.py" in report.stderr

    def test_infinite_loop_times_out_within_grace(self):
        started = time.monotonic()
        report = run_job(_job("while True: pass", wall=2.0))
        elapsed = time.monotonic() - started
        assert report.timed_out
        assert elapsed < 3.0
        assert report.exit_status != 0

    def test_sleeping_child_processes_are_killed(self):
        source = (
            "import subprocess, sys\n"
            "subprocess.run([sys.executable, '-c', 'import time; time.sleep(60)'])\n"
        )
        started = time.monotonic()
        report = run_job(_job(source, wall=2.0))
        assert report.timed_out
        assert time.monotonic() - started < 5.0

    def test_stdout_capped_with_truncated_flag(self):
        report = run_job(_job("print('x' * 50000)", cap=1000))
        assert len(report.stdout.encode("utf-8")) <= 1000
        assert report.truncated

    def test_stderr_capped_too(self):
        report = run_job(
            _job("import sys; sys.stderr.write('e' * 50000)", cap=500)
        )
        assert len(report.stderr.encode("utf-8")) <= 500
        assert report.truncated

    def test_socket_connect_denied(self):
        source = (
            "import socket\n"
            "s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)\n"
            "s.connect(('127.0.0.1', 80))\n"
        )
        report = run_job(_job(source))
        assert report.exit_status != 0
        assert "network access is disabled" in report.stderr
        assert not report.timed_out

    def test_create_connection_denied(self):
        report = run_job(_job("import socket; socket.create_connection(('localhost', 9))"))
        assert report.exit_status != 0
        assert "network access is disabled" in report.stderr

    def test_memory_limit_enforced(self):
        report = run_job(_job("data = bytearray(300 * 1024 * 1024)", memory=64 * 1024 * 1024))
        assert report.exit_status != 0

    def test_workspace_is_private_per_job(self):
        first = run_job(_job("open('marker.txt', 'w').write('a'); print('ok')"))
        assert first.exit_status == 0
        second = run_job(_job("import os; print('marker.txt' in os.listdir('.'))"))
        assert second.stdout.strip() == "False"

    def test_user_stdout_never_mixes_with_report(self):
        # User code printing JSON-looking text must stay in the captured
        # stdout field, not corrupt the report framing.
        report = run_job(_job('print(\'{"exit_status": 0}\')'))
        assert report.stdout == '{"exit_status": 0}\n'

    def test_limits_must_be_positive(self):
        with pytest.raises(MalformedJob):
            SandboxJob(source="", wall_time_limit=0, memory_limit=1, output_cap=1)


class TestProtocol:
    def test_shim_emits_exactly_one_report_and_exits_zero(self):
        payload = json.dumps(
            {"source": "print(7)", "wall_time_limit": 10, "memory_limit": 1 << 30,
             "output_cap": 65536}
        )
        proc = _invoke_shim(payload)
        assert proc.returncode == 0
        report = json.loads(proc.stdout)  # whole stdout is one JSON document
        assert report["stdout"] == "7\n"
        assert set(report) == set(REPORT_FIELDS)

    def test_malformed_input_still_yields_report(self):
        for payload in ("not json at all", "{}", json.dumps({"source": 5})):
            proc = _invoke_shim(payload)
            assert proc.returncode == 0
            report = json.loads(proc.stdout)
            assert report["exit_status"] == -1
            assert report["stderr"]

    def test_failing_user_code_keeps_shim_exit_zero(self):
        payload = json.dumps(
            {"source": "import sys; sys.exit(3)", "wall_time_limit": 10,
             "memory_limit": 1 << 30, "output_cap": 65536}
        )
        proc = _invoke_shim(payload)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["exit_status"] == 3

    def test_one_json_report_across_randomized_jobs(self):
        rng = random.Random(12)
        sources = [
            "print({})".format(rng.randint(0, 999)),
            "print('y' * {})".format(rng.randint(0, 4000)),
            "raise ValueError('sad')",
            "import sys; sys.exit({})".format(rng.randint(0, 3)),
            "x = sum(range(1000)); print(x)",
            "import socket; socket.socket()",
            "",
        ]

        def one(job_index: int) -> None:
            cap = rng.randint(64, 2048)
            payload = json.dumps(
                {
                    "source": rng.choice(sources),
                    "wall_time_limit": 10,
                    "memory_limit": 1 << 30,
                    "output_cap": cap,
                }
            )
            proc = _invoke_shim(payload)
            assert proc.returncode == 0
            report = json.loads(proc.stdout)
            assert set(report) == set(REPORT_FIELDS)
            assert len(report["stdout"].encode("utf-8")) <= cap

        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(one, range(100)))

    def test_job_schema_is_frozen(self):
        assert JOB_FIELDS == ("source", "wall_time_limit", "memory_limit", "output_cap")
        assert REPORT_FIELDS == (
            "stdout", "stderr", "exit_status", "timed_out", "truncated", "wall_time"
        )
