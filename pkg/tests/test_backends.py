"""Generator, prover, and executor adapters."""

from __future__ import annotations

import json
import time
from unittest import mock

import pytest
import requests

from multiparadigm.backends import (
    BackendUnavailable,
    CachedProver,
    CommandProver,
    ContextOverflow,
    ExecLimits,
    ExecResult,
    GenerationRequest,
    HttpChatGenerator,
    LocalExecutor,
    ProverTimeout,
    ScriptedExecutor,
    ScriptedGenerator,
    ScriptedProver,
    TranscriptExhausted,
    Verdict,
    apply_request_limits,
)


class TestScriptedGenerator:
    def test_replays_chunks_in_order(self):
        generator = ScriptedGenerator(["one", "two"])
        request = GenerationRequest(prompt="anything")
        assert generator.generate(request).text == "one"
        assert generator.generate(request).text == "two"

    def test_exhaustion_raises(self):
        generator = ScriptedGenerator(["only"])
        generator.generate(GenerationRequest(prompt="p"))
        with pytest.raises(TranscriptExhausted):
            generator.generate(GenerationRequest(prompt="p"))

    def test_stop_sequence_truncates(self):
        generator = ScriptedGenerator(["code here\n```\ntrailing junk"])
        result = generator.generate(
            GenerationRequest(prompt="p", stop_sequences=["\n```"])
        )
        assert result.text == "code here"
        assert result.stop_reason == "stop_sequence"

    def test_earliest_stop_sequence_wins(self):
        result = apply_request_limits(
            "alpha STOP beta HALT", GenerationRequest(prompt="p", stop_sequences=["HALT", "STOP"])
        )
        assert result.text == "alpha "

    def test_max_tokens_one_returns_one_token(self):
        generator = ScriptedGenerator(["hello world again"])
        result = generator.generate(GenerationRequest(prompt="p", max_tokens=1))
        assert result.text == "hello"
        assert result.stop_reason == "max_tokens"

    def test_deterministic_replay_after_reset(self):
        generator = ScriptedGenerator(["a", "b"])
        request = GenerationRequest(prompt="p", temperature=0.0, seed=7)
        first = [generator.generate(request).text for _ in range(2)]
        generator.reset()
        second = [generator.generate(request).text for _ in range(2)]
        assert first == second

    def test_request_validation(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", max_tokens=0)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", temperature=-0.1)


class _FakeResponse:
    def __init__(self, status_code: int, payload=None, text: str = ""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or json.dumps(payload or {})

    def json(self):
        if self._payload is None:
            raise ValueError("no JSON")
        return self._payload


def _completion(content: str, finish: str = "stop") -> dict:
    return {"choices": [{"message": {"content": content}, "finish_reason": finish}]}


class TestHttpChatGenerator:
    def _generator(self, session, **kwargs) -> HttpChatGenerator:
        kwargs.setdefault("sleep", lambda _: None)
        return HttpChatGenerator("http://backend/v1", "solver", session=session, **kwargs)

    def test_success_path_builds_chat_payload(self):
        session = mock.Mock()
        session.post.return_value = _FakeResponse(200, _completion("42"))
        generator = self._generator(session)
        result = generator.generate(GenerationRequest(prompt="what is 6*7?", seed=3))
        assert result.text == "42"
        payload = session.post.call_args.kwargs["json"]
        assert payload["messages"][-1] == {"role": "user", "content": "what is 6*7?"}
        assert payload["seed"] == 3

    def test_retries_transient_then_succeeds(self):
        session = mock.Mock()
        session.post.side_effect = [
            requests.ConnectionError("down"),
            _FakeResponse(503),
            _FakeResponse(200, _completion("ok")),
        ]
        sleeps = []
        generator = self._generator(session, max_retries=3, sleep=sleeps.append)
        assert generator.generate(GenerationRequest(prompt="p")).text == "ok"
        assert session.post.call_count == 3
        assert sleeps == [0.5, 1.0]  # exponential backoff

    def test_exhausted_retries_raise_backend_unavailable(self):
        session = mock.Mock()
        session.post.side_effect = requests.ConnectionError("down")
        generator = self._generator(session, max_retries=2)
        with pytest.raises(BackendUnavailable):
            generator.generate(GenerationRequest(prompt="p"))
        assert session.post.call_count == 3

    def test_context_overflow_detected(self):
        session = mock.Mock()
        session.post.return_value = _FakeResponse(
            400, payload={"error": "x"}, text="maximum context length exceeded"
        )
        generator = self._generator(session)
        with pytest.raises(ContextOverflow):
            generator.generate(GenerationRequest(prompt="p" * 100))

    def test_client_side_stop_truncation(self):
        session = mock.Mock()
        session.post.return_value = _FakeResponse(200, _completion("body\n```\nextra"))
        generator = self._generator(session)
        result = generator.generate(GenerationRequest(prompt="p", stop_sequences=["\n```"]))
        assert result.text == "body"
        assert result.stop_reason == "stop_sequence"


class TestProver:
    def test_scripted_mapping_and_diagnostics(self):
        refuted = Verdict("refuted", "unknown identifier")
        prover = ScriptedProver(verdicts={"bad proof": refuted}, default="verified")
        assert prover.verify("good proof").verified
        verdict = prover.verify("bad proof")
        assert not verdict.verified
        assert verdict.diagnostics == "unknown identifier"

    def test_verdict_invariant(self):
        with pytest.raises(ValueError):
            Verdict("verified", "should be empty")
        with pytest.raises(ValueError):
            Verdict("refuted", "")

    def test_cache_hit_skips_external_call(self):
        inner = ScriptedProver(default="verified")
        prover = CachedProver(inner)
        first = prover.verify("theorem t : True := trivial")
        second = prover.verify("theorem t : True := trivial")
        assert inner.calls == 1
        assert first == second

    def test_cache_distinguishes_sources(self):
        inner = ScriptedProver(default="verified")
        prover = CachedProver(inner)
        prover.verify("proof A")
        prover.verify("proof B")
        assert inner.calls == 2

    def test_timeout_not_cached(self):
        inner = ScriptedProver(schedule=["timeout", "verified"])
        prover = CachedProver(inner)
        with pytest.raises(ProverTimeout):
            prover.verify("slow proof")
        assert prover.verify("slow proof").verified
        assert inner.calls == 2

    def test_command_prover_verified_and_refuted(self):
        # A stand-in prover: accept sources that compile as Python.
        argv = [
            "python3",
            "-c",
            "import sys; compile(open(sys.argv[1]).read(), 'proof', 'exec')",
            "{path}",
        ]
        prover = CommandProver(argv, timeout=20.0)
        good = prover.verify("x = 1 + 1\n")
        assert good.verified and good.diagnostics == ""
        bad = prover.verify("x = = 1\n")
        assert not bad.verified
        assert "SyntaxError" in bad.diagnostics

    def test_command_prover_timeout(self):
        argv = ["python3", "-c", "import time; time.sleep(30)", "{path}"]
        prover = CommandProver(argv, timeout=0.5)
        with pytest.raises(ProverTimeout):
            prover.verify("anything")


class TestExecutor:
    def test_simple_execution(self):
        result = LocalExecutor().execute("print(45/(18+12)*18)")
        assert result.stdout.strip() == "27.0"
        assert result.exit_status == 0

    def test_empty_source(self):
        result = LocalExecutor().execute("")
        assert result.exit_status == 0
        assert result.stdout == ""

    def test_stderr_and_exit_status(self):
        result = LocalExecutor().execute("raise ValueError('nope')")
        assert result.exit_status != 0
        assert "ValueError" in result.stderr

    def test_timeout_enforced(self):
        started = time.monotonic()
        result = LocalExecutor().execute(
            "while True: pass", ExecLimits(wall_time=1.0)
        )
        elapsed = time.monotonic() - started
        assert result.timed_out
        assert elapsed < 5.0
        assert result.exit_status != 0

    def test_output_cap(self):
        result = LocalExecutor().execute(
            "print('x' * 100000)", ExecLimits(output_cap=1000)
        )
        assert len(result.stdout.encode()) <= 1000
        assert result.truncated

    def test_workspace_isolation(self):
        executor = LocalExecutor()
        first = executor.execute("open('marker.txt', 'w').write('here'); print('done')")
        assert first.exit_status == 0
        second = executor.execute(
            "import os; print(sorted(os.listdir('.')))"
        )
        assert "marker.txt" not in second.stdout

    def test_limits_validation(self):
        with pytest.raises(ValueError):
            ExecLimits(wall_time=0)

    def test_scripted_executor_consumes_results(self):
        executor = ScriptedExecutor([ExecResult("4\n", "", 0)])
        assert executor.execute("print(2+2)").stdout == "4\n"
        with pytest.raises(TranscriptExhausted):
            executor.execute("again")
