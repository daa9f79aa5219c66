"""Run configuration: one JSON document wiring backends, chain, sampling,
budgets, and policies together, hashed canonically so reruns of the same
configuration land in the same run directory.

Credentials never live in config files; they come from environment
variables only.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backends import (
    CachedProver,
    CommandProver,
    ExecLimits,
    Executor,
    GenerationDefaults,
    Generator,
    HttpChatGenerator,
    LocalExecutor,
    Prover,
    SandboxExecutor,
    ScriptedExecutor,
    ScriptedGenerator,
    ScriptedProver,
    default_executor,
)
from .chain import ChainConfig
from .evaluation import AnswerPolicy
from .forge import LeakagePolicy
from .sampling import BudgetSpec, SamplingPlan, budget_from_dict, budget_to_dict
from .template import ParadigmKind

ENV_GENERATOR_BASE_URL = "MPR_GENERATOR_BASE_URL"
ENV_GENERATOR_API_KEY = "MPR_GENERATOR_API_KEY"
ENV_GENERATOR_MODEL = "MPR_GENERATOR_MODEL"
ENV_PROVER_CMD = "MPR_PROVER_CMD"

DEFAULT_ORDER = (ParadigmKind.NLR, ParadigmKind.SR, ParadigmKind.AR, ParadigmKind.SUMMARY)


@dataclass
class RunConfig:
    seed: int = 0
    parallelism: int = 1
    run_dir: str = "runs"
    chain: ChainConfig = field(
        default_factory=lambda: ChainConfig(order=DEFAULT_ORDER)
    )
    sampling: SamplingPlan = field(
        default_factory=lambda: SamplingPlan(level1_paths=1, level2_paths=1)
    )
    budget: BudgetSpec | None = None
    answers: AnswerPolicy = field(default_factory=lambda: AnswerPolicy(round_to_integer=True))
    leakage: LeakagePolicy = field(default_factory=LeakagePolicy)
    generator: dict = field(default_factory=lambda: {"type": "http"})
    prover: dict = field(default_factory=lambda: {"type": "command"})
    executor: dict = field(default_factory=lambda: {"type": "auto"})

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "parallelism": self.parallelism,
            "run_dir": self.run_dir,
            "chain": {
                "order": [k.value for k in self.chain.order],
                "paths_per_paradigm": self.chain.paths_per_paradigm,
                "token_budget": self.chain.token_budget,
                "instruction_free": self.chain.instruction_free,
                "summary_enabled": self.chain.summary_enabled,
                "generation": {
                    "max_tokens": self.chain.generation.max_tokens,
                    "temperature": self.chain.generation.temperature,
                    "seed": self.chain.generation.seed,
                },
                "exec_limits": {
                    "wall_time": self.chain.exec_limits.wall_time,
                    "memory_bytes": self.chain.exec_limits.memory_bytes,
                    "output_cap": self.chain.exec_limits.output_cap,
                },
            },
            "sampling": {
                "level1_paths": self.sampling.level1_paths,
                "level2_paths": self.sampling.level2_paths,
                "level1_temperature": self.sampling.level1_temperature,
                "level2_temperature": self.sampling.level2_temperature,
                "base_seed": self.sampling.base_seed,
            },
            "budget": budget_to_dict(self.budget) if self.budget is not None else None,
            "answers": {
                "round_to_integer": self.answers.round_to_integer,
                "absolute_tolerance": self.answers.absolute_tolerance,
                "relative_tolerance": self.answers.relative_tolerance,
            },
            "leakage": {
                "similarity_threshold": self.leakage.similarity_threshold,
                "lowercase": self.leakage.lowercase,
                "collapse_whitespace": self.leakage.collapse_whitespace,
            },
            "generator": self.generator,
            "prover": self.prover,
            "executor": self.executor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        config = cls()
        config.seed = data.get("seed", 0)
        config.parallelism = data.get("parallelism", 1)
        config.run_dir = data.get("run_dir", "runs")
        chain_data = data.get("chain", {})
        generation_data = chain_data.get("generation", {})
        limits_data = chain_data.get("exec_limits", {})
        order = chain_data.get("order")
        config.chain = ChainConfig(
            order=tuple(ParadigmKind(k) for k in order) if order else DEFAULT_ORDER,
            paths_per_paradigm=chain_data.get("paths_per_paradigm", 1),
            token_budget=chain_data.get("token_budget", 8192),
            instruction_free=chain_data.get("instruction_free", False),
            summary_enabled=chain_data.get("summary_enabled", True),
            generation=GenerationDefaults(
                max_tokens=generation_data.get("max_tokens", 1024),
                temperature=generation_data.get("temperature", 0.0),
                seed=generation_data.get("seed"),
            ),
            exec_limits=ExecLimits(
                wall_time=limits_data.get("wall_time", 10.0),
                memory_bytes=limits_data.get("memory_bytes", 1 << 30),
                output_cap=limits_data.get("output_cap", 65536),
            ),
        )
        sampling_data = data.get("sampling", {})
        config.sampling = SamplingPlan(
            level1_paths=sampling_data.get("level1_paths", 1),
            level2_paths=sampling_data.get("level2_paths", 1),
            level1_temperature=sampling_data.get("level1_temperature", 0.7),
            level2_temperature=sampling_data.get("level2_temperature", 0.7),
            base_seed=sampling_data.get("base_seed", data.get("seed", 0)),
        )
        budget_data = data.get("budget")
        config.budget = budget_from_dict(budget_data) if budget_data else None
        answers_data = data.get("answers", {})
        config.answers = AnswerPolicy(
            round_to_integer=answers_data.get("round_to_integer", True),
            absolute_tolerance=answers_data.get("absolute_tolerance", 1e-6),
            relative_tolerance=answers_data.get("relative_tolerance", 1e-6),
        )
        leakage_data = data.get("leakage", {})
        config.leakage = LeakagePolicy(
            similarity_threshold=leakage_data.get("similarity_threshold", 0.7),
            lowercase=leakage_data.get("lowercase", True),
            collapse_whitespace=leakage_data.get("collapse_whitespace", True),
        )
        config.generator = data.get("generator", {"type": "http"})
        config.prover = data.get("prover", {"type": "command"})
        config.executor = data.get("executor", {"type": "auto"})
        return config


def load_config(path: str | Path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))


def config_hash(config: RunConfig) -> str:
    """Canonical hash: stable under key reordering in the source file."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def run_directory(config: RunConfig) -> Path:
    return Path(config.run_dir) / config_hash(config)


# ---------------------------------------------------------------------------
# Backend construction
# ---------------------------------------------------------------------------

def _read_lines_or_json(path: str) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        return list(json.loads(text))
    # One reply per JSONL line keeps multi-line replies representable.
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def build_generator(config: RunConfig) -> Generator:
    spec = config.generator
    kind = spec.get("type", "http")
    if kind == "scripted":
        if "replies" in spec:
            return ScriptedGenerator(spec["replies"])
        return ScriptedGenerator(_read_lines_or_json(spec["replies_file"]))
    if kind == "http":
        base_url = spec.get("base_url") or os.environ.get(ENV_GENERATOR_BASE_URL)
        model = spec.get("model") or os.environ.get(ENV_GENERATOR_MODEL)
        if not base_url or not model:
            raise ValueError(
                "http generator needs base_url and model "
                f"(config keys or {ENV_GENERATOR_BASE_URL}/{ENV_GENERATOR_MODEL})"
            )
        return HttpChatGenerator(
            base_url=base_url,
            model=model,
            api_key=os.environ.get(ENV_GENERATOR_API_KEY),
            system_prompt=spec.get("system_prompt"),
            timeout=spec.get("timeout", 120.0),
            max_retries=spec.get("max_retries", 3),
            max_in_flight=spec.get("max_in_flight", 4),
        )
    raise ValueError(f"unknown generator type {kind!r}")


def build_prover(config: RunConfig) -> Prover:
    spec = config.prover
    kind = spec.get("type", "command")
    if kind == "scripted":
        schedule = spec.get("schedule")
        default = spec.get("default", "verified" if schedule is None else None)
        return CachedProver(ScriptedProver(schedule=schedule, default=default))
    if kind == "command":
        command = spec.get("argv") or os.environ.get(ENV_PROVER_CMD)
        if not command:
            raise ValueError(f"command prover needs argv (config key or {ENV_PROVER_CMD})")
        if isinstance(command, str):
            prover = CommandProver.from_command_string(command, timeout=spec.get("timeout", 60.0))
        else:
            prover = CommandProver(command, timeout=spec.get("timeout", 60.0))
        return CachedProver(prover)
    raise ValueError(f"unknown prover type {kind!r}")


def build_executor(config: RunConfig) -> Executor:
    spec = config.executor
    kind = spec.get("type", "auto")
    if kind == "auto":
        return default_executor()
    if kind == "local":
        return LocalExecutor()
    if kind == "sandbox":
        return SandboxExecutor(spec.get("command"))
    if kind == "scripted":
        from .backends import ExecResult

        results = [
            ExecResult(
                stdout=entry.get("stdout", ""),
                stderr=entry.get("stderr", ""),
                exit_status=entry.get("exit_status", 0),
            )
            for entry in spec.get("results", [])
        ]
        return ScriptedExecutor(results)
    raise ValueError(f"unknown executor type {kind!r}")
