"""Chained multi-paradigm reasoning over a pluggable generator.

The orchestrator walks the configured paradigm order. For each paradigm it
renders the transcript so far, appends that paradigm's header (and opening
fence for code paradigms), and asks the generator to continue. Generation
stops at the closing fence of a code block; the block is then executed or
submitted to the prover, its output block is spliced into the transcript,
and generation resumes with the grown prompt. Tool failures are injected
as the output text and never abort the chain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .backends import (
    ExecLimits,
    Executor,
    GenerationDefaults,
    GenerationRequest,
    Generator,
    Prover,
    ProverCrash,
    ProverTimeout,
    Verdict,
)
from .evaluation import AnswerPolicy, grade_answer
from .template import (
    AR_HEADER,
    AR_LEAD_IN,
    AR_OUTPUT_FENCE,
    AR_SOURCE_FENCE,
    NLR_HEADER,
    SR_HEADER,
    SR_LEAD_IN,
    SR_OUTPUT_FENCE,
    SR_SOURCE_FENCE,
    SUMMARY_HEADER,
    ParadigmKind,
    ReasoningDocument,
    Segment,
    extract_final_answer,
    extract_proof,
    parse_document,
    render_document,
)

logger = logging.getLogger(__name__)

TASK_ARITHMETIC = "arithmetic"
TASK_THEOREM_PROVING = "theorem_proving"

# Header text the generator is primed with for each paradigm. Code
# paradigms are primed through the opening fence so the completion is the
# block body alone, stopped at the closing fence.
_PRIMERS = {
    ParadigmKind.NLR: NLR_HEADER + "\n",
    ParadigmKind.SR: f"{SR_LEAD_IN}\n{SR_HEADER}\n```{SR_SOURCE_FENCE}\n",
    ParadigmKind.AR: f"{AR_LEAD_IN}\n{AR_HEADER}\n```{AR_SOURCE_FENCE}\n",
    ParadigmKind.SUMMARY: SUMMARY_HEADER + "\n",
}
_CODE_STOPS = ["\n```"]
# Free-running mode must not trip on opening fences (which carry a tag
# before the newline), so it stops only at bare closing-fence lines.
_FREE_RUN_STOPS = ["\n```\n"]
_PROSE_STOPS = ["\n###", "\nLet's write the corresponding", "\nLet's use Python"]

# Injected as the proof output block when the prover accepts; refutations
# inject the prover diagnostics verbatim.
VERIFIED_OUTPUT = "verified"


class InvalidOrder(ValueError):
    """A custom paradigm order violates the template structure."""


@dataclass
class ChainConfig:
    """Paradigm order and generation knobs for one chain run."""

    order: tuple[ParadigmKind, ...]
    paths_per_paradigm: int = 1
    generation: GenerationDefaults = field(default_factory=GenerationDefaults)
    inject_tool_output: dict[ParadigmKind, bool] = field(
        default_factory=lambda: {ParadigmKind.SR: True, ParadigmKind.AR: True}
    )
    summary_enabled: bool = True
    token_budget: int = 8192
    instruction_free: bool = False
    exec_limits: ExecLimits = field(default_factory=ExecLimits)

    def __post_init__(self) -> None:
        self.order = tuple(self.order)
        validate_order(self.order)
        if self.paths_per_paradigm < 1:
            raise ValueError("paths_per_paradigm must be at least 1")

    def injects(self, kind: ParadigmKind) -> bool:
        return self.inject_tool_output.get(kind, False)


@dataclass
class ChainState:
    """Task-private progress of one running chain."""

    problem: str
    committed_segments: list[Segment] = field(default_factory=list)
    token_budget_remaining: int = 0


def validate_order(order: tuple[ParadigmKind, ...]) -> None:
    if not order:
        raise InvalidOrder("paradigm order must be non-empty")
    for i, kind in enumerate(order):
        if kind is ParadigmKind.SUMMARY and i != len(order) - 1:
            raise InvalidOrder("SUMMARY may only appear last in the paradigm order")


def parse_order(text: str) -> tuple[ParadigmKind, ...]:
    """Parse a comma-separated order such as ``NLR,SR,AR,SUMMARY``."""
    kinds = tuple(ParadigmKind.from_name(part) for part in text.split(",") if part.strip())
    validate_order(kinds)
    return kinds


def preset_for_task(task_kind: str, order: tuple[ParadigmKind, ...] | None = None) -> ChainConfig:
    """Ready-made chain configurations per task family.

    Theorem proving switches from prose to a formal proof and stops there
    (the proof is the deliverable); arithmetic runs prose, proof, code,
    then a summary box. ``custom`` validates and passes an explicit order
    through.
    """
    if task_kind == TASK_THEOREM_PROVING:
        return ChainConfig(order=(ParadigmKind.NLR, ParadigmKind.SR), summary_enabled=False)
    if task_kind == TASK_ARITHMETIC:
        return ChainConfig(
            order=(ParadigmKind.NLR, ParadigmKind.SR, ParadigmKind.AR, ParadigmKind.SUMMARY)
        )
    if task_kind == "custom":
        if order is None:
            raise InvalidOrder("custom preset requires an explicit order")
        return ChainConfig(
            order=order, summary_enabled=ParadigmKind.SUMMARY in order
        )
    raise InvalidOrder(f"unknown task kind {task_kind!r}")


def _estimate_tokens(text: str) -> int:
    return len(text.split())


def _prompt_for(problem: str, segments: list[Segment], kind: ParadigmKind) -> str:
    base = render_document(ReasoningDocument(problem=problem, segments=segments))
    return base + "\n" + _PRIMERS[kind]


def _strip_generated_body(text: str) -> str:
    # Models occasionally emit the closing fence despite the stop sequence.
    body = text.rstrip()
    if body.endswith("```"):
        body = body[: -len("```")].rstrip()
    return body.strip("\n")


def run_tool(
    segment: Segment,
    config: ChainConfig,
    prover: Prover | None,
    executor: Executor | None,
) -> None:
    """Execute or verify a code segment in place.

    Failed tool calls inject the error text as the output block; the chain
    proceeds regardless, matching transcripts that continue past failed
    proofs.
    """
    if segment.kind is ParadigmKind.AR and executor is not None:
        result = executor.execute(segment.body, config.exec_limits)
        if result.timed_out:
            output = "Execution timed out."
        elif result.exit_status != 0:
            output = (result.stderr or f"exit status {result.exit_status}").rstrip("\n")
        else:
            output = result.stdout.rstrip("\n")
        if config.injects(ParadigmKind.AR):
            segment.tool_output = output
    elif segment.kind is ParadigmKind.SR and prover is not None:
        try:
            verdict: Verdict | None = prover.verify(segment.body)
        except ProverTimeout:
            verdict = None
            segment.verified = "refuted"
            if config.injects(ParadigmKind.SR):
                segment.tool_output = "Prover timed out."
        except ProverCrash as exc:
            verdict = None
            segment.verified = "refuted"
            if config.injects(ParadigmKind.SR):
                segment.tool_output = f"Prover crashed: {exc}"
        if verdict is not None:
            segment.verified = verdict.status
            if config.injects(ParadigmKind.SR):
                segment.tool_output = (
                    VERIFIED_OUTPUT if verdict.verified else verdict.diagnostics
                )


def generate_segment(
    problem: str,
    committed: list[Segment],
    kind: ParadigmKind,
    config: ChainConfig,
    generator: Generator,
    prover: Prover | None = None,
    executor: Executor | None = None,
    *,
    seed: int | None = None,
    temperature: float | None = None,
    max_tokens: int | None = None,
) -> Segment:
    """One paradigm step: prompt with the transcript so far, run the tool."""
    request = GenerationRequest(
        prompt=_prompt_for(problem, committed, kind),
        stop_sequences=list(_CODE_STOPS if kind in (ParadigmKind.SR, ParadigmKind.AR) else _PROSE_STOPS),
        max_tokens=max_tokens or config.generation.max_tokens,
        temperature=config.generation.temperature if temperature is None else temperature,
        seed=config.generation.seed if seed is None else seed,
    )
    result = generator.generate(request)
    segment = Segment(kind, _strip_generated_body(result.text))
    run_tool(segment, config, prover, executor)
    return segment


def run_chain(
    problem: str,
    config: ChainConfig,
    generator: Generator,
    prover: Prover | None = None,
    executor: Executor | None = None,
) -> ReasoningDocument:
    """Drive the generator through the configured paradigm sequence.

    Returns the assembled document with its final answer extracted. When
    the per-chain token budget runs out the partial document is returned
    with ``incomplete`` set rather than raising.
    """
    if not problem:
        raise ValueError("problem must be non-empty")
    if config.instruction_free:
        return _run_instruction_free(problem, config, generator, prover, executor)

    state = ChainState(problem=problem, token_budget_remaining=config.token_budget)
    incomplete = False
    for kind in config.order:
        paths = config.paths_per_paradigm if kind is not ParadigmKind.SUMMARY else 1
        for _ in range(paths):
            if state.token_budget_remaining <= 0:
                incomplete = True
                break
            segment = generate_segment(
                problem,
                state.committed_segments,
                kind,
                config,
                generator,
                prover,
                executor,
                max_tokens=min(config.generation.max_tokens, state.token_budget_remaining),
            )
            state.token_budget_remaining -= max(1, _estimate_tokens(segment.body))
            state.committed_segments.append(segment)
        if incomplete:
            break

    doc = ReasoningDocument(problem=problem, segments=state.committed_segments)
    doc.final_answer = extract_final_answer(doc)
    doc.incomplete = incomplete
    return doc


def _run_instruction_free(
    problem: str,
    config: ChainConfig,
    generator: Generator,
    prover: Prover | None,
    executor: Executor | None,
) -> ReasoningDocument:
    """Free-running mode: the model switches paradigms on its own.

    Generation stops at every closing code fence so tool output can be
    injected, then resumes; the finished text is classified by the parser
    and segments are recorded in emission order.
    """
    transcript = render_document(ReasoningDocument(problem=problem)) + "\n"
    budget = config.token_budget
    incomplete = False
    while budget > 0:
        result = generator.generate(
            GenerationRequest(
                prompt=transcript,
                stop_sequences=list(_FREE_RUN_STOPS),
                max_tokens=min(config.generation.max_tokens, budget),
                temperature=config.generation.temperature,
                seed=config.generation.seed,
            )
        )
        budget -= max(1, _estimate_tokens(result.text))
        if result.stop_reason != "stop_sequence":
            transcript += result.text
            break
        transcript += result.text + "\n```\n"
        parsed = parse_document(transcript)
        tail = parsed.document.segments[-1] if parsed.document.segments else None
        if tail is not None and tail.kind in (ParadigmKind.SR, ParadigmKind.AR):
            if tail.tool_output is None:
                run_tool(tail, config, prover, executor)
                if tail.tool_output is not None:
                    output_tag = (
                        SR_OUTPUT_FENCE if tail.kind is ParadigmKind.SR else AR_OUTPUT_FENCE
                    )
                    transcript += f"```{output_tag}\n{tail.tool_output}\n```\n"
    else:
        incomplete = True

    parsed = parse_document(transcript)
    doc = parsed.document
    doc.incomplete = incomplete
    for warning in parsed.warnings:
        logger.debug("instruction-free parse warning: %s", warning)
    kinds = [seg.kind for seg in doc.segments]
    if not _is_subsequence(kinds, _expand_order(config)):
        logger.warning(
            "instruction-free chain emitted paradigms out of configured order: %s", kinds
        )
    # The free-running transcript carries tool outputs in its text but the
    # verified state must still be recorded on proof segments.
    if prover is not None:
        for seg in doc.segments:
            if seg.kind is ParadigmKind.SR and seg.verified == "unknown":
                try:
                    seg.verified = prover.verify(seg.body).status
                except (ProverTimeout, ProverCrash):
                    seg.verified = "refuted"
    return doc


def _expand_order(config: ChainConfig) -> list[ParadigmKind]:
    expanded: list[ParadigmKind] = []
    for kind in config.order:
        repeat = config.paths_per_paradigm if kind is not ParadigmKind.SUMMARY else 1
        expanded.extend([kind] * repeat)
    return expanded


def _is_subsequence(seq: list[ParadigmKind], of: list[ParadigmKind]) -> bool:
    it = iter(of)
    return all(any(kind is candidate for candidate in it) for kind in seq)


@dataclass
class GradedOutcome:
    """Result of solving one problem and grading it against its gold."""

    document: ReasoningDocument
    task_kind: str
    correct: bool
    predicted: str | None = None
    flags: list[str] = field(default_factory=list)
    attempts: int = 1


def solve_and_grade(
    problem: str,
    gold: str | None,
    config: ChainConfig,
    generator: Generator,
    prover: Prover | None = None,
    executor: Executor | None = None,
    *,
    task_kind: str = TASK_ARITHMETIC,
    policy=None,
) -> GradedOutcome:
    """Run one chain and grade it: answer equivalence or prover verdict."""
    doc = run_chain(problem, config, generator, prover, executor)
    flags: list[str] = []
    if doc.incomplete:
        flags.append("incomplete")

    if task_kind == TASK_THEOREM_PROVING:
        proof = extract_proof(doc)
        if proof is None:
            flags.append("missing_proof")
            return GradedOutcome(doc, task_kind, correct=False, flags=flags)
        if prover is None:
            raise ValueError("theorem-proving grading requires a prover")
        try:
            verdict = prover.verify(proof)
            correct = verdict.verified
        except (ProverTimeout, ProverCrash):
            flags.append("prover_error")
            correct = False
        return GradedOutcome(doc, task_kind, correct=correct, flags=flags)

    if gold is None:
        raise ValueError("arithmetic grading requires a gold answer")
    predicted = doc.final_answer
    if predicted is None:
        flags.append("missing_answer")
        return GradedOutcome(doc, task_kind, correct=False, predicted=None, flags=flags)
    policy = policy or AnswerPolicy()
    return GradedOutcome(
        doc,
        task_kind,
        correct=grade_answer(predicted, gold, policy),
        predicted=predicted,
        flags=flags,
    )

