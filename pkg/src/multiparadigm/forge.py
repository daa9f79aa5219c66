"""Dataset forging: augmentation, prover-feedback revision, leakage
filtering, and serialization of staged training corpora.

Seed problems arrive with at most one reasoning paradigm attached. An
augmenter model fills in the missing paradigms, a prover-driven revise
loop repairs formal proofs until they check (or the iteration cap is
hit), near-duplicates of test problems are filtered out by normalized
edit-distance similarity, and the surviving records serialize into the
three curriculum stages, each a strict prefix of the full paradigm
layout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .backends import (
    GenerationDefaults,
    GenerationRequest,
    Generator,
    Prover,
    ProverCrash,
    ProverTimeout,
    TranscriptExhausted,
)
from .template import (
    ParadigmKind,
    ReasoningDocument,
    Segment,
    parse_document,
    problem_prefix_length,
    render_document,
)

logger = logging.getLogger(__name__)

DEFAULT_SEPARATOR = "\n\n"
DEFAULT_MAX_REVISE_ITERATIONS = 64
ANSWER_STATEMENT = "The final answer is {answer}."

DEFAULT_REVISE_TEMPLATE = (
    "The formal proof below was rejected by the prover.\n"
    "Prover diagnostics:\n{diagnostics}\n"
    "Rewrite the proof so that it is accepted, keeping the same theorem statement. "
    "Reply with a single ```lean4 code block."
)


class AugmenterRefusal(RuntimeError):
    """The augmenter produced nothing parseable for this seed."""

    def __init__(self, reason: str, attempts: int) -> None:
        super().__init__(f"augmenter refused after {attempts} attempt(s): {reason}")
        self.reason = reason
        self.attempts = attempts


class RevisorExhausted(RuntimeError):
    """The reviser kept producing unparseable output."""


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class SeedSample:
    """One problem with its gold answer and any pre-existing paradigm."""

    id: str
    problem: str
    gold: str
    segments: dict[ParadigmKind, Segment] = field(default_factory=dict)
    source: str = ""

    def __post_init__(self) -> None:
        if not self.gold:
            raise ValueError("seed samples without a gold solution are dropped upstream")

    @classmethod
    def from_dict(cls, data: dict) -> "SeedSample":
        segments = {}
        for key, kind in (("nlr", ParadigmKind.NLR), ("sr", ParadigmKind.SR), ("ar", ParadigmKind.AR)):
            if data.get(key):
                segments[kind] = Segment(kind, data[key])
        return cls(
            id=str(data["id"]),
            problem=data["problem"],
            gold=str(data["answer"]),
            segments=segments,
            source=data.get("source", ""),
        )


def load_seed_samples(path: str | Path) -> list[SeedSample]:
    """Read seed JSONL, dropping records without a gold solution."""
    samples = []
    dropped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            if not data.get("answer"):
                dropped += 1
                continue
            samples.append(SeedSample.from_dict(data))
    if dropped:
        logger.info("dropped %d seed samples without solutions", dropped)
    return samples


@dataclass
class CorpusRecord:
    """A complete multi-paradigm record: problem, three paradigms, answer."""

    problem: str
    nlr: Segment
    answer: str
    sr: Segment | None = None
    ar: Segment | None = None
    provenance: dict = field(default_factory=dict)

    def segment_for(self, kind: ParadigmKind) -> Segment | None:
        return {ParadigmKind.NLR: self.nlr, ParadigmKind.SR: self.sr, ParadigmKind.AR: self.ar}[kind]


@dataclass
class TrainingSequence:
    """One serialized training example for a curriculum stage."""

    stage: int
    text: str
    mask_boundary: int  # problem prefix ends here; loss applies after it
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "text": self.text,
            "mask_boundary": self.mask_boundary,
            "provenance": self.provenance,
        }


# ---------------------------------------------------------------------------
# Stage 1: augmentation
# ---------------------------------------------------------------------------

def assemble_prompt(*parts: str | None, separator: str = DEFAULT_SEPARATOR) -> str:
    """Concatenate prompt parts in order with the configured separator."""
    return separator.join(part for part in parts if part is not None)


def augment_sample(
    seed: SeedSample,
    augmenter: Generator,
    prompt_template: str,
    *,
    separator: str = DEFAULT_SEPARATOR,
    max_attempts: int = 3,
    generation: GenerationDefaults | None = None,
) -> list[Segment]:
    """Generate the seed's missing paradigm segments.

    The prompt is the template, problem, gold answer, and existing
    paradigm body concatenated in exactly that order. The reply is parsed
    with the template parser; candidate segments are those of paradigm
    kinds the seed lacks. Unusable generations are retried up to
    ``max_attempts`` before raising AugmenterRefusal with a reason code.
    """
    generation = generation or GenerationDefaults()
    existing = next(iter(seed.segments.values()), None)
    prompt = assemble_prompt(
        prompt_template,
        seed.problem,
        seed.gold,
        existing.body if existing is not None else None,
        separator=separator,
    )
    missing = {k for k in (ParadigmKind.NLR, ParadigmKind.SR, ParadigmKind.AR) if k not in seed.segments}
    reason = "empty_generation"
    for attempt in range(1, max_attempts + 1):
        try:
            reply = augmenter.generate(
                GenerationRequest(
                    prompt=prompt,
                    max_tokens=generation.max_tokens,
                    temperature=generation.temperature,
                    seed=generation.seed,
                )
            )
        except TranscriptExhausted:
            raise AugmenterRefusal(reason, attempt) from None
        if not reply.text.strip():
            reason = "empty_generation"
            continue
        parsed = parse_document(reply.text)
        candidates = [seg for seg in parsed.document.segments if seg.kind in missing]
        if candidates:
            return candidates
        reason = "no_missing_paradigm_found"
    raise AugmenterRefusal(reason, max_attempts)


# ---------------------------------------------------------------------------
# Stage 2: prover-feedback revision
# ---------------------------------------------------------------------------

@dataclass
class ReviseOutcome:
    accepted: bool
    record: CorpusRecord
    iterations_used: int
    verdict_history: list[str] = field(default_factory=list)


def assemble_revise_prompt(
    diagnostics: str,
    problem: str,
    answer: str,
    proof: str,
    *,
    template: str = DEFAULT_REVISE_TEMPLATE,
    separator: str = DEFAULT_SEPARATOR,
) -> str:
    """Revision prompt: the diagnostics-bearing preamble, then problem,
    answer, and the failing proof, concatenated in that order."""
    preamble = template.format(diagnostics=diagnostics)
    return assemble_prompt(preamble, problem, answer, proof, separator=separator)


def _parse_revised_proof(text: str) -> str | None:
    parsed = parse_document(text)
    for seg in reversed(parsed.document.segments):
        if seg.kind is ParadigmKind.SR and seg.body.strip():
            return seg.body
    return None


def revise_loop(
    record: CorpusRecord,
    prover: Prover,
    reviser: Generator,
    *,
    max_iterations: int = DEFAULT_MAX_REVISE_ITERATIONS,
    template: str = DEFAULT_REVISE_TEMPLATE,
    separator: str = DEFAULT_SEPARATOR,
    max_reviser_retries: int = 3,
    generation: GenerationDefaults | None = None,
) -> ReviseOutcome:
    """Submit the proof, revise on refutation, resubmit; cap at 64 checks.

    An iteration is one prover submission, so the first check is iteration
    one and ``iterations_used`` never exceeds ``max_iterations``. Prover
    timeouts count as failed iterations. The accepted record carries a
    verified proof segment and its iteration count in provenance.
    """
    if record.sr is None:
        raise ValueError("revise_loop requires a record with a proof segment")
    generation = generation or GenerationDefaults()
    proof = record.sr.body
    history: list[str] = []
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        diagnostics = None
        try:
            verdict = prover.verify(proof)
        except ProverTimeout:
            history.append("timeout")
            diagnostics = "The prover timed out before finishing verification."
        except ProverCrash as exc:
            history.append("crash")
            diagnostics = f"The prover crashed: {exc}"
        else:
            history.append(verdict.status)
            if verdict.verified:
                accepted = replace(
                    record,
                    sr=Segment(ParadigmKind.SR, proof, verified="verified"),
                    provenance={**record.provenance, "revise_iterations": iterations},
                )
                return ReviseOutcome(True, accepted, iterations, history)
            diagnostics = verdict.diagnostics
        if iterations == max_iterations:
            break
        proof = _draw_revision(
            record, proof, diagnostics, reviser, template, separator,
            max_reviser_retries, generation,
        )
    rejected = replace(record, provenance={**record.provenance, "revise_iterations": iterations})
    return ReviseOutcome(False, rejected, iterations, history)


def _draw_revision(
    record: CorpusRecord,
    proof: str,
    diagnostics: str,
    reviser: Generator,
    template: str,
    separator: str,
    max_retries: int,
    generation: GenerationDefaults,
) -> str:
    prompt = assemble_revise_prompt(
        diagnostics, record.problem, record.answer, proof,
        template=template, separator=separator,
    )
    for _ in range(max_retries):
        reply = reviser.generate(
            GenerationRequest(
                prompt=prompt,
                max_tokens=generation.max_tokens,
                temperature=generation.temperature,
                seed=generation.seed,
            )
        )
        revised = _parse_revised_proof(reply.text)
        if revised is not None:
            return revised
    raise RevisorExhausted(f"no parseable proof in {max_retries} reviser replies")


# ---------------------------------------------------------------------------
# Leakage filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeakagePolicy:
    similarity_threshold: float = 0.7
    lowercase: bool = True
    collapse_whitespace: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity threshold must lie in [0, 1]")

    def normalize(self, text: str) -> str:
        if self.lowercase:
            text = text.lower()
        if self.collapse_whitespace:
            text = " ".join(text.split())
        return text


def levenshtein(a: str, b: str, *, upper_bound: int | None = None) -> int:
    """Unit-cost edit distance (insert, delete, substitute).

    With ``upper_bound`` set, returns ``upper_bound + 1`` as soon as the
    distance provably exceeds it, which keeps all-pairs filtering cheap.
    """
    if a == b:
        return 0
    # Trim the common prefix and suffix; they never contribute edits.
    start = 0
    end_a, end_b = len(a), len(b)
    while start < end_a and start < end_b and a[start] == b[start]:
        start += 1
    while end_a > start and end_b > start and a[end_a - 1] == b[end_b - 1]:
        end_a -= 1
        end_b -= 1
    a, b = a[start:end_a], b[start:end_b]
    if len(a) < len(b):
        a, b = b, a
    if upper_bound is not None and len(a) - len(b) > upper_bound:
        return upper_bound + 1
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        best = i
        for j, cb in enumerate(b, start=1):
            cost = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            )
            current.append(cost)
            if cost < best:
                best = cost
        if upper_bound is not None and best > upper_bound:
            return upper_bound + 1
        previous = current
    return previous[-1]


def similarity(a: str, b: str, policy: LeakagePolicy = LeakagePolicy()) -> float:
    """Normalized edit similarity: 1 - distance / max length, in [0, 1]."""
    na, nb = policy.normalize(a), policy.normalize(b)
    longest = max(len(na), len(nb))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(na, nb) / longest


@dataclass
class Exclusion:
    train_id: str
    test_id: str
    similarity: float


@dataclass
class LeakageReport:
    kept: list
    excluded: list[Exclusion]


def leakage_filter(
    train: Sequence,
    test: Sequence,
    policy: LeakagePolicy = LeakagePolicy(),
    *,
    problem_of=lambda record: record.problem,
    id_of=lambda record: record.id,
) -> LeakageReport:
    """Drop training samples too similar to any test problem.

    A training sample is excluded iff its similarity to some test problem
    reaches the threshold; the report lists the first matching test
    problem (in dataset order) with its score. Deterministic, and an empty
    test set excludes nothing.
    """
    normalized_test = [(id_of(t), policy.normalize(problem_of(t))) for t in test]
    threshold = policy.similarity_threshold
    kept = []
    excluded: list[Exclusion] = []
    for row in train:
        text = policy.normalize(problem_of(row))
        match = None
        for test_id, candidate in normalized_test:
            longest = max(len(text), len(candidate))
            if longest == 0:
                score = 1.0
            else:
                # Cheap upper bound first: the distance is at least the
                # length difference, so many pairs never reach the DP.
                if 1.0 - abs(len(text) - len(candidate)) / longest < threshold:
                    continue
                allowance = int(longest - threshold * longest) + 1
                distance = levenshtein(text, candidate, upper_bound=allowance)
                score = 1.0 - distance / longest
            if score >= threshold:
                match = Exclusion(id_of(row), test_id, score)
                break
        if match is None:
            kept.append(row)
        else:
            excluded.append(match)
    return LeakageReport(kept=kept, excluded=excluded)


# ---------------------------------------------------------------------------
# Stage corpora
# ---------------------------------------------------------------------------

# Paradigm layout per curriculum stage; each stage appends one paradigm.
STAGE_LAYOUTS: dict[int, tuple[ParadigmKind, ...]] = {
    1: (ParadigmKind.NLR,),
    2: (ParadigmKind.NLR, ParadigmKind.AR),
    3: (ParadigmKind.NLR, ParadigmKind.AR, ParadigmKind.SR),
}


def render_training_sequence(record: CorpusRecord, stage: int) -> TrainingSequence:
    """Serialize one record in the stage's layout.

    The text is the rendered problem block, the stage's paradigm blocks,
    and a final answer statement; the mask boundary marks where the
    problem prefix ends so a trainer can exclude the prompt from the loss.
    """
    layout = STAGE_LAYOUTS[stage]
    segments = []
    for kind in layout:
        seg = record.segment_for(kind)
        if seg is None:
            raise ValueError(f"record lacks the {kind.name} paradigm required by stage {stage}")
        segments.append(seg)
    rendered = render_document(ReasoningDocument(problem=record.problem, segments=segments))
    text = rendered.rstrip("\n") + "\n\n" + ANSWER_STATEMENT.format(answer=record.answer) + "\n"
    return TrainingSequence(
        stage=stage,
        text=text,
        mask_boundary=problem_prefix_length(record.problem),
        provenance=dict(record.provenance),
    )


@dataclass
class StageCorpusResult:
    stage: int
    sequences: list[TrainingSequence]
    skipped: int


def build_stage_corpus(
    records: Iterable[CorpusRecord],
    stage: int,
    out_path: str | Path | None = None,
) -> StageCorpusResult:
    """Emit one training sequence per eligible record.

    Records missing a required paradigm are skipped and counted; stage 3
    additionally requires the proof segment to have been verified.
    """
    if stage not in STAGE_LAYOUTS:
        raise ValueError(f"unknown stage {stage}")
    sequences: list[TrainingSequence] = []
    skipped = 0
    for record in records:
        missing = any(record.segment_for(kind) is None for kind in STAGE_LAYOUTS[stage])
        unverified = stage == 3 and (record.sr is None or record.sr.verified != "verified")
        if missing or unverified:
            skipped += 1
            continue
        sequences.append(render_training_sequence(record, stage))
    if out_path is not None:
        path = Path(out_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for seq in sequences:
                fh.write(json.dumps(seq.to_dict()) + "\n")
    return StageCorpusResult(stage=stage, sequences=sequences, skipped=skipped)


# ---------------------------------------------------------------------------
# Manifest & review queue
# ---------------------------------------------------------------------------

@dataclass
class CorpusManifest:
    problems: int
    solutions: int
    paradigm_counts: dict[str, int]
    verified_proofs: int
    revise_histogram: dict[int, int]
    exclusions: int = 0

    def to_dict(self) -> dict:
        return {
            "problems": self.problems,
            "solutions": self.solutions,
            "paradigm_counts": self.paradigm_counts,
            "verified_proofs": self.verified_proofs,
            "revise_histogram": {str(k): v for k, v in sorted(self.revise_histogram.items())},
            "exclusions": self.exclusions,
        }


def corpus_manifest(records: Sequence[CorpusRecord], *, exclusions: int = 0) -> CorpusManifest:
    """Counts over a corpus: problems, solutions, coverage, revise effort."""
    histogram: dict[int, int] = {}
    counts = {"nlr": 0, "sr": 0, "ar": 0}
    verified = 0
    for record in records:
        counts["nlr"] += 1
        if record.sr is not None:
            counts["sr"] += 1
            if record.sr.verified == "verified":
                verified += 1
        if record.ar is not None:
            counts["ar"] += 1
        iterations = record.provenance.get("revise_iterations")
        if iterations is not None:
            histogram[iterations] = histogram.get(iterations, 0) + 1
    return CorpusManifest(
        problems=len({record.problem for record in records}),
        solutions=len(records),
        paradigm_counts=counts,
        verified_proofs=verified,
        revise_histogram=histogram,
        exclusions=exclusions,
    )


def export_review_queue(records: Sequence[CorpusRecord], path: str | Path) -> int:
    """Write records for human review; decisions round-trip via JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for index, record in enumerate(records):
            fh.write(
                json.dumps(
                    {
                        "index": index,
                        "problem": record.problem,
                        "answer": record.answer,
                        "nlr": record.nlr.body,
                        "sr": record.sr.body if record.sr else None,
                        "ar": record.ar.body if record.ar else None,
                        "decision": "",
                        "note": "",
                    }
                )
                + "\n"
            )
    return len(records)


def apply_review_queue(
    records: Sequence[CorpusRecord], path: str | Path
) -> tuple[list[CorpusRecord], int]:
    """Keep accepted records (blank decision counts as accept), apply edits."""
    decisions: dict[int, dict] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entry = json.loads(line)
                decisions[int(entry["index"])] = entry
    kept: list[CorpusRecord] = []
    rejected = 0
    for index, record in enumerate(records):
        entry = decisions.get(index, {})
        decision = (entry.get("decision") or "accept").lower()
        if decision == "reject":
            rejected += 1
            continue
        if decision == "edit":
            record = replace(
                record,
                nlr=Segment(ParadigmKind.NLR, entry.get("nlr") or record.nlr.body),
                answer=entry.get("answer") or record.answer,
            )
        kept.append(record)
    return kept, rejected
