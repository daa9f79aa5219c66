"""Answer normalization, equivalence, majority voting, and benchmark scoring.

Answer handling is deliberately bounded to rational and decimal forms:
box wrappers and math delimiters are stripped, thousands separators and
trailing zeros removed, and simple fractions reduced. Full symbolic
equivalence is out of scope; inputs that look symbolic pass through as
trimmed literals and compare by string equality.
"""

from __future__ import annotations

import json
import logging
import math
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .template import find_boxed_values

logger = logging.getLogger(__name__)


class EmptyDataset(ValueError):
    """A benchmark run was asked to score zero problems."""


@dataclass(frozen=True)
class AnswerPolicy:
    """How loosely two answers may differ and still count as equal."""

    round_to_integer: bool = False
    absolute_tolerance: float = 1e-6
    relative_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.absolute_tolerance < 0 or self.relative_tolerance < 0:
            raise ValueError("tolerances must be nonnegative")


_INT_RE = re.compile(r"[+-]?\d+")
_DEC_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+)")
_FRAC_RE = re.compile(r"([+-]?\d+)\s*/\s*([+-]?\d+)")
_GROUPED_RE = re.compile(r"[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?")
_DELIM_PATTERNS = [
    re.compile(r"^\$\$(.*)\$\$$", re.DOTALL),
    re.compile(r"^\$(.*)\$$", re.DOTALL),
    re.compile(r"^\\\((.*)\\\)$", re.DOTALL),
    re.compile(r"^\\\[(.*)\\\]$", re.DOTALL),
]


def _strip_wrappers(text: str) -> str:
    """Peel math delimiters and box wrappers until nothing changes."""
    current = text.strip()
    while True:
        previous = current
        for pattern in _DELIM_PATTERNS:
            match = pattern.match(current)
            if match:
                current = match.group(1).strip()
        boxes = find_boxed_values(current)
        if len(boxes) == 1:
            open_match = re.search(r"\\?boxed\s*\{", current)
            prefix = current[: open_match.start()].strip()
            suffix = current[open_match.start() + len(open_match.group(0)) + len(boxes[0]) + 1 :].strip()
            if not prefix and not suffix:
                current = boxes[0].strip()
        if current == previous:
            return current


def _canonical_decimal(text: str) -> str:
    sign = "-" if text.startswith("-") else ""
    digits = text.lstrip("+-")
    int_part, _, frac_part = digits.partition(".")
    int_part = int_part.lstrip("0") or "0"
    frac_part = frac_part.rstrip("0")
    if not frac_part:
        result = sign + int_part
    else:
        result = f"{sign}{int_part}.{frac_part}"
    return "0" if result in ("-0", "+0") else result


def normalize_answer(text: str) -> str:
    """Canonical text form of an extracted answer; idempotent.

    Unparseable input passes through trimmed, so every string has a
    normal form and voting never crashes on junk.
    """
    s = _strip_wrappers(text)
    s = s.replace("{,}", "")
    if _GROUPED_RE.fullmatch(s):
        s = s.replace(",", "")
    if _INT_RE.fullmatch(s):
        return str(int(s))
    if _DEC_RE.fullmatch(s):
        return _canonical_decimal(s)
    frac = _FRAC_RE.fullmatch(s)
    if frac:
        denominator = int(frac.group(2))
        if denominator != 0:
            value = Fraction(int(frac.group(1)), denominator)
            if value.denominator == 1:
                return str(value.numerator)
            return f"{value.numerator}/{value.denominator}"
    return s


def parse_numeric(text: str) -> Fraction | None:
    """Exact rational value of a normalized answer, if it has one."""
    s = normalize_answer(text)
    if _INT_RE.fullmatch(s) or _DEC_RE.fullmatch(s):
        try:
            return Fraction(s)
        except (ValueError, ZeroDivisionError):
            return None
    frac = _FRAC_RE.fullmatch(s)
    if frac and int(frac.group(2)) != 0:
        return Fraction(int(frac.group(1)), int(frac.group(2)))
    return None


def _round_half_away(value: Fraction) -> int:
    if value >= 0:
        return math.floor(value + Fraction(1, 2))
    return math.ceil(value - Fraction(1, 2))


def _numeric_equivalent(xa: Fraction, xb: Fraction, policy: AnswerPolicy) -> bool:
    if policy.round_to_integer and _round_half_away(xa) == _round_half_away(xb):
        return True
    diff = float(abs(xa - xb))
    bound = policy.absolute_tolerance + policy.relative_tolerance * float(max(abs(xa), abs(xb)))
    return diff <= bound


def answers_equivalent(a: str, b: str, policy: AnswerPolicy = AnswerPolicy()) -> bool:
    """Whether two answer strings denote the same result under the policy.

    Symmetric and reflexive; transitivity is not guaranteed once the
    tolerances are nonzero.
    """
    na, nb = normalize_answer(a), normalize_answer(b)
    if na == nb:
        return True
    xa, xb = parse_numeric(na), parse_numeric(nb)
    if xa is None or xb is None:
        return False
    return _numeric_equivalent(xa, xb, policy)


def is_integral(text: str) -> bool:
    value = parse_numeric(text)
    return value is not None and value.denominator == 1


def grade_answer(predicted: str, gold: str, policy: AnswerPolicy = AnswerPolicy()) -> bool:
    """Grade a prediction against gold.

    Integer rounding only applies when the gold answer itself is integral;
    blanket rounding would corrupt fractional golds.
    """
    effective = policy
    if policy.round_to_integer and not is_integral(gold):
        effective = AnswerPolicy(
            round_to_integer=False,
            absolute_tolerance=policy.absolute_tolerance,
            relative_tolerance=policy.relative_tolerance,
        )
    return answers_equivalent(predicted, gold, effective)


def majority_vote(answers: Sequence[str], policy: AnswerPolicy = AnswerPolicy()) -> str:
    """Representative of the largest equivalence group of answers.

    Each answer's support is the number of votes equivalent to it; the
    winner is the earliest answer with maximal support, which makes the
    tie-break deterministic. Unparseable strings vote as their trimmed
    literals.
    """
    if not answers:
        raise ValueError("majority_vote requires at least one answer")
    normalized = [normalize_answer(a) for a in answers]
    numeric = [parse_numeric(n) for n in normalized]
    # Votes repeat heavily, so pair outcomes are memoized by normal form.
    memo: dict[tuple[str, str], bool] = {}

    def equivalent(i: int, j: int) -> bool:
        if normalized[i] == normalized[j]:
            return True
        key = (normalized[i], normalized[j])
        cached = memo.get(key)
        if cached is None:
            if numeric[i] is None or numeric[j] is None:
                cached = False
            else:
                cached = _numeric_equivalent(numeric[i], numeric[j], policy)
            memo[key] = cached
        return cached

    best_index = 0
    best_support = -1
    for i in range(len(answers)):
        support = sum(1 for j in range(len(answers)) if equivalent(i, j))
        if support > best_support:
            best_index = i
            best_support = support
    return answers[best_index]


# ---------------------------------------------------------------------------
# Benchmark scoring
# ---------------------------------------------------------------------------

TASK_ARITHMETIC = "arithmetic"
TASK_THEOREM_PROVING = "theorem_proving"


@dataclass
class DatasetRecord:
    id: str
    problem: str
    task_kind: str = TASK_ARITHMETIC
    answer: str | None = None
    formal_statement: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetRecord":
        return cls(
            id=str(data["id"]),
            problem=data["problem"],
            task_kind=data.get("task_kind", TASK_ARITHMETIC),
            answer=data.get("answer"),
            formal_statement=data.get("formal_statement"),
        )


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Read a JSONL dataset; one record per line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(DatasetRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{line_no}: bad dataset record: {exc}") from exc
    return records


@dataclass
class RunnerResult:
    """What one problem attempt produced, before grading."""

    predicted: str | None = None
    candidates: list[str] = field(default_factory=list)
    passed: bool | None = None
    attempts: int = 1
    error: str | None = None


@dataclass
class ProblemRecord:
    id: str
    predicted: str | None
    gold: str | None
    outcome: bool
    attempts: int = 1
    majority: str | None = None
    majority_correct: bool | None = None
    excluded_votes: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "predicted": self.predicted,
            "gold": self.gold,
            "outcome": self.outcome,
            "attempts": self.attempts,
            "majority": self.majority,
            "majority_correct": self.majority_correct,
            "excluded_votes": self.excluded_votes,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemRecord":
        return cls(**data)


@dataclass
class EvalReport:
    records: list[ProblemRecord]
    aggregates: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "aggregates": self.aggregates,
            "metadata": self.metadata,
        }

    def table(self) -> str:
        lines = [f"{'metric':<16} value"]
        for key in sorted(self.aggregates):
            value = self.aggregates[key]
            shown = f"{value:.4f}" if isinstance(value, float) else str(value)
            lines.append(f"{key:<16} {shown}")
        lines.append(f"{'problems':<16} {len(self.records)}")
        return "\n".join(lines)


def recompute_aggregates(records: Sequence[ProblemRecord]) -> dict:
    """Aggregates are plain means over per-problem indicators."""
    total = len(records)
    aggregates: dict = {
        "pass@1": sum(1 for r in records if r.outcome) / total,
    }
    voted = [r for r in records if r.majority_correct is not None]
    if voted:
        aggregates["maj@k"] = sum(1 for r in voted if r.majority_correct) / len(voted)
        aggregates["vote_exclusions"] = sum(r.excluded_votes for r in records)
    if any(r.attempts > 1 for r in records):
        aggregates["pass@n"] = aggregates["pass@1"]
        aggregates["mean_attempts"] = sum(r.attempts for r in records) / total
    return aggregates


def _journal_path(run_dir: Path) -> Path:
    return run_dir / "journal.jsonl"


def _load_journal(run_dir: Path) -> dict[str, ProblemRecord]:
    path = _journal_path(run_dir)
    done: dict[str, ProblemRecord] = {}
    if path.exists():
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    record = ProblemRecord.from_dict(json.loads(line))
                    done[record.id] = record
    return done


def score_problem(
    record: DatasetRecord,
    result: RunnerResult,
    policy: AnswerPolicy,
) -> ProblemRecord:
    """Grade one runner result against its dataset record."""
    if record.task_kind == TASK_THEOREM_PROVING:
        return ProblemRecord(
            id=record.id,
            predicted=None,
            gold=None,
            outcome=bool(result.passed),
            attempts=result.attempts,
            error=result.error,
        )
    gold = record.answer or ""
    predicted = result.predicted
    outcome = predicted is not None and grade_answer(predicted, gold, policy)
    majority = None
    majority_correct = None
    excluded = 0
    if result.candidates:
        votes = [c for c in result.candidates if c is not None]
        excluded = len(result.candidates) - len(votes)
        if votes:
            majority = majority_vote(votes, policy)
            majority_correct = grade_answer(majority, gold, policy)
    return ProblemRecord(
        id=record.id,
        predicted=predicted,
        gold=gold,
        outcome=outcome,
        attempts=result.attempts,
        majority=majority,
        majority_correct=majority_correct,
        excluded_votes=excluded,
        error=result.error,
    )


def score_benchmark(
    dataset: Sequence[DatasetRecord],
    runner: Callable[[DatasetRecord], RunnerResult],
    policy: AnswerPolicy = AnswerPolicy(),
    *,
    run_dir: str | Path | None = None,
    resume: bool = False,
    metadata: dict | None = None,
) -> EvalReport:
    """Run every problem through ``runner`` and aggregate the outcomes.

    Per-problem failures are recorded as incorrect with an error tag and
    the run continues. With ``run_dir`` set, results are journaled one
    JSONL line per problem and a later call with ``resume`` skips the
    problems already done, reproducing the same report.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDataset("benchmark dataset is empty")
    started = time.monotonic()

    directory = Path(run_dir) if run_dir is not None else None
    done: dict[str, ProblemRecord] = {}
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
        if resume:
            done = _load_journal(directory)
        else:
            _journal_path(directory).unlink(missing_ok=True)

    records: list[ProblemRecord] = []
    journal = open(_journal_path(directory), "a", encoding="utf-8") if directory else None
    try:
        for item in dataset:
            if item.id in done:
                records.append(done[item.id])
                continue
            try:
                result = runner(item)
            except Exception as exc:  # noqa: BLE001 - a bad problem must not kill the run
                logger.warning("runner failed on problem %s: %s", item.id, exc)
                result = RunnerResult(error=f"{type(exc).__name__}: {exc}")
            graded = score_problem(item, result, policy)
            records.append(graded)
            if journal is not None:
                journal.write(json.dumps(graded.to_dict()) + "\n")
                journal.flush()
    finally:
        if journal is not None:
            journal.close()

    meta = dict(metadata or {})
    meta.setdefault("wall_time", round(time.monotonic() - started, 3))
    report = EvalReport(records=records, aggregates=recompute_aggregates(records), metadata=meta)
    if directory is not None:
        write_report(report, directory)
    return report


def write_report(report: EvalReport, run_dir: str | Path) -> Path:
    directory = Path(run_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(directory / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(report.table() + "\n")
    return path


def iter_journal(run_dir: str | Path) -> Iterable[ProblemRecord]:
    yield from _load_journal(Path(run_dir)).values()
