"""Answer normalization, equivalence, voting, and benchmark scoring."""

from __future__ import annotations

import itertools
import json
import random
from collections import Counter
from fractions import Fraction

import pytest

from multiparadigm.evaluation import (
    AnswerPolicy,
    DatasetRecord,
    EmptyDataset,
    RunnerResult,
    answers_equivalent,
    grade_answer,
    load_dataset,
    majority_vote,
    normalize_answer,
    parse_numeric,
    recompute_aggregates,
    score_benchmark,
)


class TestNormalize:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("\\boxed{27.0}", "27"),
            ("boxed{27}", "27"),
            ("1{,}000", "1000"),
            ("1,234,567", "1234567"),
            ("2/4", "1/2"),
            ("4/2", "2"),
            ("-6/8", "-3/4"),
            ("27.500", "27.5"),
            ("0.50", "0.5"),
            (".5", "0.5"),
            ("-0.0", "0"),
            ("007", "7"),
            ("$27$", "27"),
            ("\\( 211 \\)", "211"),
            ("\\(\\boxed{211}\\)", "211"),
            ("x + y", "x + y"),
            ("  spaced  ", "spaced"),
        ],
    )
    def test_examples(self, raw, expected):
        assert normalize_answer(raw) == expected

    def test_idempotent_on_random_junk(self):
        rng = random.Random(5)
        alphabet = "0123456789./-+,{}\\boxed $()xyz "
        for _ in range(2000):
            s = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 18)))
            once = normalize_answer(s)
            assert normalize_answer(once) == once

    def test_fraction_reduction_matches_gcd_oracle(self):
        rng = random.Random(6)
        for _ in range(500):
            n, d = rng.randint(-500, 500), rng.randint(1, 500)
            expected = Fraction(n, d)
            normalized = normalize_answer(f"{n}/{d}")
            assert parse_numeric(normalized) == expected


class TestEquivalence:
    def test_examples(self):
        assert answers_equivalent("27.0", "27")
        assert answers_equivalent("1/2", "0.5")
        assert not answers_equivalent("27", "28")

    def test_symmetry_and_reflexivity_on_random_inputs(self):
        rng = random.Random(9)
        policy = AnswerPolicy(round_to_integer=True)
        pool = [
            str(rng.randint(-30, 30)),
            f"{rng.uniform(-5, 5):.3f}",
            f"{rng.randint(1, 20)}/{rng.randint(1, 20)}",
            "x",
            "",
        ]
        for _ in range(800):
            a, b = rng.choice(pool), rng.choice(pool)
            assert answers_equivalent(a, a, policy)
            assert answers_equivalent(a, b, policy) == answers_equivalent(b, a, policy)
            pool[0] = str(rng.randint(-30, 30))
            pool[1] = f"{rng.uniform(-5, 5):.3f}"

    def test_rounding_only_when_gold_integral(self):
        policy = AnswerPolicy(round_to_integer=True)
        assert grade_answer("26.6", "27", policy)  # integral gold rounds
        assert not grade_answer("1", "1/2", policy)  # fractional gold must not round
        assert not grade_answer("28", "27.5", policy)
        assert grade_answer("0.5", "1/2", policy)

    def test_tolerances(self):
        policy = AnswerPolicy(absolute_tolerance=1e-3, relative_tolerance=0)
        assert answers_equivalent("1.0004", "1.0", policy)
        assert not answers_equivalent("1.01", "1.0", policy)


def oracle_majority(answers: list[str], canon: dict[str, str]) -> str:
    """Independent count-based winner: earliest answer of the biggest class."""
    counts = Counter(canon.get(a, a) for a in answers)
    best = max(counts.values())
    for a in answers:
        if counts[canon.get(a, a)] == best:
            return a
    raise AssertionError("unreachable")


PLAIN_ALPHABET = ["27", "9", "x", "5"]
MIXED_ALPHABET = ["27", "27.0", "1/2", "0.5"]
MIXED_CANON = {"27": "27", "27.0": "27", "1/2": "1/2", "0.5": "1/2"}


class TestMajorityVote:
    def test_examples(self):
        assert majority_vote(["27", "27", "9"]) == "27"
        assert majority_vote(["x", "x", "x"]) == "x"
        assert majority_vote(["5", "7"]) == "5"  # tie: earliest wins

    def test_equivalent_forms_pool_their_votes(self):
        assert majority_vote(["27.0", "27", "9", "9"]) == "27.0"

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            majority_vote([])

    def test_exhaustive_small_multisets_match_oracle(self):
        for size in range(1, 6):
            for combo in itertools.product(PLAIN_ALPHABET, repeat=size):
                votes = list(combo)
                assert majority_vote(votes) == oracle_majority(votes, {})

    def test_winner_group_is_maximal(self):
        rng = random.Random(3)
        for _ in range(300):
            votes = [rng.choice(MIXED_ALPHABET) for _ in range(rng.randint(1, 15))]
            winner = majority_vote(votes)
            counts = Counter(MIXED_CANON[v] for v in votes)
            assert counts[MIXED_CANON[winner]] == max(counts.values())

    def test_deterministic(self):
        votes = ["a", "b", "a", "b", "c"]
        assert all(majority_vote(votes) == majority_vote(list(votes)) for _ in range(5))


def _dataset(n: int) -> list[DatasetRecord]:
    return [
        DatasetRecord(id=f"p{i}", problem=f"compute {i}", answer=str(i)) for i in range(n)
    ]


class TestScoreBenchmark:
    def test_pass_at_1_matches_hand_count(self):
        dataset = _dataset(20)
        correct = {f"p{i}" for i in range(13)}

        def runner(record):
            value = record.answer if record.id in correct else "wrong"
            return RunnerResult(predicted=value)

        report = score_benchmark(dataset, runner)
        assert report.aggregates["pass@1"] == 0.65

    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDataset):
            score_benchmark([], lambda record: RunnerResult())

    def test_all_correct_gives_ones(self):
        dataset = _dataset(5)
        report = score_benchmark(
            dataset, lambda record: RunnerResult(predicted=record.answer)
        )
        assert report.aggregates["pass@1"] == 1.0

    def test_runner_exception_recorded_and_run_continues(self):
        dataset = _dataset(4)

        def runner(record):
            if record.id == "p2":
                raise RuntimeError("backend broke")
            return RunnerResult(predicted=record.answer)

        report = score_benchmark(dataset, runner)
        assert report.aggregates["pass@1"] == 0.75
        failed = next(r for r in report.records if r.id == "p2")
        assert failed.error and "backend broke" in failed.error

    def test_majority_aggregate_and_exclusions(self):
        dataset = _dataset(2)

        def runner(record):
            votes = [record.answer, record.answer, "bad", None]
            return RunnerResult(predicted=record.answer, candidates=votes)

        report = score_benchmark(dataset, runner)
        assert report.aggregates["maj@k"] == 1.0
        assert report.aggregates["vote_exclusions"] == 2

    def test_aggregates_recomputable_from_records(self):
        dataset = _dataset(10)
        report = score_benchmark(
            dataset,
            lambda record: RunnerResult(
                predicted=record.answer if int(record.id[1:]) % 2 else "no"
            ),
        )
        assert report.aggregates == recompute_aggregates(report.records)

    def test_journal_resume_reproduces_report(self, tmp_path):
        dataset = _dataset(6)
        calls = []

        def runner(record):
            calls.append(record.id)
            if record.id == "p4" and len(calls) <= 5:
                raise KeyboardInterrupt  # simulated interruption
            return RunnerResult(predicted=record.answer)

        with pytest.raises(KeyboardInterrupt):
            score_benchmark(dataset, runner, run_dir=tmp_path)
        resumed = score_benchmark(dataset, runner, run_dir=tmp_path, resume=True)
        assert resumed.aggregates["pass@1"] == 1.0
        # The first four problems were not re-run.
        assert calls.count("p0") == 1
        assert calls.count("p4") == 2

    def test_report_files_written(self, tmp_path):
        score_benchmark(
            _dataset(3),
            lambda record: RunnerResult(predicted=record.answer),
            run_dir=tmp_path,
        )
        data = json.loads((tmp_path / "report.json").read_text())
        assert data["aggregates"]["pass@1"] == 1.0
        assert (tmp_path / "report.txt").exists()

    def test_load_dataset_jsonl(self, tmp_path):
        path = tmp_path / "set.jsonl"
        path.write_text(
            json.dumps({"id": 1, "problem": "p", "answer": "2"})
            + "\n"
            + json.dumps(
                {"id": 2, "problem": "q", "task_kind": "theorem_proving",
                 "formal_statement": "theorem t : True"}
            )
            + "\n"
        )
        records = load_dataset(path)
        assert records[0].answer == "2"
        assert records[1].task_kind == "theorem_proving"
