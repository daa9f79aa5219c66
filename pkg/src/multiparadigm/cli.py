"""Command-line surface tying the library into runnable workflows.

Exit codes are a stable contract: 0 on success, 1 on task-level failure
(for example, no proof found within budget), 2 on usage or configuration
errors.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import chain as chain_mod
from . import forge as forge_mod
from .backends import BackendError
from .config import (
    RunConfig,
    build_executor,
    build_generator,
    build_prover,
    config_hash,
    load_config,
    run_directory,
)
from .evaluation import (
    EmptyDataset,
    RunnerResult,
    load_dataset,
    score_benchmark,
)
from .sampling import (
    budget_total,
    first_verified,
    parse_budget,
    run_sampling,
    save_tree,
)
from .template import render_document


def _load_config_option(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return load_config(path)
    except FileNotFoundError:
        raise click.UsageError(f"config file not found: {path}")
    except (ValueError, KeyError) as exc:
        raise click.UsageError(f"bad config file {path}: {exc}")


def _apply_overrides(config: RunConfig, order: str | None, seed: int | None, budget: str | None) -> RunConfig:
    if order:
        try:
            config.chain = replace(config.chain, order=chain_mod.parse_order(order))
        except (ValueError, chain_mod.InvalidOrder) as exc:
            raise click.UsageError(f"bad --order: {exc}")
    if seed is not None:
        config.seed = seed
        config.sampling = replace(config.sampling, base_seed=seed)
    if budget:
        try:
            config.budget = parse_budget(budget)
        except ValueError as exc:
            raise click.UsageError(f"bad --budget: {exc}")
    return config


def _prepare_run_dir(config: RunConfig) -> Path:
    directory = run_directory(config)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


@click.group()
def main() -> None:
    """Multi-paradigm reasoning workflows: solve, prove, eval, forge."""


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="Run config JSON.")
@click.option("--problem", "problem_text", type=str, default=None)
@click.option("--problem-file", type=click.Path(exists=False), default=None)
@click.option("--task", type=click.Choice(["arithmetic", "theorem_proving"]), default=None)
@click.option("--order", type=str, default=None, help="Comma-separated paradigm order.")
@click.option("--seed", type=int, default=None)
def solve(config_path, problem_text, problem_file, task, order, seed) -> None:
    """Run one reasoning chain and print the transcript."""
    config = _apply_overrides(_load_config_option(config_path), order, seed, None)
    if task:
        preset = chain_mod.preset_for_task(task)
        config.chain = replace(
            config.chain, order=preset.order, summary_enabled=preset.summary_enabled
        )
        if order:
            config = _apply_overrides(config, order, None, None)
    if problem_text is None and problem_file is None:
        raise click.UsageError("provide --problem or --problem-file")
    if problem_text is None:
        path = Path(problem_file)
        if not path.exists():
            raise click.UsageError(f"problem file not found: {problem_file}")
        problem_text = path.read_text(encoding="utf-8").strip()

    generator = build_generator(config)
    prover = build_prover(config) if config.prover.get("type") != "none" else None
    executor = build_executor(config)
    directory = _prepare_run_dir(config)
    try:
        document = chain_mod.run_chain(problem_text, config.chain, generator, prover, executor)
    except BackendError as exc:
        raise click.ClickException(f"backend failure: {exc}")
    text = render_document(document)
    (directory / "transcript.txt").write_text(text, encoding="utf-8")
    click.echo(text)
    click.echo(f"run: {directory}")
    if document.final_answer is not None:
        click.echo(f"final answer: {document.final_answer}")
    if document.incomplete:
        click.echo("note: chain stopped early (token budget exhausted)")


@main.command()
@click.argument("statement_file", type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--budget", type=str, default=None, help="e.g. two-level:128x128 or 32x100")
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=1, help="Verification parallelism cap.")
def prove(statement_file, config_path, budget, seed, jobs) -> None:
    """Sample proofs for a formal statement and verify until one passes."""
    config = _apply_overrides(_load_config_option(config_path), None, seed, budget)
    path = Path(statement_file)
    if not path.exists():
        raise click.UsageError(f"statement file not found: {statement_file}")
    statement = path.read_text(encoding="utf-8").strip()
    if chain_mod.ParadigmKind.SUMMARY in config.chain.order or len(config.chain.order) < 2:
        preset = chain_mod.preset_for_task(chain_mod.TASK_THEOREM_PROVING)
        config.chain = replace(
            config.chain, order=preset.order, summary_enabled=False
        )

    generator = build_generator(config)
    prover = build_prover(config)
    executor = build_executor(config)
    directory = _prepare_run_dir(config)
    total_budget = budget_total(config.budget) if config.budget else config.sampling.total_leaves
    click.echo(f"sample budget: {total_budget}")
    try:
        tree = run_sampling(statement, config.sampling, config.chain, generator, prover, executor)
    except BackendError as exc:
        raise click.ClickException(f"backend failure: {exc}")
    save_tree(tree, directory / "tree")
    result = first_verified(tree, prover, total_budget, max_workers=max(1, jobs))
    status = "pass" if result.passed else "fail"
    click.echo(f"{status} ({result.attempts_used}/{total_budget})")
    if not result.passed:
        sys.exit(1)


@main.command(name="eval")
@click.argument("dataset_path", type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--resume", is_flag=True, default=False)
@click.option("--seed", type=int, default=None)
def eval_command(dataset_path, config_path, resume, seed) -> None:
    """Score a JSONL benchmark dataset and write a report."""
    config = _apply_overrides(_load_config_option(config_path), None, seed, None)
    path = Path(dataset_path)
    if not path.exists():
        raise click.UsageError(f"dataset not found: {dataset_path}")
    dataset = load_dataset(path)

    generator = build_generator(config)
    prover = build_prover(config) if config.prover.get("type") != "none" else None
    executor = build_executor(config)
    directory = _prepare_run_dir(config)

    def runner(record) -> RunnerResult:
        outcome = chain_mod.solve_and_grade(
            record.problem,
            record.answer,
            config.chain,
            generator,
            prover,
            executor,
            task_kind=record.task_kind,
            policy=config.answers,
        )
        if record.task_kind == chain_mod.TASK_THEOREM_PROVING:
            return RunnerResult(passed=outcome.correct, attempts=outcome.attempts)
        return RunnerResult(predicted=outcome.predicted, attempts=outcome.attempts)

    try:
        report = score_benchmark(
            dataset,
            runner,
            config.answers,
            run_dir=directory,
            resume=resume,
            metadata={"config_hash": config_hash(config)},
        )
    except EmptyDataset as exc:
        raise click.ClickException(str(exc))
    click.echo(report.table())
    click.echo(f"report: {directory / 'report.json'}")


@main.group()
def forge() -> None:
    """Dataset pipeline: augment, revise, leak, stage, manifest."""


def _load_corpus(path: str) -> list[forge_mod.CorpusRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            records.append(
                forge_mod.CorpusRecord(
                    problem=data["problem"],
                    nlr=forge_mod.Segment(forge_mod.ParadigmKind.NLR, data["nlr"]),
                    answer=str(data["answer"]),
                    sr=(
                        forge_mod.Segment(
                            forge_mod.ParadigmKind.SR,
                            data["sr"],
                            verified=data.get("sr_verified", "unknown"),
                        )
                        if data.get("sr")
                        else None
                    ),
                    ar=(
                        forge_mod.Segment(forge_mod.ParadigmKind.AR, data["ar"])
                        if data.get("ar")
                        else None
                    ),
                    provenance=data.get("provenance", {}),
                )
            )
    return records


def _dump_corpus(records, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "problem": record.problem,
                        "answer": record.answer,
                        "nlr": record.nlr.body,
                        "sr": record.sr.body if record.sr else None,
                        "sr_verified": record.sr.verified if record.sr else None,
                        "ar": record.ar.body if record.ar else None,
                        "provenance": record.provenance,
                    }
                )
                + "\n"
            )


@forge.command()
@click.argument("seeds_path", type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--prompt-file", type=str, required=True, help="Augmentation prompt template.")
@click.option("--out", type=str, required=True)
def augment(seeds_path, config_path, prompt_file, out) -> None:
    """Fill in missing paradigms for seed samples."""
    config = _load_config_option(config_path)
    for required in (seeds_path, prompt_file):
        if not Path(required).exists():
            raise click.UsageError(f"file not found: {required}")
    seeds = forge_mod.load_seed_samples(seeds_path)
    template_text = Path(prompt_file).read_text(encoding="utf-8")
    generator = build_generator(config)
    records = []
    refusals = 0
    for seed in seeds:
        try:
            candidates = forge_mod.augment_sample(seed, generator, template_text)
        except forge_mod.AugmenterRefusal:
            refusals += 1
            continue
        merged = dict(seed.segments)
        for segment in candidates:
            merged.setdefault(segment.kind, segment)
        if forge_mod.ParadigmKind.NLR not in merged:
            refusals += 1
            continue
        records.append(
            forge_mod.CorpusRecord(
                problem=seed.problem,
                nlr=merged[forge_mod.ParadigmKind.NLR],
                answer=seed.gold,
                sr=merged.get(forge_mod.ParadigmKind.SR),
                ar=merged.get(forge_mod.ParadigmKind.AR),
                provenance={"seed_source": seed.source, "seed_id": seed.id},
            )
        )
    _dump_corpus(records, Path(out))
    click.echo(f"augmented {len(records)} records ({refusals} refusals) -> {out}")


@forge.command()
@click.argument("corpus_path", type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", type=str, required=True)
@click.option("--max-iterations", type=int, default=forge_mod.DEFAULT_MAX_REVISE_ITERATIONS)
def revise(corpus_path, config_path, out, max_iterations) -> None:
    """Run the prover-feedback revision loop over a corpus."""
    config = _load_config_option(config_path)
    if not Path(corpus_path).exists():
        raise click.UsageError(f"corpus not found: {corpus_path}")
    records = _load_corpus(corpus_path)
    prover = build_prover(config)
    reviser = build_generator(config)
    accepted = []
    rejected = 0
    for record in records:
        if record.sr is None:
            rejected += 1
            continue
        outcome = forge_mod.revise_loop(
            record, prover, reviser, max_iterations=max_iterations
        )
        if outcome.accepted:
            accepted.append(outcome.record)
        else:
            rejected += 1
    _dump_corpus(accepted, Path(out))
    manifest = forge_mod.corpus_manifest(accepted)
    click.echo(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    click.echo(f"accepted {len(accepted)}, rejected {rejected} -> {out}")


@forge.command()
@click.argument("train_path", type=str)
@click.argument("test_path", type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", type=str, required=True)
def leak(train_path, test_path, config_path, out) -> None:
    """Exclude training problems too similar to test problems."""
    config = _load_config_option(config_path)
    for required in (train_path, test_path):
        if not Path(required).exists():
            raise click.UsageError(f"dataset not found: {required}")
    train = load_dataset(train_path)
    test = load_dataset(test_path)
    report = forge_mod.leakage_filter(train, test, config.leakage)
    with open(out, "w", encoding="utf-8") as fh:
        for row in report.kept:
            fh.write(
                json.dumps(
                    {"id": row.id, "problem": row.problem, "answer": row.answer,
                     "task_kind": row.task_kind}
                )
                + "\n"
            )
    for exclusion in report.excluded:
        click.echo(
            f"excluded {exclusion.train_id} (matches {exclusion.test_id}, "
            f"similarity {exclusion.similarity:.3f})"
        )
    click.echo(f"kept {len(report.kept)}, excluded {len(report.excluded)} -> {out}")


@forge.command()
@click.argument("corpus_path", type=str)
@click.option("--stage", type=click.IntRange(1, 3), required=True)
@click.option("--out", type=str, required=True)
def stage(corpus_path, stage, out) -> None:
    """Serialize a corpus into one curriculum stage."""
    if not Path(corpus_path).exists():
        raise click.UsageError(f"corpus not found: {corpus_path}")
    records = _load_corpus(corpus_path)
    result = forge_mod.build_stage_corpus(records, stage, out)
    click.echo(f"stage {stage}: wrote {len(result.sequences)} sequences, skipped {result.skipped}")


@forge.command()
@click.argument("corpus_path", type=str)
def manifest(corpus_path) -> None:
    """Print corpus statistics."""
    if not Path(corpus_path).exists():
        raise click.UsageError(f"corpus not found: {corpus_path}")
    records = _load_corpus(corpus_path)
    click.echo(json.dumps(forge_mod.corpus_manifest(records).to_dict(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
