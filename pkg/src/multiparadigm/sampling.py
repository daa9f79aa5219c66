"""Hierarchical paradigm-level sampling and sample-budget accounting.

Instead of searching token-level trees inside one paradigm, sampling fans
out over paradigm prefixes: J paths for the first paradigm, each extended
by K paths for the second, giving J x K complete candidate transcripts
that share their level-1 prefix byte-exactly. Budget accounting covers the
product formulas used to compare generation schemes: single-pass,
best-first search, tree search, and the two-level scheme above.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

from .backends import (
    BackendUnavailable,
    Executor,
    Generator,
    Prover,
    ProverCrash,
    ProverTimeout,
)
from .chain import ChainConfig, generate_segment
from .template import (
    ParadigmKind,
    ReasoningDocument,
    Segment,
    extract_final_answer,
    extract_proof,
    render_document,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingPlan:
    """Fan-out for the first two paradigm levels, with per-level sampling."""

    level1_paths: int
    level2_paths: int
    level1_temperature: float = 0.7
    level2_temperature: float = 0.7
    base_seed: int = 0

    def __post_init__(self) -> None:
        if self.level1_paths < 1 or self.level2_paths < 1:
            raise ValueError("fan-out counts must be at least 1")

    @property
    def total_leaves(self) -> int:
        return self.level1_paths * self.level2_paths


@dataclass
class Leaf:
    tag: tuple[int, ...]
    document: ReasoningDocument | None
    error: str | None = None


@dataclass
class SampleTree:
    problem: str
    plan: SamplingPlan
    order: tuple[ParadigmKind, ...]
    level1: list[Segment] = field(default_factory=list)
    leaves: list[Leaf] = field(default_factory=list)
    aborted: bool = False


def derive_seed(base_seed: int, *path: int) -> int:
    """Stable per-branch seed; independent of process hash randomization."""
    material = json.dumps([base_seed, *path]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def run_sampling(
    problem: str,
    plan: SamplingPlan,
    config: ChainConfig,
    generator: Generator,
    prover: Prover | None = None,
    executor: Executor | None = None,
) -> SampleTree:
    """Expand the two-level sampling tree into J x K complete documents.

    The level-1 segment is generated once per j and shared by its K
    leaves. Failed expansions become dead leaves that still count against
    the budget; an unreachable backend aborts the remaining expansion and
    returns the partial tree flagged as aborted.
    """
    return expand_tree(
        problem,
        (plan.level1_paths, plan.level2_paths),
        config,
        generator,
        prover,
        executor,
        base_seed=plan.base_seed,
        temperatures=(plan.level1_temperature, plan.level2_temperature),
        plan=plan,
    )


def expand_tree(
    problem: str,
    fanouts: Sequence[int],
    config: ChainConfig,
    generator: Generator,
    prover: Prover | None = None,
    executor: Executor | None = None,
    *,
    base_seed: int = 0,
    temperatures: Sequence[float] = (),
    plan: SamplingPlan | None = None,
) -> SampleTree:
    """General fan-out: ``fanouts[i]`` paths at paradigm position ``i``.

    Two entries give the plain J x K scheme; deeper nesting fans out
    further paradigm positions. Positions beyond the fan-out list run a
    single completion per branch, so leaf tags have one component per
    fanned-out level and leaves come out in lexicographic tag order.
    """
    if len(config.order) < 2:
        raise ValueError("hierarchical sampling needs at least two paradigms in the order")
    if not fanouts or any(f < 1 for f in fanouts):
        raise ValueError("every fan-out count must be at least 1")
    fanouts = tuple(fanouts[: len(config.order)])
    if plan is None:
        plan = SamplingPlan(
            level1_paths=fanouts[0],
            level2_paths=fanouts[1] if len(fanouts) > 1 else 1,
            base_seed=base_seed,
        )
    tree = SampleTree(problem=problem, plan=plan, order=config.order)

    def dead_subtree(tag: tuple[int, ...], position: int, error: str) -> None:
        remaining = fanouts[position + 1 :] if position < len(fanouts) else ()
        suffixes = itertools.product(*(range(f) for f in remaining)) if remaining else [()]
        for suffix in suffixes:
            tree.leaves.append(Leaf(tag + tuple(suffix), None, error=error))

    def expand(committed: list[Segment], position: int, tag: tuple[int, ...]) -> None:
        if tree.aborted:
            return
        if position == len(config.order):
            doc = ReasoningDocument(problem=problem, segments=list(committed))
            doc.final_answer = extract_final_answer(doc)
            tree.leaves.append(Leaf(tag, doc))
            return
        fan = fanouts[position] if position < len(fanouts) else 1
        tagged = position < len(fanouts)
        for index in range(fan):
            child_tag = tag + (index,) if tagged else tag
            temperature = (
                temperatures[position]
                if position < len(temperatures)
                else config.generation.temperature
            )
            try:
                segment = generate_segment(
                    problem,
                    committed,
                    config.order[position],
                    config,
                    generator,
                    prover,
                    executor,
                    seed=derive_seed(base_seed, position, *child_tag),
                    temperature=temperature,
                )
            except BackendUnavailable as exc:
                logger.warning("sampling aborted at position %d %s: %s", position, child_tag, exc)
                tree.aborted = True
                return
            except Exception as exc:  # noqa: BLE001 - dead leaves still count against budget
                dead_subtree(child_tag, position, f"{type(exc).__name__}: {exc}")
                continue
            if position == 0:
                tree.level1.append(segment)
            expand(committed + [segment], position + 1, child_tag)

    expand([], 0, ())
    return tree


@dataclass
class PassResult:
    passed: bool
    attempts_used: int


def _verify_leaf(leaf: Leaf, prover: Prover) -> bool:
    if leaf.document is None:
        return False
    proof = extract_proof(leaf.document)
    if proof is None:
        return False
    try:
        return prover.verify(proof).verified
    except (ProverTimeout, ProverCrash):
        return False


def first_verified(
    tree: SampleTree, prover: Prover, budget: int, *, max_workers: int = 1
) -> PassResult:
    """Verify leaf proofs in tag order until one passes or budget ends.

    Every examined leaf consumes one attempt, including dead leaves and
    prover timeouts, so the reported count is the position of the first
    verified proof. With ``max_workers`` above one, batches verify
    concurrently but the result is still the lexicographically earliest
    success, and speculative work past it does not count as attempts.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    candidates = tree.leaves[: min(budget, len(tree.leaves))]
    if max_workers <= 1:
        for index, leaf in enumerate(candidates):
            if _verify_leaf(leaf, prover):
                return PassResult(passed=True, attempts_used=index + 1)
        return PassResult(passed=False, attempts_used=len(candidates))
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for start in range(0, len(candidates), max_workers):
            batch = candidates[start : start + max_workers]
            outcomes = list(pool.map(lambda leaf: _verify_leaf(leaf, prover), batch))
            for offset, verified in enumerate(outcomes):
                if verified:
                    return PassResult(passed=True, attempts_used=start + offset + 1)
    return PassResult(passed=False, attempts_used=len(candidates))


# ---------------------------------------------------------------------------
# Budget accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SinglePassBudget:
    """Plain number of generations."""

    total: int

    def __post_init__(self) -> None:
        if self.total < 1:
            raise ValueError("budget counts must be at least 1")


@dataclass(frozen=True)
class BestFirstBudget:
    """Attempts x tactics per expansion x expansion iterations."""

    attempts: int
    tactics_per_expansion: int
    expansion_iterations: int

    def __post_init__(self) -> None:
        if min(self.attempts, self.tactics_per_expansion, self.expansion_iterations) < 1:
            raise ValueError("budget counts must be at least 1")


@dataclass(frozen=True)
class TreeSearchBudget:
    """Attempts x model generations invoked in tree expansions."""

    attempts: int
    expansions: int

    def __post_init__(self) -> None:
        if min(self.attempts, self.expansions) < 1:
            raise ValueError("budget counts must be at least 1")


@dataclass(frozen=True)
class TwoLevelBudget:
    """First-level paths x second-level paths per first-level path."""

    first_paths: int
    second_paths: int

    def __post_init__(self) -> None:
        if min(self.first_paths, self.second_paths) < 1:
            raise ValueError("budget counts must be at least 1")


BudgetSpec = Union[SinglePassBudget, BestFirstBudget, TreeSearchBudget, TwoLevelBudget]


def budget_total(spec: BudgetSpec) -> int:
    """Total sample count of a budget spec, in exact integer arithmetic."""
    if isinstance(spec, SinglePassBudget):
        return spec.total
    if isinstance(spec, BestFirstBudget):
        return spec.attempts * spec.tactics_per_expansion * spec.expansion_iterations
    if isinstance(spec, TreeSearchBudget):
        return spec.attempts * spec.expansions
    if isinstance(spec, TwoLevelBudget):
        return spec.first_paths * spec.second_paths
    raise TypeError(f"unknown budget spec {type(spec).__name__}")


_SCHEME_FACTORS = {
    "single": 1,
    "best-first": 3,
    "tree-search": 2,
    "two-level": 2,
}


def parse_budget(text: str) -> BudgetSpec:
    """Parse budget strings like ``64x5000``, ``best-first:1x32x100``.

    A bare integer is a single-pass budget and a bare ``JxK`` pair is a
    two-level budget; three bare factors read as best-first.
    """
    scheme, _, factors_text = text.strip().partition(":")
    if not factors_text:
        scheme, factors_text = "", scheme
    factors = [int(part) for part in factors_text.lower().split("x") if part]
    scheme = scheme.strip().lower()
    if scheme and scheme not in _SCHEME_FACTORS:
        raise ValueError(f"unknown budget scheme {scheme!r}")
    if not scheme:
        scheme = {1: "single", 2: "two-level", 3: "best-first"}.get(len(factors), "")
    if scheme not in _SCHEME_FACTORS or len(factors) != _SCHEME_FACTORS[scheme]:
        raise ValueError(f"cannot parse budget {text!r}")
    if scheme == "single":
        return SinglePassBudget(factors[0])
    if scheme == "best-first":
        return BestFirstBudget(*factors)
    if scheme == "tree-search":
        return TreeSearchBudget(*factors)
    return TwoLevelBudget(*factors)


def budget_to_dict(spec: BudgetSpec) -> dict:
    if isinstance(spec, SinglePassBudget):
        return {"scheme": "single", "factors": [spec.total]}
    if isinstance(spec, BestFirstBudget):
        return {
            "scheme": "best-first",
            "factors": [spec.attempts, spec.tactics_per_expansion, spec.expansion_iterations],
        }
    if isinstance(spec, TreeSearchBudget):
        return {"scheme": "tree-search", "factors": [spec.attempts, spec.expansions]}
    return {"scheme": "two-level", "factors": [spec.first_paths, spec.second_paths]}


def budget_from_dict(data: dict) -> BudgetSpec:
    factors = "x".join(str(f) for f in data["factors"])
    return parse_budget(f"{data['scheme']}:{factors}")


# ---------------------------------------------------------------------------
# Tree persistence
# ---------------------------------------------------------------------------

def save_tree(tree: SampleTree, directory: str | Path) -> Path:
    """Persist leaves as rendered documents plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "problem": tree.problem,
        "order": [kind.value for kind in tree.order],
        "level1_paths": tree.plan.level1_paths,
        "level2_paths": tree.plan.level2_paths,
        "base_seed": tree.plan.base_seed,
        "aborted": tree.aborted,
        "leaves": [],
    }
    for leaf in tree.leaves:
        name = f"leaf_{leaf.tag[0]:03d}_{leaf.tag[1]:03d}.txt"
        entry = {"tag": list(leaf.tag), "file": None, "error": leaf.error}
        if leaf.document is not None:
            (directory / name).write_text(render_document(leaf.document), encoding="utf-8")
            entry["file"] = name
        manifest["leaves"].append(entry)
    path = directory / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
