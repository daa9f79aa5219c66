"""Multi-paradigm reasoning orchestration: chained natural-language,
formal-proof, and executable-code reasoning over a pluggable generator,
with sampling, evaluation, and dataset-forging machinery around it."""

from .template import (
    ParadigmKind,
    ParseResult,
    ReasoningDocument,
    Segment,
    extract_final_answer,
    extract_proof,
    parse_document,
    render_document,
)
from .chain import ChainConfig, preset_for_task, run_chain, solve_and_grade
from .sampling import SamplingPlan, budget_total, first_verified, parse_budget, run_sampling
from .evaluation import (
    AnswerPolicy,
    answers_equivalent,
    grade_answer,
    majority_vote,
    normalize_answer,
    score_benchmark,
)
from .forge import (
    LeakagePolicy,
    augment_sample,
    build_stage_corpus,
    corpus_manifest,
    leakage_filter,
    levenshtein,
    revise_loop,
    similarity,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerPolicy",
    "ChainConfig",
    "LeakagePolicy",
    "ParadigmKind",
    "ParseResult",
    "ReasoningDocument",
    "SamplingPlan",
    "Segment",
    "answers_equivalent",
    "augment_sample",
    "budget_total",
    "build_stage_corpus",
    "corpus_manifest",
    "extract_final_answer",
    "extract_proof",
    "first_verified",
    "grade_answer",
    "leakage_filter",
    "levenshtein",
    "majority_vote",
    "normalize_answer",
    "parse_budget",
    "parse_document",
    "preset_for_task",
    "render_document",
    "revise_loop",
    "run_chain",
    "run_sampling",
    "score_benchmark",
    "similarity",
    "solve_and_grade",
]
