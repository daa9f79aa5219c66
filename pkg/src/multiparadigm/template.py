"""Render and parse the universal multi-paradigm transcript template.

Every transcript, training record, and model completion in this project is
text in one fixed dialect: a problem header, then a sequence of paradigm
blocks (natural-language reasoning, a formal proof in a ``lean4`` fence, or
algorithmic code in a ``python`` fence, each code fence optionally followed
by its captured output fence), and finally an optional summary block whose
boxed value is the document's answer.

The header phrases and fence tags below are frozen byte-exact constants:
generators are prompted with them and parsers key on them, so changing any
of them breaks interop with previously produced text.

``render_document`` is strict (the document must satisfy its invariants);
``parse_document`` is deliberately lenient and never fails hard, because
sampled model text is messy and a crashed parse wastes a paid sample.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

__all__ = [
    "ParadigmKind",
    "Segment",
    "ReasoningDocument",
    "ParseResult",
    "InvariantViolation",
    "render_document",
    "parse_document",
    "extract_final_answer",
    "extract_proof",
    "find_boxed_values",
    "problem_prefix_length",
    "PROBLEM_HEADER",
    "NLR_HEADER",
    "SR_LEAD_IN",
    "SR_HEADER",
    "AR_LEAD_IN",
    "AR_HEADER",
    "SUMMARY_HEADER",
    "SR_SOURCE_FENCE",
    "SR_OUTPUT_FENCE",
    "AR_SOURCE_FENCE",
    "AR_OUTPUT_FENCE",
]

# Frozen template constants. Do not edit: they are the wire format.
PROBLEM_HEADER = "### Problem:"
NLR_HEADER = "Let's go through this step-by-step:"
SR_LEAD_IN = "Let's write the corresponding formal proof in Lean 4 to prove this:"
SR_HEADER = "### Formal proof in Lean 4"
AR_LEAD_IN = "Let's use Python to perform these calculations:"
AR_HEADER = "### Code in Python"
SUMMARY_HEADER = "### Summary"

SR_SOURCE_FENCE = "lean4"
SR_OUTPUT_FENCE = "lean_output"
AR_SOURCE_FENCE = "python"
AR_OUTPUT_FENCE = "output"


class InvariantViolation(ValueError):
    """A document breaks a structural invariant and cannot be rendered."""


class ParadigmKind(str, Enum):
    NLR = "nlr"
    SR = "sr"
    AR = "ar"
    SUMMARY = "summary"

    @classmethod
    def from_name(cls, name: str) -> "ParadigmKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown paradigm kind: {name!r}") from None


# Which paradigm kinds carry a fenced source block, and their fence tags.
_SOURCE_FENCES = {
    ParadigmKind.SR: (SR_SOURCE_FENCE, SR_OUTPUT_FENCE),
    ParadigmKind.AR: (AR_SOURCE_FENCE, AR_OUTPUT_FENCE),
}
_FENCE_KINDS = {SR_SOURCE_FENCE: ParadigmKind.SR, AR_SOURCE_FENCE: ParadigmKind.AR}
_OUTPUT_FENCE_FOR = {SR_SOURCE_FENCE: SR_OUTPUT_FENCE, AR_SOURCE_FENCE: AR_OUTPUT_FENCE}
_OUTPUT_TAGS = {SR_OUTPUT_FENCE, AR_OUTPUT_FENCE}

VERIFIED_UNKNOWN = "unknown"
VERIFIED_OK = "verified"
VERIFIED_REFUTED = "refuted"


@dataclass
class Segment:
    """One paradigm block: prose, proof source, or code, plus tool output.

    ``verified`` is runtime metadata recorded when a proof block was
    submitted to a prover; it is not part of the text format and does not
    survive a render/parse round trip.
    """

    kind: ParadigmKind
    body: str
    tool_output: str | None = None
    verified: str = VERIFIED_UNKNOWN

    def validate(self) -> None:
        if self.kind not in _SOURCE_FENCES and self.tool_output is not None:
            raise InvariantViolation(
                f"{self.kind.name} segments cannot carry tool output"
            )
        if self.verified != VERIFIED_UNKNOWN and self.kind is not ParadigmKind.SR:
            raise InvariantViolation(
                f"verified state is only meaningful on SR segments, got {self.kind.name}"
            )
        for text in (self.body, self.tool_output or ""):
            for line in text.split("\n"):
                if line.lstrip().startswith("```"):
                    raise InvariantViolation(
                        "segment text may not contain fence markers; "
                        "they would corrupt the rendered template"
                    )


@dataclass
class ReasoningDocument:
    """An ordered transcript of paradigm segments for one problem."""

    problem: str
    segments: list[Segment] = field(default_factory=list)
    final_answer: str | None = None
    # Set when a chain ran out of token budget; not part of the text format.
    incomplete: bool = field(default=False, compare=False)

    def validate(self) -> None:
        for i, seg in enumerate(self.segments):
            seg.validate()
            if seg.kind is ParadigmKind.SUMMARY and i != len(self.segments) - 1:
                raise InvariantViolation("SUMMARY segment must be last")
        boxed = extract_final_answer(self)
        if boxed is not None and self.final_answer is not None and boxed != self.final_answer:
            raise InvariantViolation(
                f"final_answer {self.final_answer!r} disagrees with boxed value {boxed!r}"
            )

    def kinds(self) -> list[ParadigmKind]:
        return [seg.kind for seg in self.segments]


@dataclass
class ParseResult:
    document: ReasoningDocument
    warnings: list[str]


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _render_segment(seg: Segment) -> str:
    if seg.kind is ParadigmKind.NLR:
        return f"{NLR_HEADER}\n{seg.body}"
    if seg.kind is ParadigmKind.SUMMARY:
        return f"{SUMMARY_HEADER}\n{seg.body}"
    source_tag, output_tag = _SOURCE_FENCES[seg.kind]
    lead_in, header = (
        (SR_LEAD_IN, SR_HEADER) if seg.kind is ParadigmKind.SR else (AR_LEAD_IN, AR_HEADER)
    )
    lines = [lead_in, header, f"```{source_tag}", seg.body, "```"]
    if seg.tool_output is not None:
        lines += [f"```{output_tag}", seg.tool_output, "```"]
    return "\n".join(lines)


def render_document(doc: ReasoningDocument) -> str:
    """Emit the canonical template text for ``doc``.

    Deterministic and pure: byte-identical output for equal inputs.
    Raises InvariantViolation when the document breaks template structure.
    """
    doc.validate()
    parts = [f"{PROBLEM_HEADER}\n{doc.problem}"]
    parts.extend(_render_segment(seg) for seg in doc.segments)
    return "\n\n".join(parts) + "\n"


def problem_prefix_length(problem: str) -> int:
    """Character offset where the problem block (plus separator) ends.

    Rendered documents with at least one segment start the first paradigm
    block at exactly this offset.
    """
    return len(PROBLEM_HEADER) + 1 + len(problem) + 2


# ---------------------------------------------------------------------------
# Boxed-value extraction
# ---------------------------------------------------------------------------

_BOX_OPEN_RE = re.compile(r"\\?boxed\s*\{")


def find_boxed_values(text: str) -> list[str]:
    """All ``boxed{...}``/``\\boxed{...}`` contents in order, braces balanced."""
    values = []
    for match in _BOX_OPEN_RE.finditer(text):
        depth = 1
        start = match.end()
        for pos in range(start, len(text)):
            ch = text[pos]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    values.append(text[start:pos])
                    break
    return values


def extract_final_answer(doc: ReasoningDocument) -> str | None:
    """The boxed value in the summary, else the last boxed value anywhere.

    Strips only the box wrapper; normalization is the evaluator's job.
    """
    last = None
    for seg in doc.segments:
        boxes = find_boxed_values(seg.body)
        if boxes:
            last = boxes[-1]
            if seg.kind is ParadigmKind.SUMMARY:
                return boxes[-1]
    return last


def extract_proof(doc: ReasoningDocument) -> str | None:
    """Body of the last proof segment, verbatim; None if there is none."""
    for seg in reversed(doc.segments):
        if seg.kind is ParadigmKind.SR:
            return seg.body
    return None


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_PROBLEM_RE = re.compile(r"^#{0,6}\s*Problem\s*:\s*(.*)$", re.IGNORECASE)
_SOLUTION_RE = re.compile(r"^#{0,6}\s*Solution\s*:?\s*$", re.IGNORECASE)
_NLR_RE = re.compile(r"^let'?s go through this step-by-step(.*)$", re.IGNORECASE)
_NLR_TAIL_RE = re.compile(r"^(:|\s+in natural language\s*[.:])\s*", re.IGNORECASE)
_SR_HEADER_RE = re.compile(r"^#{1,6}\s*Formal proof in Lean 4\s*:?\s*$", re.IGNORECASE)
_SR_LEAD_RE = re.compile(
    r"^(?:next,?\s*)?let'?s write the corresponding formal proof in lean 4.*$",
    re.IGNORECASE,
)
_AR_HEADER_RE = re.compile(r"^#{1,6}\s*Code in Python\s*:?\s*$", re.IGNORECASE)
_AR_LEAD_RE = re.compile(
    r"^(?:next,?\s*)?let'?s use python(?: code)? to perform.*$", re.IGNORECASE
)
_SUMMARY_RE = re.compile(r"^#{1,6}\s*Summary\s*:?\s*$", re.IGNORECASE)
_FENCE_OPEN_RE = re.compile(r"^```([A-Za-z0-9_+-]*)\s*$")

# Furniture line predicates per upcoming source-fence tag.
_FURNITURE_FOR_TAG = {
    SR_SOURCE_FENCE: (_SR_HEADER_RE, _SR_LEAD_RE),
    AR_SOURCE_FENCE: (_AR_HEADER_RE, _AR_LEAD_RE),
}


@dataclass
class _Fence:
    tag: str
    lines: list[str]
    closed: bool


def _tokenize(lines: list[str]) -> list[object]:
    """Split raw lines into alternating text runs and fenced blocks."""
    tokens: list[object] = []
    text_run: list[str] = []
    i = 0
    while i < len(lines):
        match = _FENCE_OPEN_RE.match(lines[i].strip())
        if match:
            if text_run:
                tokens.append(text_run)
                text_run = []
            tag = match.group(1)
            content: list[str] = []
            i += 1
            closed = False
            while i < len(lines):
                if lines[i].strip() == "```":
                    closed = True
                    i += 1
                    break
                content.append(lines[i])
                i += 1
            tokens.append(_Fence(tag, content, closed))
        else:
            text_run.append(lines[i])
            i += 1
    if text_run:
        tokens.append(text_run)
    return tokens


def _strip_trailing_blanks(lines: list[str]) -> list[str]:
    end = len(lines)
    while end > 0 and not lines[end - 1].strip():
        end -= 1
    return lines[:end]


def _strip_leading_blanks(lines: list[str]) -> list[str]:
    start = 0
    while start < len(lines) and not lines[start].strip():
        start += 1
    return lines[start:]


def _body(lines: list[str]) -> str:
    return "\n".join(_strip_trailing_blanks(_strip_leading_blanks(lines)))


def _next_source_tag(tokens: list[object], index: int) -> str | None:
    """Tag of the next fence token, skipping nothing (adjacency matters)."""
    if index + 1 < len(tokens) and isinstance(tokens[index + 1], _Fence):
        tag = tokens[index + 1].tag
        if tag in _FENCE_KINDS:
            return tag
    return None


class _Assembler:
    """Accumulates segments while enforcing SUMMARY-last during parsing."""

    def __init__(self) -> None:
        self.segments: list[Segment] = []
        self.warnings: list[str] = []
        self._summary: list[str] | None = None

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    def start_summary(self, lines: list[str]) -> None:
        if self._summary is not None:
            self.warn("second summary block folded into the first")
            self._summary.extend(lines)
        else:
            self._summary = list(lines)

    def add_segment(self, seg: Segment, raw_lines: list[str]) -> None:
        if self._summary is not None:
            self.warn(f"{seg.kind.name} block after summary folded into summary text")
            self._summary.extend(raw_lines)
        else:
            self.segments.append(seg)

    def add_nlr(self, lines: list[str], *, warning: str | None = None) -> None:
        body = _body(lines)
        if not body:
            return
        if self._summary is not None:
            self.warn("text after summary folded into summary text")
            self._summary.extend(lines)
            return
        if warning:
            self.warn(warning)
        self.segments.append(Segment(ParadigmKind.NLR, body))

    def extend_last_nlr(self, lines: list[str], *, warning: str | None = None) -> None:
        """Attach stray text to the nearest (last) NLR segment."""
        body = _body(lines)
        if not body:
            return
        if self._summary is not None:
            self._summary.extend(lines)
            return
        target = None
        for seg in reversed(self.segments):
            if seg.kind is ParadigmKind.NLR:
                target = seg
                break
        if warning:
            self.warn(warning)
        if target is None:
            self.segments.append(Segment(ParadigmKind.NLR, body))
        else:
            target.body = target.body + "\n" + body

    def finish(self) -> list[Segment]:
        if self._summary is not None:
            self.segments.append(Segment(ParadigmKind.SUMMARY, _body(self._summary)))
        return self.segments


def _split_text_run(
    run: list[str], next_tag: str | None, asm: _Assembler, *, leading: bool, trailing: bool
) -> None:
    """Classify one inter-fence text run into NLR/SUMMARY blocks.

    Header furniture that introduces the immediately following fence is
    dropped; bare ``Solution:`` labels are dropped anywhere. Text with no
    recognized header becomes (or extends) natural-language reasoning with
    a warning, except trailing text containing a boxed value, which reads
    as the summary statement.
    """
    lines = list(run)
    if next_tag is not None:
        furniture = _FURNITURE_FOR_TAG[next_tag]
        end = len(lines)
        while end > 0:
            line = lines[end - 1].strip()
            if not line or any(pat.match(line) for pat in furniture):
                end -= 1
            else:
                break
        lines = lines[:end]

    blocks: list[tuple[str, list[str]]] = []  # (kind, lines); kind in nlr/summary/plain
    current_kind = "plain"
    current: list[str] = []

    def flush() -> None:
        nonlocal current
        if current or current_kind != "plain":
            blocks.append((current_kind, current))
        current = []

    for line in lines:
        stripped = line.strip()
        if _SOLUTION_RE.match(stripped):
            continue
        nlr_match = _NLR_RE.match(stripped)
        if nlr_match:
            flush()
            current_kind = "nlr"
            rest = nlr_match.group(1)
            tail = _NLR_TAIL_RE.match(rest)
            if tail:
                rest = rest[tail.end():]
            if rest.strip():
                current.append(rest.strip())
            continue
        if _SUMMARY_RE.match(stripped):
            flush()
            current_kind = "summary"
            continue
        current.append(line)
    flush()

    for index, (kind, block_lines) in enumerate(blocks):
        if kind == "nlr":
            asm.add_nlr(block_lines)
        elif kind == "summary":
            asm.start_summary(block_lines)
        else:
            body = _body(block_lines)
            if not body:
                continue
            is_last_block = index == len(blocks) - 1
            if trailing and is_last_block and find_boxed_values(body):
                asm.start_summary(block_lines)
            elif leading and not asm.segments and index == 0:
                asm.add_nlr(
                    block_lines,
                    warning="text without a paradigm header treated as natural-language reasoning",
                )
            elif trailing and is_last_block:
                asm.extend_last_nlr(
                    block_lines,
                    warning="trailing text attached to the nearest reasoning segment",
                )
            else:
                asm.add_nlr(
                    block_lines,
                    warning="text without a paradigm header treated as natural-language reasoning",
                )


def _fence_raw(fence: _Fence) -> list[str]:
    raw = [f"```{fence.tag}"] + fence.lines
    if fence.closed:
        raw.append("```")
    return raw


def parse_document(text: str) -> ParseResult:
    """Best-effort segmentation of template text into a document.

    Never fails hard: malformed structure degrades to natural-language
    segments plus warnings. The inverse of ``render_document`` on canonical
    text.
    """
    lines = text.split("\n")

    # Peel off the problem block if the text opens with a problem header.
    problem = ""
    start = 0
    while start < len(lines) and not lines[start].strip():
        start += 1
    if start < len(lines):
        header = _PROBLEM_RE.match(lines[start].strip())
        if header:
            problem_lines: list[str] = []
            if header.group(1).strip():
                problem_lines.append(header.group(1).strip())
            start += 1
            while start < len(lines):
                stripped = lines[start].strip()
                if (
                    _NLR_RE.match(stripped)
                    or _SUMMARY_RE.match(stripped)
                    or _SOLUTION_RE.match(stripped)
                    or _SR_HEADER_RE.match(stripped)
                    or _SR_LEAD_RE.match(stripped)
                    or _AR_HEADER_RE.match(stripped)
                    or _AR_LEAD_RE.match(stripped)
                    or _FENCE_OPEN_RE.match(stripped)
                ):
                    break
                problem_lines.append(lines[start])
                start += 1
            problem = _body(problem_lines)

    tokens = _tokenize(lines[start:])
    asm = _Assembler()

    index = 0
    while index < len(tokens):
        token = tokens[index]
        if isinstance(token, _Fence):
            if not token.closed:
                asm.warn(f"unclosed ```{token.tag} fence kept as text")
                asm.extend_last_nlr(_fence_raw(token))
            elif token.tag in _FENCE_KINDS:
                kind = _FENCE_KINDS[token.tag]
                seg = Segment(kind, "\n".join(token.lines))
                raw = _fence_raw(token)
                # An output fence directly after its source fence is the
                # captured tool output; blank text runs in between are noise.
                peek = index + 1
                if (
                    peek < len(tokens)
                    and not isinstance(tokens[peek], _Fence)
                    and not _body(tokens[peek])
                ):
                    peek += 1
                if (
                    peek < len(tokens)
                    and isinstance(tokens[peek], _Fence)
                    and tokens[peek].closed
                    and tokens[peek].tag == _OUTPUT_FENCE_FOR[token.tag]
                ):
                    seg.tool_output = "\n".join(tokens[peek].lines)
                    raw += _fence_raw(tokens[peek])
                    index = peek
                asm.add_segment(seg, raw)
            elif token.tag in _OUTPUT_TAGS:
                attached = False
                if asm.segments:
                    last = asm.segments[-1]
                    if (
                        last.kind in _SOURCE_FENCES
                        and last.tool_output is None
                        and _SOURCE_FENCES[last.kind][1] == token.tag
                    ):
                        last.tool_output = "\n".join(token.lines)
                        attached = True
                        asm.warn(f"stray ```{token.tag} block attached to previous segment")
                if not attached:
                    asm.warn(f"orphan ```{token.tag} block kept as text")
                    asm.extend_last_nlr(_fence_raw(token))
            else:
                asm.warn(f"unrecognized fence tag {token.tag!r} kept as text")
                asm.extend_last_nlr(_fence_raw(token))
        else:
            _split_text_run(
                token,
                _next_source_tag(tokens, index),
                asm,
                leading=index == 0,
                trailing=index == len(tokens) - 1,
            )
        index += 1

    segments = asm.finish()
    doc = ReasoningDocument(problem=problem, segments=segments)
    doc.final_answer = extract_final_answer(doc)
    return ParseResult(doc, asm.warnings)

