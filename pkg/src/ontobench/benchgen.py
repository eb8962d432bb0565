"""MCQ transformation of the proxy subset and benchmark serialization.

Generator replies are parsed as a JSON object with string fields ``query``
and ``answer`` (surrounding prose and code fences tolerated), then held to
the item invariants: 4-5 options labeled consecutively from A, pairwise
distinct option texts, and an answer label that exists.  Failures re-prompt
up to the retry budget and then produce a skip record with a stable reason
code; skipped instances are never backfilled from outside the subset.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import CorpusInstance
from .errors import BenchmarkBuildError, OracleError, ParseError, ValidationError
from .oracles import Oracle, PromptLibrary
from .pipeline import ProxySubset, Requirement, ScoredCandidate

logger = logging.getLogger(__name__)

DEFAULT_MCQ_RETRY_BUDGET = 2
VALID_LABELS = "ABCDE"
MIN_OPTIONS = 4
MAX_OPTIONS = 5

# Stable reason codes for skip records
REASON_PARSE = "parse_error"
REASON_OPTION_COUNT = "option_count"
REASON_LABEL_SEQUENCE = "label_sequence"
REASON_DUPLICATE_OPTIONS = "duplicate_options"
REASON_ANSWER_LABEL = "answer_not_in_options"
REASON_GENERATOR = "generator_error"

_OPTION_LINE_RE = re.compile(r"^\s*([A-E])[.):]\s*(.*)$")


class McqInvalid(ValidationError):
    def __init__(self, reason: str, detail: str):
        self.reason = reason
        super().__init__(f"{reason}: {detail}")


@dataclass(frozen=True)
class McqItem:
    query: str
    answer: str
    source_instance_id: str
    options: tuple[tuple[str, str], ...]


@dataclass
class SkipRecord:
    instance_id: str
    reason: str
    detail: str = ""

    def to_record(self) -> dict:
        return {"instance_id": self.instance_id, "reason": self.reason, "detail": self.detail}


@dataclass
class Benchmark:
    benchmark_id: str
    requirement: Requirement
    items: list[McqItem]
    provenance: str = ""

    def __post_init__(self):
        if not self.items:
            raise ValidationError(f"benchmark {self.benchmark_id!r} has no items")


def parse_options(query: str) -> list[tuple[str, str]]:
    """Extract labeled options from the stem; lines that do not start a new
    option continue the current one."""
    options: list[tuple[str, str]] = []
    for line in query.splitlines():
        match = _OPTION_LINE_RE.match(line)
        if match:
            options.append((match.group(1), match.group(2).strip()))
        elif options and line.strip():
            label, text = options[-1]
            options[-1] = (label, (text + " " + line.strip()).strip())
    return options


def looks_like_mcq(text: str) -> bool:
    """Heuristic pre-check: four or more distinct option markers present."""
    return len({label for label, _ in parse_options(text)}) >= MIN_OPTIONS


def _normalize_option(text: str) -> str:
    return " ".join(text.split())


def validate_mcq(query: str, answer: str, source_instance_id: str) -> McqItem:
    """Check every item invariant; raises McqInvalid with a reason code."""
    options = parse_options(query)
    if not MIN_OPTIONS <= len(options) <= MAX_OPTIONS:
        raise McqInvalid(REASON_OPTION_COUNT, f"found {len(options)} option(s)")
    labels = [label for label, _ in options]
    expected = list(VALID_LABELS[: len(options)])
    if labels != expected:
        raise McqInvalid(
            REASON_LABEL_SEQUENCE,
            f"labels {labels} are not consecutive from A",
        )
    normalized = [_normalize_option(text) for _, text in options]
    if len(set(normalized)) != len(normalized):
        dupes = sorted({t for t in normalized if normalized.count(t) > 1})
        raise McqInvalid(REASON_DUPLICATE_OPTIONS, f"duplicated option text {dupes[:2]}")
    if answer not in labels:
        raise McqInvalid(REASON_ANSWER_LABEL, f"answer {answer!r} not among {labels}")
    return McqItem(
        query=query,
        answer=answer,
        source_instance_id=source_instance_id,
        options=tuple(options),
    )


def _extract_json_object(reply: str) -> dict:
    text = re.sub(r"```[a-zA-Z]*", "", reply).replace("```", "")
    start = text.find("{")
    if start < 0:
        raise McqInvalid(REASON_PARSE, "no JSON object in reply")
    try:
        obj, _ = json.JSONDecoder().raw_decode(text[start:])
    except json.JSONDecodeError as exc:
        raise McqInvalid(REASON_PARSE, f"malformed JSON: {exc}")
    if not isinstance(obj, dict):
        raise McqInvalid(REASON_PARSE, "reply JSON is not an object")
    if not isinstance(obj.get("query"), str) or not isinstance(obj.get("answer"), str):
        raise McqInvalid(REASON_PARSE, 'missing string fields "query"/"answer"')
    return obj


def to_mcq(
    instance: CorpusInstance,
    generator: Oracle,
    retry_budget: int = DEFAULT_MCQ_RETRY_BUDGET,
    templates: PromptLibrary | None = None,
    domain: str = "science",
) -> McqItem | SkipRecord:
    """Transform one QA pair into a validated MCQ, or a skip record."""
    templates = templates or PromptLibrary()
    content = f"Question: {instance.query}\nReference answer: {instance.answer}"
    prompt = templates.get("mcq_transform").render(domain=domain, input_content=content)
    last_reason, last_detail = REASON_GENERATOR, "no attempt made"
    for _ in range(1 + max(0, retry_budget)):
        try:
            reply = generator.complete(prompt)
        except OracleError as exc:
            last_reason, last_detail = REASON_GENERATOR, str(exc)
            continue
        try:
            obj = _extract_json_object(reply)
            return validate_mcq(
                obj["query"], obj["answer"].strip(), instance.instance_id
            )
        except McqInvalid as exc:
            last_reason, last_detail = exc.reason, str(exc)
    logger.warning("skipping %s: %s", instance.instance_id, last_detail)
    return SkipRecord(instance_id=instance.instance_id, reason=last_reason, detail=last_detail)


@dataclass
class BuildReport:
    skips: list[SkipRecord] = field(default_factory=list)
    passthrough_mcqs: int = 0

    def to_record(self) -> dict:
        return {
            "skips": [s.to_record() for s in self.skips],
            "passthrough_mcqs": self.passthrough_mcqs,
        }


def build_benchmark(
    subset: ProxySubset | Sequence[ScoredCandidate],
    generator: Oracle,
    requirement: Requirement,
    benchmark_id: str,
    provenance: str = "",
    retry_budget: int = DEFAULT_MCQ_RETRY_BUDGET,
    templates: PromptLibrary | None = None,
    domain: str = "science",
) -> tuple[Benchmark, BuildReport]:
    """Map the MCQ transform over the subset, preserving subset order.

    Instances that already look like MCQs ride the same path; the prompt
    instructs the generator to preserve their stem and options.  If every
    instance is skipped the build fails with the aggregate report.
    """
    members = subset.members if isinstance(subset, ProxySubset) else list(subset)
    if not members:
        raise ValidationError("cannot build a benchmark from an empty subset")
    report = BuildReport()
    items: list[McqItem] = []
    for cand in members:
        inst = cand.instance
        if looks_like_mcq(inst.query):
            report.passthrough_mcqs += 1
        result = to_mcq(inst, generator, retry_budget, templates, domain)
        if isinstance(result, SkipRecord):
            report.skips.append(result)
        else:
            items.append(result)
    if not items:
        raise BenchmarkBuildError(
            f"all {len(members)} instance(s) were skipped",
            skips=[s.to_record() for s in report.skips],
        )
    benchmark = Benchmark(
        benchmark_id=benchmark_id,
        requirement=requirement,
        items=items,
        provenance=provenance,
    )
    logger.info(
        "built benchmark %s: %d item(s), %d skip(s)",
        benchmark_id, len(items), len(report.skips),
    )
    return benchmark, report


# ---------------------------------------------------------------------------
# Serialization: header record, then one JSON object per item.
# ---------------------------------------------------------------------------


def save_benchmark(benchmark: Benchmark, path: str | Path) -> None:
    header = {
        "benchmark_id": benchmark.benchmark_id,
        "requirement_id": benchmark.requirement.requirement_id,
        "requirement_text": benchmark.requirement.text,
        "provenance": benchmark.provenance,
        "item_count": len(benchmark.items),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
        for item in benchmark.items:
            record = {
                "query": item.query,
                "answer": item.answer,
                "source_instance_id": item.source_instance_id,
            }
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def load_benchmark(path: str | Path) -> Benchmark:
    """Load and re-validate; every stored item must still pass the invariants."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ParseError("missing benchmark header", str(path), 1)
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad benchmark header: {exc}", str(path), 1)
        items: list[McqItem] = []
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad benchmark item: {exc}", str(path), lineno)
            items.append(
                validate_mcq(
                    record["query"], record["answer"], record.get("source_instance_id", "")
                )
            )
    requirement = Requirement(
        requirement_id=header.get("requirement_id", "unknown"),
        text=header.get("requirement_text", "unknown"),
    )
    return Benchmark(
        benchmark_id=header.get("benchmark_id", path.stem),
        requirement=requirement,
        items=items,
        provenance=header.get("provenance", ""),
    )
