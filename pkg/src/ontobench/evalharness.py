"""Benchmark administration and ranking-consistency statistics.

Each item is posed once with a fixed instruction wrapper; the reply is
parsed by its first standalone A-E token, and unparseable replies count as
incorrect.  Accuracies are converted to average (fractional) ranks, then
compared with Spearman's rho (Pearson on the rank vectors, tie-correct by
construction) and Kendall's tau-b.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .benchgen import Benchmark
from .errors import OracleError, ValidationError
from .oracles import Oracle, PromptLibrary

logger = logging.getLogger(__name__)

_ANSWER_RE = re.compile(r"\b([A-E])\b")


@dataclass
class ItemOutcome:
    reply: str
    parsed: str | None
    correct: bool
    failed: bool = False


@dataclass
class ModelRun:
    model_name: str
    per_item: list[ItemOutcome]
    accuracy: float

    @classmethod
    def from_outcomes(cls, model_name: str, outcomes: list[ItemOutcome]) -> "ModelRun":
        correct = sum(1 for o in outcomes if o.correct)
        return cls(
            model_name=model_name,
            per_item=outcomes,
            accuracy=correct / len(outcomes) if outcomes else 0.0,
        )


def parse_answer(reply: str) -> str | None:
    """First standalone A-E token, or None."""
    match = _ANSWER_RE.search(reply)
    return match.group(1) if match else None


def administer(
    benchmark: Benchmark,
    model: Oracle | None = None,
    replies: Sequence[str] | None = None,
    model_name: str | None = None,
    templates: PromptLibrary | None = None,
) -> ModelRun:
    """Run one model (live oracle or recorded replies) over the benchmark.

    Recorded replies are aligned by item index and must match the item
    count.  Endpoint failures mark the item incorrect and flagged.
    """
    if (model is None) == (replies is None):
        raise ValidationError("provide exactly one of model or replies")
    templates = templates or PromptLibrary()
    if replies is not None and len(replies) != len(benchmark.items):
        raise ValidationError(
            f"replies length {len(replies)} != item count {len(benchmark.items)}"
        )
    name = model_name or (model.name if model is not None else "recorded")
    outcomes: list[ItemOutcome] = []
    for idx, item in enumerate(benchmark.items):
        if replies is not None:
            reply = replies[idx]
            failed = False
        else:
            prompt = templates.get("model_answer").render(query=item.query)
            try:
                reply = model.complete(prompt)
                failed = False
            except OracleError as exc:
                logger.warning("model %s failed on item %d: %s", name, idx, exc)
                reply, failed = "", True
        parsed = parse_answer(reply) if not failed else None
        outcomes.append(
            ItemOutcome(
                reply=reply,
                parsed=parsed,
                correct=parsed == item.answer,
                failed=failed,
            )
        )
    return ModelRun.from_outcomes(name, outcomes)


def load_replies(path: str | Path) -> list[str]:
    """Recorded-replies file: one reply line per item, aligned by index."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


# ---------------------------------------------------------------------------
# Rank statistics
# ---------------------------------------------------------------------------


def tied_ranks(values: Sequence[float], descending: bool = True) -> list[float]:
    """Average (fractional) ranks: tied values share the mean of the
    positions they occupy; rank 1 goes to the largest value when descending."""
    if not values:
        raise ValidationError("tied_ranks needs at least one value")
    order = sorted(
        range(len(values)),
        key=lambda i: -values[i] if descending else values[i],
    )
    ranks = [0.0] * len(values)
    pos = 0
    while pos < len(order):
        end = pos
        while end + 1 < len(order) and values[order[end + 1]] == values[order[pos]]:
            end += 1
        avg = (pos + end) / 2 + 1
        for i in range(pos, end + 1):
            ranks[order[i]] = avg
        pos = end + 1
    return ranks


def _check_pair(ranks_a: Sequence[float], ranks_b: Sequence[float]) -> int:
    if len(ranks_a) != len(ranks_b):
        raise ValidationError(
            f"rank vectors differ in length: {len(ranks_a)} vs {len(ranks_b)}"
        )
    if len(ranks_a) < 2:
        raise ValidationError("need at least 2 observations")
    return len(ranks_a)


def is_degenerate(ranks: Sequence[float]) -> bool:
    return len(set(ranks)) <= 1


def spearman(ranks_a: Sequence[float], ranks_b: Sequence[float]) -> float:
    """Pearson correlation of two tied-rank vectors.

    A vector with no variance (full tie) makes the coefficient undefined;
    it is reported as 0 and the degeneracy is detectable via is_degenerate.
    """
    n = _check_pair(ranks_a, ranks_b)
    if is_degenerate(ranks_a) or is_degenerate(ranks_b):
        logger.warning("degenerate (all-tie) ranking; spearman reported as 0")
        return 0.0
    mean_a = sum(ranks_a) / n
    mean_b = sum(ranks_b) / n
    da = [a - mean_a for a in ranks_a]
    db = [b - mean_b for b in ranks_b]
    cov = sum(x * y for x, y in zip(da, db))
    var_a = sum(x * x for x in da)
    var_b = sum(y * y for y in db)
    return cov / math.sqrt(var_a * var_b)


def kendall_tau_b(ranks_a: Sequence[float], ranks_b: Sequence[float]) -> float:
    """Tau-b: (C - D) / sqrt((n0 - t_a)(n0 - t_b)) with the standard tie terms."""
    n = _check_pair(ranks_a, ranks_b)
    if is_degenerate(ranks_a) or is_degenerate(ranks_b):
        logger.warning("degenerate (all-tie) ranking; kendall tau-b reported as 0")
        return 0.0
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = ranks_a[i] - ranks_a[j]
            db = ranks_b[i] - ranks_b[j]
            prod = da * db
            if prod > 0:
                concordant += 1
            elif prod < 0:
                discordant += 1
    n0 = n * (n - 1) // 2
    t_a = sum(c * (c - 1) // 2 for c in Counter(ranks_a).values())
    t_b = sum(c * (c - 1) // 2 for c in Counter(ranks_b).values())
    denom = math.sqrt((n0 - t_a) * (n0 - t_b))
    return (concordant - discordant) / denom


# ---------------------------------------------------------------------------
# Consistency report
# ---------------------------------------------------------------------------


@dataclass
class RankingReport:
    model_accuracies: dict[str, float]
    reference_values: dict[str, float]
    ranks: dict[str, float]
    reference_ranks: dict[str, float]
    spearman: float
    kendall_tau_b: float
    reference_name: str = "reference"
    degenerate: bool = False
    flags: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "reference_name": self.reference_name,
            "model_accuracies": dict(sorted(self.model_accuracies.items())),
            "reference_values": dict(sorted(self.reference_values.items())),
            "ranks": dict(sorted(self.ranks.items())),
            "reference_ranks": dict(sorted(self.reference_ranks.items())),
            "spearman": self.spearman,
            "kendall_tau_b": self.kendall_tau_b,
            "degenerate": self.degenerate,
            "flags": list(self.flags),
        }

    def format_table(self) -> str:
        width = max([len(m) for m in self.model_accuracies] + [5])
        lines = [
            f"{'model':<{width}}  {'acc':>7} {'rank':>6}  {'ref':>7} {'ref rank':>8}"
        ]
        by_rank = sorted(self.ranks.items(), key=lambda kv: (kv[1], kv[0]))
        for model, rank in by_rank:
            lines.append(
                f"{model:<{width}}  {self.model_accuracies[model]:>7.4f} {rank:>6.2f}"
                f"  {self.reference_values[model]:>7.4f} {self.reference_ranks[model]:>8.2f}"
            )
        lines.append(
            f"spearman = {self.spearman:.4f}   kendall tau-b = {self.kendall_tau_b:.4f}"
            + ("   [degenerate]" if self.degenerate else "")
        )
        return "\n".join(lines)


def consistency_report(
    runs: Sequence[ModelRun] | Mapping[str, float],
    reference: Mapping[str, float],
    reference_name: str = "reference",
    reference_is_rank: bool = False,
) -> RankingReport:
    """Rank agreement between benchmark-induced accuracies and a reference.

    Accepts either completed model runs or a plain model -> accuracy map;
    the model-name sets must match exactly.
    """
    if isinstance(runs, Mapping):
        accuracies = dict(runs)
    else:
        accuracies = {run.model_name: run.accuracy for run in runs}
    missing = sorted(set(reference) - set(accuracies))
    extra = sorted(set(accuracies) - set(reference))
    if missing or extra:
        raise ValidationError(
            f"model sets differ (missing from runs: {missing}, "
            f"missing from reference: {extra})"
        )
    models = sorted(accuracies)
    acc_vec = [accuracies[m] for m in models]
    ref_vec = [reference[m] for m in models]
    ranks = tied_ranks(acc_vec, descending=True)
    ref_ranks = tied_ranks(ref_vec, descending=not reference_is_rank)
    rho = spearman(ranks, ref_ranks)
    tau = kendall_tau_b(ranks, ref_ranks)
    degenerate = is_degenerate(ranks) or is_degenerate(ref_ranks)
    flags = ["degenerate-ranking"] if degenerate else []
    return RankingReport(
        model_accuracies=dict(zip(models, acc_vec)),
        reference_values=dict(zip(models, ref_vec)),
        ranks=dict(zip(models, ranks)),
        reference_ranks=dict(zip(models, ref_ranks)),
        spearman=rho,
        kendall_tau_b=tau,
        reference_name=reference_name,
        degenerate=degenerate,
        flags=flags,
    )


def save_report(report: RankingReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_record(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def load_accuracies(path: str | Path) -> dict[str, float]:
    """Accuracy file: one JSON object mapping model name to accuracy."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValidationError(f"accuracy file {path} must hold a JSON object")
    return {str(k): float(v) for k, v in data.items()}
