"""Query -> knowledge-unit mapping and its evaluation.

Contains the deterministic fuzzy-keyword baseline tagger, the
oracle-backed external tagger and batch annotator, the synthetic
training-data generator, and the fuzzy-F1 scorecard used to evaluate any
tagger against gold unit names.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import OracleError, ValidationError
from .ontology import KeywordSet
from .oracles import Oracle, PromptLibrary, parse_json_array
from .units import NON_SCIENTIFIC, UnitSet

logger = logging.getLogger(__name__)

DEFAULT_TAG_THRESHOLD = 85.0
DEFAULT_EVAL_THRESHOLD = 85.0
MAX_UNITS_PER_QUERY = 5
MAX_KEYWORDS_PER_UNIT = 3


def lcs_length(a: str, b: str) -> int:
    """Longest common subsequence length, bit-parallel over big integers."""
    if not a or not b:
        return 0
    if len(a) > len(b):  # fewer bigint words when the mask covers the shorter string
        a, b = b, a
    positions: dict[str, int] = {}
    bit = 1
    for ch in a:
        positions[ch] = positions.get(ch, 0) | bit
        bit <<= 1
    mask = bit - 1
    v = mask
    for ch in b:
        u = v & positions.get(ch, 0)
        v = ((v + u) | (v - u)) & mask
    return len(a) - bin(v).count("1")


def normalized_indel_similarity(a: str, b: str) -> float:
    """Insert/delete-only edit similarity on a 0..100 scale.

    Equals ``100 * 2*LCS(a, b) / (|a| + |b|)``; two empty strings score 100.
    """
    total = len(a) + len(b)
    if total == 0:
        return 100.0
    return 100.0 * 2.0 * lcs_length(a, b) / total


@dataclass(frozen=True)
class TagPrediction:
    """The unit subset predicted for one instance.

    An empty scientific set is represented as the non-scientific sentinel.
    """

    instance_id: str
    units: frozenset[str]


def _query_ngrams(tokens: Sequence[str], n: int) -> set[str]:
    return {" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}


def baseline_tag(
    query: str,
    keyword_sets: Mapping[str, KeywordSet],
    threshold: float = DEFAULT_TAG_THRESHOLD,
    instance_id: str = "",
) -> TagPrediction:
    """Deterministic fuzzy-keyword tagger.

    A unit is predicted iff one of its keywords reaches the similarity
    threshold against some token n-gram of the lowercased query, where n
    runs up to the keyword's word count plus one.  Queries matching no unit
    are tagged non-scientific.
    """
    text = query.lower()
    tokens = text.split()
    grams_by_n: dict[int, set[str]] = {}
    matched: set[str] = set()
    for unit_id in sorted(keyword_sets):
        kws = keyword_sets[unit_id].keywords
        hit = False
        for kw in kws:
            if not kw:
                continue
            if kw in text:
                hit = True
                break
            width = len(kw.split())
            for n in range(1, width + 2):
                if n not in grams_by_n:
                    grams_by_n[n] = _query_ngrams(tokens, n)
                for gram in grams_by_n[n]:
                    # length bound on the best achievable similarity
                    shorter, longer = sorted((len(kw), len(gram)))
                    if longer and 200.0 * shorter / (shorter + longer) < threshold:
                        continue
                    if normalized_indel_similarity(kw, gram) >= threshold:
                        hit = True
                        break
                if hit:
                    break
            if hit:
                break
        if hit:
            matched.add(unit_id)
    if not matched:
        matched = {NON_SCIENTIFIC}
    return TagPrediction(instance_id=instance_id, units=frozenset(matched))


class ExternalTagger:
    """Tagger served by an oracle endpoint; same contract as baseline_tag.

    The reply is parsed as a JSON array of unit names or ids; unknown
    entries are dropped with a warning.
    """

    def __init__(self, oracle: Oracle, unit_set: UnitSet, templates: PromptLibrary | None = None):
        self.oracle = oracle
        self.unit_set = unit_set
        self.templates = templates or PromptLibrary()
        self._by_name = {u.name.casefold(): u.unit_id for u in unit_set}
        self._ids = {u.unit_id for u in unit_set}
        self._unit_list = "; ".join(u.name for u in unit_set.scientific())
        self.name = f"external({oracle.name})"

    def tag(self, query: str, instance_id: str = "") -> TagPrediction:
        prompt = self.templates.get("annotation").render(
            query=query, unit_list=self._unit_list
        )
        reply = self.oracle.complete(prompt)
        units: set[str] = set()
        dropped = []
        for item in parse_json_array(reply, "unit list"):
            item = str(item)
            if item in self._ids:
                units.add(item)
            elif item.casefold() in self._by_name:
                units.add(self._by_name[item.casefold()])
            else:
                dropped.append(item)
        if dropped:
            logger.warning("external tagger returned unknown unit(s): %s", dropped[:5])
        if len(units) > 1:
            units.discard(NON_SCIENTIFIC)
        if not units:
            units = {NON_SCIENTIFIC}
        return TagPrediction(instance_id=instance_id, units=frozenset(units))


def annotate_queries(
    queries: Sequence[tuple[str, str]],
    unit_set: UnitSet,
    oracle: Oracle,
    templates: PromptLibrary | None = None,
) -> list[TagPrediction]:
    """Batch-annotate real queries through the annotation oracle.

    ``queries`` are ``(instance_id, text)`` pairs.  A failed annotation is
    tagged non-scientific and logged, mirroring index-build behavior.
    """
    tagger = ExternalTagger(oracle, unit_set, templates)
    out: list[TagPrediction] = []
    for instance_id, text in queries:
        try:
            out.append(tagger.tag(text, instance_id=instance_id))
        except OracleError as exc:
            logger.warning("annotation failed for %s: %s", instance_id, exc)
            out.append(
                TagPrediction(instance_id=instance_id, units=frozenset({NON_SCIENTIFIC}))
            )
    return out


# ---------------------------------------------------------------------------
# Synthetic training data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTrainingInstance:
    query: str
    gold_units: frozenset[str]
    keywords_used: tuple[str, ...]
    persona: str
    complexity: str

    def __post_init__(self):
        if not 1 <= len(self.gold_units) <= MAX_UNITS_PER_QUERY:
            raise ValidationError(
                f"gold unit count {len(self.gold_units)} outside 1..{MAX_UNITS_PER_QUERY}"
            )


def generate_synthetic_instances(
    unit_set: UnitSet,
    keyword_sets: Mapping[str, KeywordSet],
    count: int,
    seed: int,
    generator: Oracle,
    templates: PromptLibrary | None = None,
) -> list[SyntheticTrainingInstance]:
    """Compose queries over sampled unit subsets via the generator oracle.

    Each attempt draws 1-5 units (restricted to units with non-empty
    keyword sets), 1-3 keywords per unit, a persona and a complexity, all
    from an attempt-indexed seed stream, so output depends only on the
    seed.  Generator failures skip the attempt; after 2x the requested
    count of attempts the partial output is returned with a warning.
    """
    templates = templates or PromptLibrary()
    eligible = [
        u for u in unit_set.scientific()
        if keyword_sets.get(u.unit_id) and keyword_sets[u.unit_id].keywords
    ]
    if not eligible:
        raise ValidationError("no unit has a non-empty keyword set")
    personas = templates.personas()
    results: list[SyntheticTrainingInstance] = []
    attempts = 0
    while len(results) < count and attempts < count * 2:
        rng = random.Random(f"{seed}:{attempts}")
        attempts += 1
        n_units = min(rng.randint(1, MAX_UNITS_PER_QUERY), len(eligible))
        chosen = rng.sample(eligible, n_units)
        keywords: list[str] = []
        for unit in chosen:
            pool = sorted(keyword_sets[unit.unit_id].keywords)
            k = rng.randint(1, min(MAX_KEYWORDS_PER_UNIT, len(pool)))
            keywords.extend(rng.sample(pool, k))
        persona = rng.choice(personas)
        complexity = rng.choice(["low", "high"])
        prompt = templates.get(f"query_generation_{complexity}").render(
            persona=persona, keywords=", ".join(keywords)
        )
        try:
            query = generator.complete(prompt).strip()
        except OracleError as exc:
            logger.warning("query generation failed (attempt %d): %s", attempts, exc)
            continue
        results.append(
            SyntheticTrainingInstance(
                query=query,
                gold_units=frozenset(u.unit_id for u in chosen),
                keywords_used=tuple(keywords),
                persona=persona,
                complexity=complexity,
            )
        )
    if len(results) < count:
        logger.warning(
            "aborting after %d attempts with %d/%d instances",
            attempts, len(results), count,
        )
    return results


def export_training_data(
    path: str | Path,
    synthetic: Iterable[SyntheticTrainingInstance],
    real: Iterable[tuple[str, Iterable[str]]] = (),
) -> dict[str, int]:
    """Write the training mix as JSONL records; returns counts per source."""
    counts = {"synthetic": 0, "real": 0}
    with open(path, "w", encoding="utf-8") as fh:
        for inst in synthetic:
            record = {
                "query": inst.query,
                "gold_units": ",".join(sorted(inst.gold_units)),
                "persona": inst.persona,
                "complexity": inst.complexity,
            }
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            counts["synthetic"] += 1
        for query, gold_units in real:
            record = {
                "query": query,
                "gold_units": ",".join(sorted(gold_units)),
                "persona": "",
                "complexity": "",
            }
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            counts["real"] += 1
    logger.info(
        "exported %d synthetic + %d real training record(s) to %s",
        counts["synthetic"], counts["real"], path,
    )
    return counts


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class TaggerScorecard:
    macro_f1: float
    micro_f1: float
    per_unit_counts: dict[str, tuple[int, int, int]]

    def to_record(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "per_unit_counts": {
                name: {"tp": tp, "fp": fp, "fn": fn}
                for name, (tp, fp, fn) in sorted(self.per_unit_counts.items())
            },
        }

    def format_table(self) -> str:
        width = max([len(n) for n in self.per_unit_counts] + [4])
        lines = [f"{'unit':<{width}}  {'tp':>4} {'fp':>4} {'fn':>4} {'f1':>7}"]
        for name in sorted(self.per_unit_counts):
            tp, fp, fn = self.per_unit_counts[name]
            f1 = _f1(tp, fp, fn)
            lines.append(f"{name:<{width}}  {tp:>4} {fp:>4} {fn:>4} {f1:>7.3f}")
        lines.append(f"macro F1 = {self.macro_f1:.4f}   micro F1 = {self.micro_f1:.4f}")
        return "\n".join(lines)


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def evaluate_tagger(
    predictions: Sequence[TagPrediction],
    gold: Mapping[str, frozenset[str] | set[str]],
    threshold: float = DEFAULT_EVAL_THRESHOLD,
    unit_names: Mapping[str, str] | None = None,
) -> TaggerScorecard:
    """Fuzzy-matching F1 scorecard.

    A predicted tag scores a true positive iff its similarity to some
    not-yet-consumed gold tag strictly exceeds the threshold; matching is
    greedy, highest similarity first, one-to-one.  Micro F1 pools counts
    over all units; macro F1 averages per-unit F1 over units appearing in
    the gold annotations (0/0 counts as 0).
    """
    pred_ids = {p.instance_id for p in predictions}
    gold_ids = set(gold)
    if pred_ids != gold_ids:
        missing = sorted(gold_ids - pred_ids)[:5]
        extra = sorted(pred_ids - gold_ids)[:5]
        raise ValidationError(
            f"prediction/gold instance ids misaligned (missing={missing}, extra={extra})"
        )
    unit_names = unit_names or {}
    counts: dict[str, list[int]] = {}

    def bucket(name: str) -> list[int]:
        return counts.setdefault(name, [0, 0, 0])

    gold_units_seen: set[str] = set()
    for pred in predictions:
        pred_names = sorted({unit_names.get(u, u) for u in pred.units})
        gold_names = sorted(gold[pred.instance_id])
        gold_units_seen.update(gold_names)
        pairs = [
            (normalized_indel_similarity(p, g), pi, gi)
            for pi, p in enumerate(pred_names)
            for gi, g in enumerate(gold_names)
        ]
        pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
        used_pred: set[int] = set()
        used_gold: set[int] = set()
        for sim, pi, gi in pairs:
            if sim <= threshold:
                break
            if pi in used_pred or gi in used_gold:
                continue
            used_pred.add(pi)
            used_gold.add(gi)
            bucket(gold_names[gi])[0] += 1
        for pi, p in enumerate(pred_names):
            if pi not in used_pred:
                bucket(p)[1] += 1
        for gi, g in enumerate(gold_names):
            if gi not in used_gold:
                bucket(g)[2] += 1

    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    micro = _f1(tp, fp, fn)
    in_gold = sorted(gold_units_seen)
    macro = (
        sum(_f1(*counts.get(name, [0, 0, 0])) for name in in_gold) / len(in_gold)
        if in_gold
        else 0.0
    )
    return TaggerScorecard(
        macro_f1=macro,
        micro_f1=micro,
        per_unit_counts={name: tuple(c) for name, c in counts.items()},
    )
