"""Online phase: requirement -> units -> ordered candidates -> cutoff ->
proxy subset.

Consensus voting averages each unit's rank position across the ranker
ensemble, charging absent units the list cap plus one.  Candidates are
ordered by intersection size, then average consensus rank, then instance
id.  The relevance cutoff is a majority-vote binary search over that
ordering; the proxy subset is the best of ``trials`` cluster-stratified
samples under the summed Wasserstein objective on hardness and quality.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusInstance, TagIndex
from .errors import OracleError, ResolutionError, ValidationError
from .oracles import (
    RANK_CAP,
    JudgeResult,
    Oracle,
    OracleEnsemble,
    PromptLibrary,
    judge_relevance,
    rank_units,
)
from .scoring import (
    BigramSurrogate,
    hardness_score,
    hash_embedding,
    kmeans_assign,
    oracle_embedding,
    quality_score,
    wasserstein_1d,
)
from .units import NON_SCIENTIFIC, UnitSet

logger = logging.getLogger(__name__)

DEFAULT_K1 = 10
DEFAULT_K2 = 100
DEFAULT_TRIALS = 100


@dataclass(frozen=True)
class Requirement:
    """A free-text description of the capability to benchmark."""

    requirement_id: str
    text: str
    description: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValidationError("requirement text must be non-empty")

    @property
    def full_description(self) -> str:
        return self.description or self.text


@dataclass
class ResolvedRequirement:
    requirement: Requirement
    ranked_units: list[tuple[str, float]]
    selected: list[str]
    per_model_rankings: dict[str, list[str]] = field(default_factory=dict)

    def rank_of(self, unit_id: str) -> float:
        for uid, rank in self.ranked_units:
            if uid == unit_id:
                return rank
        raise KeyError(unit_id)


def resolve_units(
    requirement: Requirement,
    unit_set: UnitSet,
    frequencies: Mapping[str, int],
    rankers: Sequence[Oracle],
    k1: int = DEFAULT_K1,
    templates: PromptLibrary | None = None,
    domain: str = "science",
    cap: int = RANK_CAP,
) -> ResolvedRequirement:
    """Multi-model consensus over unit rankings.

    Candidates (all scientific units) are presented to every ranker sorted
    by ascending corpus frequency.  A unit absent from a ranker's capped
    list is charged rank ``cap + 1``; the consensus is the arithmetic mean
    across rankers, ties broken by unit id.  A failing ranker charges
    ``cap + 1`` for every unit; if all rankers fail the requirement cannot
    be resolved.
    """
    if not rankers:
        raise ResolutionError("no rankers configured")
    if k1 < 1:
        raise ValidationError("k1 must be >= 1")
    templates = templates or PromptLibrary()
    scientific = unit_set.scientific()
    if not scientific:
        raise ValidationError("unit set has no scientific units")
    candidates = sorted(
        ((u.unit_id, u.name) for u in scientific),
        key=lambda pair: (frequencies.get(pair[0], 0), pair[0]),
    )
    rank_sums: dict[str, float] = {uid: 0.0 for uid, _ in candidates}
    per_model: dict[str, list[str]] = {}
    failures = 0
    for idx, ranker in enumerate(rankers):
        label = f"{idx}:{ranker.name}"
        try:
            ranking = rank_units(
                ranker, requirement.full_description, candidates,
                templates=templates, domain=domain, cap=cap,
            )
        except OracleError as exc:
            failures += 1
            logger.warning("ranker %s failed, charged cap+1 for all units: %s", label, exc)
            per_model[label] = []
            ranking = []
        else:
            per_model[label] = ranking
        positions = {uid: pos for pos, uid in enumerate(ranking, start=1)}
        for uid, _ in candidates:
            rank_sums[uid] += positions.get(uid, cap + 1)
    if failures == len(rankers):
        raise ResolutionError("every ranker failed; cannot resolve requirement")
    n = len(rankers)
    ranked = sorted(
        ((uid, total / n) for uid, total in rank_sums.items()),
        key=lambda pair: (pair[1], pair[0]),
    )
    selected = [uid for uid, _ in ranked[:k1]]
    logger.info(
        "resolved %s to %d unit(s): %s",
        requirement.requirement_id, len(selected), ", ".join(selected),
    )
    return ResolvedRequirement(
        requirement=requirement,
        ranked_units=ranked,
        selected=selected,
        per_model_rankings=per_model,
    )


# ---------------------------------------------------------------------------
# Candidate ordering
# ---------------------------------------------------------------------------


@dataclass
class ScoredCandidate:
    instance: CorpusInstance
    matching_units: frozenset[str]
    avg_rank: float
    hardness: float | None = None
    quality: float | None = None
    embedding: np.ndarray | None = None
    hardness_is_surrogate: bool = False
    embedding_is_surrogate: bool = False

    @property
    def intersection_size(self) -> int:
        return len(self.matching_units)


def make_candidates(
    candidate_ids: Sequence[str],
    index: TagIndex,
    instances: Mapping[str, CorpusInstance],
    resolved: ResolvedRequirement,
) -> list[ScoredCandidate]:
    """Attach matching units and average consensus rank to each candidate."""
    selected = set(resolved.selected)
    consensus = dict(resolved.ranked_units)
    out: list[ScoredCandidate] = []
    for iid in sorted(set(candidate_ids)):
        inst = instances.get(iid)
        if inst is None:
            logger.warning("candidate %s not present in the corpus files, skipped", iid)
            continue
        matching = frozenset(index.entries.get(iid, frozenset()) & selected)
        if not matching:
            continue
        avg_rank = sum(consensus[u] for u in matching) / len(matching)
        out.append(ScoredCandidate(instance=inst, matching_units=matching, avg_rank=avg_rank))
    return out


def order_candidates(candidates: Sequence[ScoredCandidate]) -> list[ScoredCandidate]:
    """Total order: intersection size desc, average rank asc, instance id asc."""
    return sorted(
        candidates,
        key=lambda c: (-c.intersection_size, c.avg_rank, c.instance.instance_id),
    )


# ---------------------------------------------------------------------------
# Relevance cutoff
# ---------------------------------------------------------------------------


@dataclass
class ProbeRecord:
    index: int
    votes: int
    verdict: bool

    def to_record(self) -> dict:
        return {"index": self.index, "votes": self.votes, "verdict": self.verdict}


@dataclass
class CutoffResult:
    prefix: list[ScoredCandidate]
    cutoff_index: int
    any_relevant: bool
    probes: list[ProbeRecord]
    judge_calls: int

    @property
    def non_monotone(self) -> bool:
        """True when a lower-ranked probe drew strictly more votes than some
        higher-ranked probe.

        Verdicts alone cannot expose non-monotonicity here: the search only
        moves right after an acceptance, so every accepted index is left of
        every rejected one.  Vote counts can still rise along the list, and
        that is the recorded evidence that relevance does not decrease
        monotonically.
        """
        by_index = sorted(self.probes, key=lambda p: p.index)
        max_later = -1
        for probe in reversed(by_index):
            if probe.votes < max_later:
                return True
            max_later = max(max_later, probe.votes)
        return False


def binary_search_cutoff(
    ordered: Sequence[ScoredCandidate],
    requirement: Requirement,
    ensemble: OracleEnsemble,
    templates: PromptLibrary | None = None,
) -> CutoffResult:
    """Majority-vote binary search for the relevance boundary.

    Keeps the last index the ensemble approved (the cutoff element is
    included in the returned prefix).  When no probe is approved the prefix
    is empty.  Judge calls stay within (floor(log2 n) + 1) * ensemble size.
    """
    if not ordered:
        raise ValidationError("cannot search an empty candidate list")
    templates = templates or PromptLibrary()
    low, high, cutoff = 0, len(ordered) - 1, 0
    any_relevant = False
    probes: list[ProbeRecord] = []
    judge_calls = 0
    while low <= high:
        mid = low + (high - low) // 2
        result = judge_relevance(
            ensemble, requirement.full_description, ordered[mid].instance, templates
        )
        judge_calls += result.member_count
        probes.append(ProbeRecord(index=mid, votes=result.votes, verdict=result.verdict))
        if result.verdict:
            any_relevant = True
            cutoff = mid
            low = mid + 1
        else:
            high = mid - 1
    prefix = list(ordered[: cutoff + 1]) if any_relevant else []
    out = CutoffResult(
        prefix=prefix,
        cutoff_index=cutoff if any_relevant else -1,
        any_relevant=any_relevant,
        probes=probes,
        judge_calls=judge_calls,
    )
    if out.non_monotone:
        logger.warning(
            "non-monotone relevance pattern across probes for %s",
            requirement.requirement_id,
        )
    return out


@dataclass
class GreedyResult:
    members: list[ScoredCandidate]
    scanned: int
    judge_calls: int


def greedy_topk(
    ordered: Sequence[ScoredCandidate],
    requirement: Requirement,
    ensemble: OracleEnsemble,
    k2: int = DEFAULT_K2,
    templates: PromptLibrary | None = None,
) -> GreedyResult:
    """Comparison baseline: scan from the front, keep the first k2 instances
    the ensemble judges relevant."""
    if k2 < 1:
        raise ValidationError("k2 must be >= 1")
    templates = templates or PromptLibrary()
    kept: list[ScoredCandidate] = []
    judge_calls = 0
    scanned = 0
    for cand in ordered:
        if len(kept) >= k2:
            break
        scanned += 1
        result = judge_relevance(
            ensemble, requirement.full_description, cand.instance, templates
        )
        judge_calls += result.member_count
        if result.verdict:
            kept.append(cand)
    return GreedyResult(members=kept, scanned=scanned, judge_calls=judge_calls)


# ---------------------------------------------------------------------------
# Scoring the pool and proxy-subset selection
# ---------------------------------------------------------------------------


def score_pool(
    pool: Sequence[ScoredCandidate],
    likelihood: Oracle | None = None,
    embedder: Oracle | None = None,
    templates: PromptLibrary | None = None,
    seed: int = 0,
) -> None:
    """Fill hardness, quality and embeddings for every pool member in place.

    Providers are used when configured; any failure (or absence) falls back
    to the deterministic surrogates with a per-instance flag.
    """
    templates = templates or PromptLibrary()
    surrogate: BigramSurrogate | None = None

    def ensure_surrogate() -> BigramSurrogate:
        nonlocal surrogate
        if surrogate is None:
            surrogate = BigramSurrogate(c.instance.answer for c in pool)
        return surrogate

    for cand in pool:
        inst = cand.instance
        cand.quality = quality_score(inst)
        if likelihood is not None:
            try:
                cand.hardness = hardness_score(inst, likelihood, templates)
                cand.hardness_is_surrogate = False
            except (OracleError, ValidationError) as exc:
                logger.warning("likelihood provider failed on %s: %s", inst.instance_id, exc)
                cand.hardness = ensure_surrogate().hardness(inst.answer)
                cand.hardness_is_surrogate = True
        else:
            cand.hardness = ensure_surrogate().hardness(inst.answer)
            cand.hardness_is_surrogate = True
        if embedder is not None:
            try:
                cand.embedding = oracle_embedding(
                    inst.query + " " + inst.answer, embedder, templates
                )
                cand.embedding_is_surrogate = False
            except (OracleError, ValidationError) as exc:
                logger.warning("embedding provider failed on %s: %s", inst.instance_id, exc)
                cand.embedding = hash_embedding(inst.query + " " + inst.answer, seed=seed)
                cand.embedding_is_surrogate = True
        else:
            cand.embedding = hash_embedding(inst.query + " " + inst.answer, seed=seed)
            cand.embedding_is_surrogate = True


@dataclass
class ProxySubset:
    members: list[ScoredCandidate]
    objective: float
    candidate_trials: int
    winning_trial: int = 0
    normalized: bool = False


def subset_objective(
    subset: Sequence[ScoredCandidate],
    pool: Sequence[ScoredCandidate],
    normalize: bool = False,
) -> float:
    """Summed Wasserstein distance of the subset's hardness and quality
    distributions against the full pool's."""
    pool_h = [c.hardness for c in pool]
    pool_q = [c.quality for c in pool]
    sub_h = [c.hardness for c in subset]
    sub_q = [c.quality for c in subset]
    term_h = wasserstein_1d(sub_h, pool_h)
    term_q = wasserstein_1d(sub_q, pool_q)
    if normalize:
        std_h = float(np.std(pool_h))
        std_q = float(np.std(pool_q))
        term_h = term_h / std_h if std_h > 0 else term_h
        term_q = term_q / std_q if std_q > 0 else term_q
    return term_h + term_q


def select_proxy_subset(
    pool: Sequence[ScoredCandidate],
    k2: int = DEFAULT_K2,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    normalize: bool = False,
) -> ProxySubset:
    """Pick the subset whose score distributions best match the pool.

    Pool embeddings are clustered into k2 groups; each trial draws one
    uniform member per non-empty cluster (topped up without replacement
    from the rest of the pool if clusters came up empty) and the trial with
    the smallest objective wins, ties by trial index.  Pools no larger than
    k2 are returned whole.
    """
    if k2 < 1 or trials < 1:
        raise ValidationError("k2 and trials must be >= 1")
    if not pool:
        raise ValidationError("cannot select from an empty pool")
    for cand in pool:
        if cand.hardness is None or cand.quality is None or cand.embedding is None:
            raise ValidationError(
                f"candidate {cand.instance.instance_id} is missing scores; "
                "run score_pool first"
            )
    if len(pool) <= k2:
        whole = list(pool)
        return ProxySubset(
            members=whole,
            objective=subset_objective(whole, pool, normalize),
            candidate_trials=0,
        )
    points = np.stack([c.embedding for c in pool])
    assign = kmeans_assign(points, k2, seed=seed)
    clusters: list[list[int]] = [[] for _ in range(int(assign.max()) + 1)]
    for i, j in enumerate(assign):
        clusters[int(j)].append(i)
    nonempty = [members for members in clusters if members]
    if len(nonempty) < k2:
        logger.warning(
            "only %d of %d clusters are non-empty; trials top up from the pool",
            len(nonempty), k2,
        )
    best_obj = float("inf")
    best_members: list[int] = []
    best_trial = 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, 1, trial])
        chosen = [members[int(rng.integers(len(members)))] for members in nonempty]
        if len(chosen) < k2:
            residual = sorted(set(range(len(pool))) - set(chosen))
            extra_n = min(k2 - len(chosen), len(residual))
            picks = rng.choice(len(residual), size=extra_n, replace=False)
            chosen.extend(residual[int(p)] for p in sorted(picks))
        subset = [pool[i] for i in chosen]
        obj = subset_objective(subset, pool, normalize)
        if obj < best_obj:
            best_obj = obj
            best_members = chosen
            best_trial = trial
    members = [pool[i] for i in best_members]
    logger.info(
        "proxy subset: %d member(s), objective %.6f (trial %d of %d)",
        len(members), best_obj, best_trial, trials,
    )
    return ProxySubset(
        members=members,
        objective=best_obj,
        candidate_trials=trials,
        winning_trial=best_trial,
        normalized=normalize,
    )
