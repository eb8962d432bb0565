"""Stage orchestration shared by the CLI subcommands.

Each run writes a machine-readable manifest recording every intermediate
count, seed and configuration value, sufficient to replay the run against
the same fixtures.  No wall-clock data goes into outputs so reruns are
byte-identical.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from . import benchgen, corpus, pipeline, tagger, units
from .config import PipelineConfig
from .errors import EmptyResultError
from .ontology import keyword_set, load_ontology_dir
from .oracles import OracleEnsemble

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def run_select_units(cfg: PipelineConfig, out_dir: Path) -> dict:
    graphs = load_ontology_dir(cfg.path("ontology_dir"))
    classifier = cfg.oracle("classifier")
    templates = cfg.prompt_library()
    unit_set = units.select_units(
        graphs,
        classifier,
        templates=templates,
        min_descendants=cfg.params.min_descendants,
        recurse_after_moderate=cfg.params.recurse_after_moderate,
    )
    unit_path = out_dir / "units.tsv"
    trace_path = out_dir / "units_trace.jsonl"
    units.save_unit_set(unit_set, unit_path, trace_path)
    summary = {
        "graphs": len(graphs),
        "scientific_units": len(unit_set.scientific()),
        "total_units": len(unit_set),
        "classified_nodes": sum(
            1 for e in unit_set.selection_log if not e.pruned_by_count
        ),
        "count_pruned_nodes": sum(
            1 for e in unit_set.selection_log if e.pruned_by_count
        ),
        "unit_file": unit_path.name,
        "trace_file": trace_path.name,
    }
    _write_json(out_dir / "select_units_summary.json", summary)
    return summary


def _load_keyword_sets(cfg: PipelineConfig, unit_set: units.UnitSet) -> dict:
    graphs = {g.graph_id: g for g in load_ontology_dir(cfg.path("ontology_dir"))}
    keyword_sets = {}
    for unit in unit_set.scientific():
        graph = graphs.get(unit.source_graph)
        if graph is None or unit.node_id not in graph:
            logger.warning("unit %s has no backing graph node; skipped", unit.unit_id)
            continue
        ks = keyword_set(graph, unit.node_id)
        keyword_sets[unit.unit_id] = ks
    return keyword_sets


def _make_tagger(cfg: PipelineConfig, unit_set: units.UnitSet):
    """Configured external tagger if present, else the keyword baseline."""
    external = cfg.oracle("tagger", required=False)
    templates = cfg.prompt_library()
    if external is not None:
        ext = tagger.ExternalTagger(external, unit_set, templates)
        return (lambda query, iid: ext.tag(query, instance_id=iid)), ext.name
    keyword_sets = _load_keyword_sets(cfg, unit_set)
    threshold = cfg.params.tag_threshold
    name = f"baseline(threshold={threshold:g})"

    def tag(query: str, iid: str) -> tagger.TagPrediction:
        return tagger.baseline_tag(query, keyword_sets, threshold, instance_id=iid)

    return tag, name


def run_build_index(cfg: PipelineConfig, out_dir: Path) -> dict:
    unit_set = units.load_unit_set(cfg.path("unit_file"))
    exclusions_path = cfg.path("exclusions", required=False)
    exclusions = corpus.Denylist.from_file(exclusions_path) if exclusions_path else None
    instances, report = corpus.ingest_corpus(cfg.path_list("corpus_files"), exclusions)
    tag_fn, tagger_name = _make_tagger(cfg, unit_set)
    index = corpus.build_index(
        instances,
        tag_fn,
        unit_universe=[u.unit_id for u in unit_set],
        tagger_name=tagger_name,
    )
    index_path = cfg.path("index_file", required=False) or (out_dir / "index.tsv")
    index_path.parent.mkdir(parents=True, exist_ok=True)
    corpus.save_index(index, index_path)
    summary = {"ingest": report.to_record(), "index_file": str(index_path.name)}
    _write_json(out_dir / "build_index_summary.json", summary)
    return summary


def run_build_benchmark(
    cfg: PipelineConfig,
    requirement: pipeline.Requirement,
    out_dir: Path,
    strategy: str = "binary-search",
) -> dict:
    """Full online phase; returns the manifest (also written to disk).

    The manifest is written even when the cutoff comes back empty, in which
    case EmptyResultError propagates after the write.
    """
    params = cfg.params
    templates = cfg.prompt_library()
    unit_set = units.load_unit_set(cfg.path("unit_file"))
    index = corpus.load_index(cfg.path("index_file"))
    instances = corpus.load_instances(cfg.path_list("corpus_files"))

    frequencies = units.unit_frequencies(index, list(unit_set))
    rankers = cfg.oracle_list("rankers")
    resolved = pipeline.resolve_units(
        requirement, unit_set, frequencies, rankers,
        k1=params.k1, templates=templates, domain=params.domain,
        cap=params.rank_cap,
    )

    candidate_ids = corpus.lookup_candidates(index, resolved.selected)
    candidates = pipeline.make_candidates(candidate_ids, index, instances, resolved)
    ordered = pipeline.order_candidates(candidates)

    judges = OracleEnsemble(cfg.oracle_list("judges"), ensemble_name="judges")
    manifest: dict = {
        "requirement": {
            "requirement_id": requirement.requirement_id,
            "text": requirement.text,
            "description": requirement.description,
        },
        "strategy": strategy,
        "params": params.to_record(),
        "resolved_units": [[uid, rank] for uid, rank in resolved.ranked_units[: params.k1]],
        "per_model_rankings": resolved.per_model_rankings,
        "stage_counts": {
            "corpus_instances": len(instances),
            "candidates": len(ordered),
        },
    }
    manifest_path = out_dir / MANIFEST_NAME

    if not ordered:
        manifest["stage_counts"]["cutoff_prefix"] = 0
        _write_json(manifest_path, manifest)
        raise EmptyResultError("no candidate shares a unit with the resolved set")

    if strategy == "greedy":
        greedy = pipeline.greedy_topk(
            ordered, requirement, judges, k2=params.k2, templates=templates
        )
        pool = greedy.members
        manifest["judge_calls"] = greedy.judge_calls
        manifest["scanned"] = greedy.scanned
        manifest["stage_counts"]["cutoff_prefix"] = len(pool)
    else:
        cut = pipeline.binary_search_cutoff(ordered, requirement, judges, templates)
        pool = cut.prefix
        manifest["judge_calls"] = cut.judge_calls
        manifest["cutoff_index"] = cut.cutoff_index
        manifest["probe_trace"] = [p.to_record() for p in cut.probes]
        manifest["non_monotone"] = cut.non_monotone
        manifest["stage_counts"]["cutoff_prefix"] = len(pool)

    if not pool:
        _write_json(manifest_path, manifest)
        raise EmptyResultError("relevance cutoff returned an empty prefix")

    pipeline.score_pool(
        pool,
        likelihood=cfg.oracle("likelihood", required=False),
        embedder=cfg.oracle("embedding", required=False),
        templates=templates,
        seed=params.seed,
    )
    manifest["hardness_surrogate_count"] = sum(1 for c in pool if c.hardness_is_surrogate)
    manifest["embedding_surrogate_count"] = sum(1 for c in pool if c.embedding_is_surrogate)

    if strategy == "greedy":
        subset_members = pool
        manifest["subset_objective"] = pipeline.subset_objective(
            subset_members, pool, params.normalize_objective
        )
    else:
        proxy = pipeline.select_proxy_subset(
            pool,
            k2=params.k2,
            trials=params.trials,
            seed=params.seed,
            normalize=params.normalize_objective,
        )
        subset_members = proxy.members
        manifest["subset_objective"] = proxy.objective
        manifest["winning_trial"] = proxy.winning_trial
        manifest["candidate_trials"] = proxy.candidate_trials
    manifest["stage_counts"]["subset"] = len(subset_members)

    subset_path = out_dir / "subset.jsonl"
    corpus.save_instances((c.instance for c in subset_members), subset_path)
    scores_path = out_dir / "subset_scores.jsonl"
    with open(scores_path, "w", encoding="utf-8") as fh:
        for cand in subset_members:
            fh.write(
                json.dumps(
                    {
                        "id": cand.instance.instance_id,
                        "matching_units": sorted(cand.matching_units),
                        "avg_rank": cand.avg_rank,
                        "hardness": cand.hardness,
                        "hardness_is_surrogate": cand.hardness_is_surrogate,
                        "quality": cand.quality,
                        "embedding_is_surrogate": cand.embedding_is_surrogate,
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    generator = cfg.oracle("generator")
    benchmark, build_report = benchgen.build_benchmark(
        subset_members,
        generator,
        requirement,
        benchmark_id=f"{requirement.requirement_id}-benchmark",
        provenance=MANIFEST_NAME,
        retry_budget=params.mcq_retry_budget,
        templates=templates,
        domain=params.domain,
    )
    benchmark_path = out_dir / "benchmark.jsonl"
    benchgen.save_benchmark(benchmark, benchmark_path)
    manifest["stage_counts"]["benchmark_items"] = len(benchmark.items)
    manifest["stage_counts"]["skips"] = len(build_report.skips)
    manifest["skip_report"] = build_report.to_record()
    manifest["outputs"] = {
        "benchmark": benchmark_path.name,
        "subset": subset_path.name,
        "subset_scores": scores_path.name,
    }
    _write_json(manifest_path, manifest)
    return manifest


def run_synth_tagger_data(
    cfg: PipelineConfig, count: int, seed: int, out_dir: Path
) -> dict:
    unit_set = units.load_unit_set(cfg.path("unit_file"))
    keyword_sets = _load_keyword_sets(cfg, unit_set)
    generator = cfg.oracle("generator")
    instances = tagger.generate_synthetic_instances(
        unit_set, keyword_sets, count, seed, generator, cfg.prompt_library()
    )
    if not instances:
        raise EmptyResultError("no synthetic instances could be generated")
    out_path = out_dir / "tagger_training.jsonl"
    counts = tagger.export_training_data(out_path, instances)
    summary = {"requested": count, "seed": seed, "counts": counts, "file": out_path.name}
    _write_json(out_dir / "synth_tagger_summary.json", summary)
    return summary
