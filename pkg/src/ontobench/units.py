"""Knowledge-unit selection by granularity-guided DFS over concept DAGs.

A node is considered at all only when it has at least ``min_descendants``
strict descendants; otherwise the traversal backtracks without consulting
the classifier.  Classified nodes are handled by label: coarse recurses
into children, moderate is added as a unit and (by default) terminates the
branch, fine prunes the branch.  Every decision lands in a trace so the
selection can be audited or replayed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import OracleError, ParseError
from .ontology import OntologyGraph, descendants
from .oracles import GranularityLabel, Oracle, PromptLibrary, classify_granularity

logger = logging.getLogger(__name__)

NON_SCIENTIFIC = "NON_SCIENTIFIC"

# Algorithm constant: nodes with fewer strict descendants are never classified.
MIN_DESCENDANTS = 10


@dataclass(frozen=True)
class KnowledgeUnit:
    """One selected concept, identified as ``<graph_id>:<node_id>``."""

    unit_id: str
    name: str
    source_graph: str

    @property
    def node_id(self) -> str:
        _, _, nid = self.unit_id.partition(":")
        return nid or self.unit_id


@dataclass
class TraceEntry:
    graph_id: str
    node_id: str
    desc_count: int
    pruned_by_count: bool
    label: str | None = None
    added: bool = False
    error: str | None = None

    def to_record(self) -> dict:
        return {
            "graph": self.graph_id,
            "node": self.node_id,
            "desc_count": self.desc_count,
            "pruned_by_count": self.pruned_by_count,
            "label": self.label,
            "added": self.added,
            "error": self.error,
        }


@dataclass
class UnitSet:
    """The selected units plus the per-node decision trace."""

    units: list[KnowledgeUnit]
    selection_log: list[TraceEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [u.unit_id for u in self.units]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate unit ids in unit set")

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def scientific(self) -> list[KnowledgeUnit]:
        return [u for u in self.units if u.unit_id != NON_SCIENTIFIC]

    def by_id(self) -> dict[str, KnowledgeUnit]:
        return {u.unit_id: u for u in self.units}

    def names_by_id(self) -> dict[str, str]:
        return {u.unit_id: u.name for u in self.units}


def non_scientific_unit() -> KnowledgeUnit:
    return KnowledgeUnit(unit_id=NON_SCIENTIFIC, name="Non-Scientific", source_graph="builtin")


def select_units(
    graphs: Sequence[OntologyGraph],
    classifier: Oracle,
    templates: PromptLibrary | None = None,
    min_descendants: int = MIN_DESCENDANTS,
    recurse_after_moderate: bool = False,
) -> UnitSet:
    """DFS every graph, keep moderate-granularity nodes, append the
    non-scientific sentinel.

    Child visit order is node file order.  A node reachable through several
    parents is classified at most once per graph; classifier failures prune
    the node (conservative) and are logged in the trace.  With
    ``recurse_after_moderate`` the traversal also descends into children of
    selected nodes, for sensitivity runs.
    """
    templates = templates or PromptLibrary()
    units: list[KnowledgeUnit] = []
    trace: list[TraceEntry] = []

    for graph in graphs:
        visited: set[str] = set()
        stack = list(reversed(graph.root_ids))
        while stack:
            node_id = stack.pop()
            if node_id in visited:
                continue
            visited.add(node_id)
            desc = descendants(graph, node_id)
            if len(desc) < min_descendants:
                trace.append(
                    TraceEntry(graph.graph_id, node_id, len(desc), pruned_by_count=True)
                )
                continue
            entry = TraceEntry(graph.graph_id, node_id, len(desc), pruned_by_count=False)
            trace.append(entry)
            try:
                label = classify_granularity(
                    classifier, graph.nodes[node_id].name, templates
                )
            except OracleError as exc:
                entry.error = str(exc)
                entry.label = GranularityLabel.FINE.value
                logger.warning(
                    "classifier failed on %s:%s, pruned: %s",
                    graph.graph_id, node_id, exc,
                )
                continue
            entry.label = label.value
            if label is GranularityLabel.MODERATE:
                entry.added = True
                units.append(
                    KnowledgeUnit(
                        unit_id=f"{graph.graph_id}:{node_id}",
                        name=graph.nodes[node_id].name,
                        source_graph=graph.graph_id,
                    )
                )
                if not recurse_after_moderate:
                    continue
            elif label is GranularityLabel.FINE:
                continue
            stack.extend(reversed(graph.children[node_id]))

    units.append(non_scientific_unit())
    unit_set = UnitSet(units=units, selection_log=trace)
    logger.info(
        "selected %d scientific unit(s) + sentinel from %d graph(s)",
        len(units) - 1, len(graphs),
    )
    return unit_set


def unit_frequencies(index, units: Sequence[KnowledgeUnit] | None = None) -> dict[str, int]:
    """Instance counts per unit, zero-filled for units with no occurrences."""
    counts: dict[str, int] = {}
    if units is not None:
        counts = {u.unit_id: 0 for u in units}
    else:
        counts = {uid: 0 for uid in index.unit_postings}
    for unit_ids in index.entries.values():
        for uid in unit_ids:
            counts[uid] = counts.get(uid, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Persistence: unit file is `unit_id<TAB>name<TAB>source_graph` lines,
# trace goes to a separate JSONL log.
# ---------------------------------------------------------------------------


def save_unit_set(unit_set: UnitSet, path: str | Path, trace_path: str | Path | None = None) -> None:
    path = Path(path)
    lines = [f"{u.unit_id}\t{u.name}\t{u.source_graph}" for u in unit_set.units]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if trace_path is not None:
        with open(trace_path, "w", encoding="utf-8") as fh:
            for entry in unit_set.selection_log:
                fh.write(json.dumps(entry.to_record(), sort_keys=True) + "\n")


def load_unit_set(path: str | Path) -> UnitSet:
    path = Path(path)
    units: list[KnowledgeUnit] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(
                    f"expected 3 tab-separated fields, got {len(parts)}",
                    str(path), lineno,
                )
            units.append(KnowledgeUnit(unit_id=parts[0], name=parts[1], source_graph=parts[2]))
    if all(u.unit_id != NON_SCIENTIFIC for u in units):
        raise ParseError(f"unit file lacks the {NON_SCIENTIFIC} sentinel", str(path))
    return UnitSet(units=units)
