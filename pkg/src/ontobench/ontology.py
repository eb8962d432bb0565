"""Loading, validation and querying of is-a concept DAGs.

Ontology file format: UTF-8, one record per line,
``node_id<TAB>name<TAB>parent_id1,parent_id2,...`` where an empty third
field marks a root.  Lines starting with ``#`` are comments.  One file per
graph; the graph id is the file stem.

Graphs are immutable after load; every query is read-only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OntologyNode:
    """A single concept; is-a edges point child -> parent."""

    id: str
    name: str
    parent_ids: tuple[str, ...]


@dataclass
class KeywordSet:
    """The descendant term names of one unit, lowercased and deduplicated."""

    unit_id: str
    keywords: frozenset[str]


@dataclass
class OntologyGraph:
    """A validated is-a DAG over concept nodes.

    ``nodes`` preserves file order, which defines child visit order for
    every traversal downstream.
    """

    graph_id: str
    nodes: dict[str, OntologyNode]
    root_ids: list[str]
    children: dict[str, list[str]] = field(default_factory=dict)
    _desc_cache: dict[str, frozenset[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.children:
            self.children = {nid: [] for nid in self.nodes}
            for node in self.nodes.values():
                for pid in node.parent_ids:
                    self.children[pid].append(node.id)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)


def _parse_line(raw: str, path: str, lineno: int) -> OntologyNode:
    parts = raw.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise ParseError(
            f"expected 3 tab-separated fields, got {len(parts)}", path, lineno
        )
    node_id, name, parents_field = parts
    if not node_id:
        raise ParseError("empty node id", path, lineno)
    if not name:
        raise ParseError(f"empty name for node {node_id!r}", path, lineno)
    parent_ids = tuple(p for p in parents_field.split(",") if p)
    return OntologyNode(id=node_id, name=name, parent_ids=parent_ids)


def _find_cycle(nodes: dict[str, OntologyNode]) -> list[str] | None:
    """Return one cycle (as a node-id path) in the child->parent edge set, if any."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in nodes}
    for start in nodes:
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        path = [start]
        color[start] = GREY
        while stack:
            nid, idx = stack[-1]
            parents = nodes[nid].parent_ids
            if idx < len(parents):
                stack[-1] = (nid, idx + 1)
                nxt = parents[idx]
                if color[nxt] == GREY:
                    return path[path.index(nxt):] + [nxt]
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    stack.append((nxt, 0))
                    path.append(nxt)
            else:
                color[nid] = BLACK
                stack.pop()
                path.pop()
    return None


def validate_graph(graph_id: str, nodes: dict[str, OntologyNode]) -> OntologyGraph:
    """Check dangling parents, acyclicity and root existence."""
    dangling = sorted(
        {pid for n in nodes.values() for pid in n.parent_ids if pid not in nodes}
    )
    if dangling:
        raise ValidationError(
            f"graph {graph_id!r}: dangling parent reference(s): {', '.join(dangling)}"
        )
    cycle = _find_cycle(nodes)
    if cycle is not None:
        raise ValidationError(
            f"graph {graph_id!r}: cycle detected: {' -> '.join(cycle)}"
        )
    root_ids = [nid for nid, n in nodes.items() if not n.parent_ids]
    if not root_ids:
        raise ValidationError(f"graph {graph_id!r}: no root node")
    return OntologyGraph(graph_id=graph_id, nodes=nodes, root_ids=root_ids)


def load_ontology(path: str | Path) -> OntologyGraph:
    """Load and validate one graph file; graph_id is the file stem."""
    path = Path(path)
    nodes: dict[str, OntologyNode] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip() or raw.lstrip().startswith("#"):
                continue
            node = _parse_line(raw, str(path), lineno)
            if node.id in nodes:
                raise ParseError(f"duplicate node id {node.id!r}", str(path), lineno)
            nodes[node.id] = node
    graph = validate_graph(path.stem, nodes)
    n_edges = sum(len(n.parent_ids) for n in nodes.values())
    logger.info(
        "loaded graph %s: %d nodes, %d edges, %d roots",
        graph.graph_id, len(nodes), n_edges, len(graph.root_ids),
    )
    return graph


def load_ontology_dir(directory: str | Path, pattern: str = "*.tsv") -> list[OntologyGraph]:
    """Load every graph file in a directory, sorted by filename."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ParseError(f"ontology directory does not exist: {directory}")
    paths = sorted(directory.glob(pattern))
    graphs = [load_ontology(p) for p in paths]
    logger.info("loaded %d ontology graph(s) from %s", len(graphs), directory)
    return graphs


def descendants(graph: OntologyGraph, node_id: str) -> frozenset[str]:
    """All strict descendants of ``node_id`` (transitive children), deduplicated."""
    if node_id not in graph.nodes:
        raise ValidationError(f"unknown node id {node_id!r} in graph {graph.graph_id!r}")
    cached = graph._desc_cache.get(node_id)
    if cached is not None:
        return cached
    seen: set[str] = set()
    stack = list(graph.children[node_id])
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        stack.extend(graph.children[nid])
    result = frozenset(seen)
    graph._desc_cache[node_id] = result
    return result


def keyword_set(graph: OntologyGraph, unit_id: str) -> KeywordSet:
    """Descendant term names of a unit, lowercase-normalized.

    Lowercasing is the only normalization; fuzzy matching downstream
    tolerates small edits.  An empty set is legal (leaf unit) but logged.
    """
    names = {graph.nodes[d].name.lower() for d in descendants(graph, unit_id)}
    if not names:
        logger.warning(
            "unit %s in graph %s has no descendants; empty keyword set",
            unit_id, graph.graph_id,
        )
    return KeywordSet(unit_id=unit_id, keywords=frozenset(names))
