"""QA-corpus ingestion and the instance -> unit index.

Corpus file: UTF-8 JSON lines with string fields ``id``, ``query``,
``answer``, ``source``.  Index file: one JSON header line carrying the
build metadata (tagger identity, unit universe, optional timestamp), then
``instance_id<TAB>unit_id1,unit_id2,...`` lines sorted by instance id;
the inverted postings are rebuilt on load.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import OracleError, ParseError, ValidationError
from .tagger import TagPrediction
from .units import NON_SCIENTIFIC

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CorpusInstance:
    """One QA pair."""

    instance_id: str
    query: str
    answer: str
    source: str = ""

    def __post_init__(self):
        if not self.query or not self.answer:
            raise ValidationError(
                f"instance {self.instance_id!r} has an empty query or answer"
            )


def normalize_text(text: str) -> str:
    """Whitespace-collapsed, casefolded form used for dedup and denylists."""
    return " ".join(text.split()).casefold()


@dataclass
class Denylist:
    """Exact-match exclusions: instance ids and normalized texts."""

    ids: frozenset[str] = frozenset()
    texts: frozenset[str] = frozenset()

    @classmethod
    def from_file(cls, path: str | Path) -> "Denylist":
        ids: set[str] = set()
        texts: set[str] = set()
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    record = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"bad denylist record: {exc}", str(path), lineno)
                if "id" in record:
                    ids.add(str(record["id"]))
                if "text" in record:
                    texts.add(normalize_text(str(record["text"])))
        return cls(ids=frozenset(ids), texts=frozenset(texts))

    def matches(self, instance: CorpusInstance) -> bool:
        return (
            instance.instance_id in self.ids
            or normalize_text(instance.query) in self.texts
            or normalize_text(instance.answer) in self.texts
        )


@dataclass
class IngestReport:
    kept: int = 0
    dedup_dropped: int = 0
    denylist_dropped: int = 0
    duplicate_id_dropped: int = 0

    def to_record(self) -> dict:
        return {
            "kept": self.kept,
            "dedup_dropped": self.dedup_dropped,
            "denylist_dropped": self.denylist_dropped,
            "duplicate_id_dropped": self.duplicate_id_dropped,
        }


def _parse_corpus_line(raw: str, path: str, lineno: int) -> CorpusInstance:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad corpus record: {exc}", path, lineno)
    try:
        return CorpusInstance(
            instance_id=str(record["id"]),
            query=str(record["query"]),
            answer=str(record["answer"]),
            source=str(record.get("source", "")),
        )
    except KeyError as exc:
        raise ParseError(f"missing corpus field {exc}", path, lineno)
    except ValidationError as exc:
        raise ParseError(str(exc), path, lineno)


def ingest_corpus(
    paths: Sequence[str | Path],
    exclusions: Denylist | None = None,
) -> tuple[list[CorpusInstance], IngestReport]:
    """Stream-load corpus files, dedup exact QA pairs, apply the denylist.

    Deduplication keys on the normalized (query, answer) pair; a repeated
    instance id keeps the first occurrence.  Ground-truth leakage is
    filtered by exact normalized-text match.
    """
    exclusions = exclusions or Denylist()
    report = IngestReport()
    seen_pairs: set[tuple[str, str]] = set()
    seen_ids: set[str] = set()
    kept: list[CorpusInstance] = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                inst = _parse_corpus_line(raw, str(path), lineno)
                if exclusions.matches(inst):
                    report.denylist_dropped += 1
                    continue
                pair = (normalize_text(inst.query), normalize_text(inst.answer))
                if pair in seen_pairs:
                    report.dedup_dropped += 1
                    continue
                if inst.instance_id in seen_ids:
                    logger.warning(
                        "duplicate instance id %s at %s:%d dropped",
                        inst.instance_id, path, lineno,
                    )
                    report.duplicate_id_dropped += 1
                    continue
                seen_pairs.add(pair)
                seen_ids.add(inst.instance_id)
                kept.append(inst)
    report.kept = len(kept)
    logger.info(
        "ingested %d instance(s) (%d dedup, %d denylist, %d dup-id dropped)",
        report.kept, report.dedup_dropped, report.denylist_dropped,
        report.duplicate_id_dropped,
    )
    return kept, report


# ---------------------------------------------------------------------------
# Tag index
# ---------------------------------------------------------------------------


@dataclass
class TagIndex:
    """Forward and inverted instance/unit mappings, mutually consistent."""

    entries: dict[str, frozenset[str]]
    unit_postings: dict[str, list[str]]
    build_meta: dict = field(default_factory=dict)

    @classmethod
    def from_entries(
        cls,
        entries: Mapping[str, Iterable[str]],
        build_meta: dict | None = None,
        unit_universe: Iterable[str] | None = None,
    ) -> "TagIndex":
        frozen = {iid: frozenset(units) for iid, units in entries.items()}
        postings: dict[str, list[str]] = {
            uid: [] for uid in sorted(unit_universe or [])
        }
        for iid in sorted(frozen):
            for uid in frozen[iid]:
                postings.setdefault(uid, []).append(iid)
        return cls(entries=frozen, unit_postings=postings, build_meta=dict(build_meta or {}))


def build_index(
    instances: Sequence[CorpusInstance],
    tagger: Callable[[str, str], TagPrediction],
    unit_universe: Iterable[str] | None = None,
    tagger_name: str = "baseline",
    built_at: str | None = None,
) -> TagIndex:
    """Tag every instance exactly once and assemble the index.

    ``tagger`` maps ``(query, instance_id)`` to a TagPrediction; a failing
    external tagger tags the instance non-scientific and logs the event.
    """
    entries: dict[str, frozenset[str]] = {}
    failures = 0
    for inst in instances:
        try:
            pred = tagger(inst.query, inst.instance_id)
            entries[inst.instance_id] = pred.units
        except OracleError as exc:
            failures += 1
            logger.warning("tagger failed on %s: %s", inst.instance_id, exc)
            entries[inst.instance_id] = frozenset({NON_SCIENTIFIC})
    meta = {
        "format_version": INDEX_FORMAT_VERSION,
        "tagger": tagger_name,
        "units": sorted(unit_universe or []),
    }
    if built_at is not None:
        meta["built_at"] = built_at
    if failures:
        logger.warning("%d instance(s) fell back to the non-scientific tag", failures)
    return TagIndex.from_entries(entries, build_meta=meta, unit_universe=unit_universe)


def lookup_candidates(index: TagIndex, target_units: Iterable[str]) -> set[str]:
    """Union of postings for the target units (instances sharing >= 1 unit)."""
    result: set[str] = set()
    for uid in sorted(set(target_units)):
        postings = index.unit_postings.get(uid)
        if postings is None:
            logger.warning("unknown unit id %s ignored in candidate lookup", uid)
            continue
        result.update(postings)
    return result


def save_index(index: TagIndex, path: str | Path) -> None:
    """Persist atomically: write a temp file in place, then rename."""
    path = Path(path)
    header = json.dumps(index.build_meta, sort_keys=True, ensure_ascii=False)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or ".", prefix=".idx-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for iid in sorted(index.entries):
                units = ",".join(sorted(index.entries[iid]))
                fh.write(f"{iid}\t{units}\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_index(path: str | Path) -> TagIndex:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise ParseError("missing index header", str(path), 1)
        try:
            meta = json.loads(header)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad index header: {exc}", str(path), 1)
        entries: dict[str, frozenset[str]] = {}
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            iid, _, units_field = line.partition("\t")
            units = frozenset(u for u in units_field.split(",") if u)
            entries[iid] = units
    return TagIndex.from_entries(entries, build_meta=meta, unit_universe=meta.get("units"))


def load_instances(paths: Sequence[str | Path]) -> dict[str, CorpusInstance]:
    """Plain load keyed by instance id, without dedup bookkeeping."""
    out: dict[str, CorpusInstance] = {}
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                inst = _parse_corpus_line(raw, str(path), lineno)
                out.setdefault(inst.instance_id, inst)
    return out


def save_instances(instances: Iterable[CorpusInstance], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            record = {
                "id": inst.instance_id,
                "query": inst.query,
                "answer": inst.answer,
                "source": inst.source,
            }
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count
