"""Pluggable model-backed endpoints.

Every model-dependent step in the pipeline (granularity classification,
unit ranking, relevance voting, query/MCQ generation, token likelihoods,
embeddings, models under test) goes through the same text-in/text-out
``Oracle`` interface with two interchangeable implementations:

* ``ScriptedOracle`` replays fixture replies keyed by a stable prompt hash,
  with an optional regex routing table for coarse fixtures;
* ``HttpChatOracle`` is a generic chat-completion client with bounded
  retries and a timeout.

Per-kind helpers (``classify_granularity``, ``rank_units``,
``judge_relevance``) render the prompt, call the oracle and parse the reply.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence, runtime_checkable

from .errors import (
    ConfigError,
    FixtureMissError,
    OracleError,
    ReplyParseError,
    TransportError,
    ValidationError,
)

logger = logging.getLogger(__name__)

# Prompt-contract cap on ranked-list length; units absent from a ranker's
# list are charged rank RANK_CAP + 1 during consensus voting.
RANK_CAP = 100

DEFAULT_RETRY_ATTEMPTS = 3
DEFAULT_BACKOFF_SECONDS = 0.5


def prompt_hash(prompt: str) -> str:
    """Stable 16-hex-digit key used by scripted fixtures."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

_FORMATTER = string.Formatter()


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body with named ``{placeholder}`` fields."""

    template_id: str
    text: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(
            fname for _, fname, _, _ in _FORMATTER.parse(self.text) if fname
        )

    def render(self, **kwargs: object) -> str:
        try:
            return self.text.format(**kwargs)
        except (KeyError, IndexError) as exc:
            raise ValidationError(
                f"template {self.template_id!r} references placeholder {exc} "
                f"not supplied at render time"
            ) from exc


class PromptLibrary:
    """Loads template assets from a directory, one ``<id>.txt`` per template.

    With no directory the library falls back to the assets bundled with the
    package, so the default prompts always resolve.
    """

    def __init__(self, prompts_dir: str | Path | None = None):
        self._dir = Path(prompts_dir) if prompts_dir else None
        self._cache: dict[str, PromptTemplate] = {}

    def get(self, template_id: str) -> PromptTemplate:
        if template_id not in self._cache:
            self._cache[template_id] = PromptTemplate(
                template_id, self._read(template_id)
            )
        return self._cache[template_id]

    def _read(self, template_id: str) -> str:
        if self._dir is not None:
            candidate = self._dir / f"{template_id}.txt"
            if candidate.exists():
                return candidate.read_text(encoding="utf-8")
        from importlib.resources import files

        resource = files("ontobench").joinpath("prompts", f"{template_id}.txt")
        if not resource.is_file():
            raise ConfigError(f"unknown prompt template {template_id!r}")
        return resource.read_text(encoding="utf-8")

    def personas(self) -> list[str]:
        text = self._read("personas").strip()
        return [line.strip() for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Oracle implementations
# ---------------------------------------------------------------------------


@runtime_checkable
class Oracle(Protocol):
    name: str

    def complete(self, prompt: str) -> str: ...


class ScriptedOracle:
    """Deterministic fixture-driven oracle.

    Lookup order: exact prompt-hash fixture first, then the first matching
    regex route.  A miss raises ``FixtureMissError`` naming the hash so the
    missing entry can be added to the fixture file.
    """

    def __init__(
        self,
        name: str = "scripted",
        fixtures: dict[str, str] | None = None,
        routes: Sequence[tuple[str, str]] | None = None,
    ):
        self.name = name
        self.fixtures = dict(fixtures or {})
        self.routes = [(re.compile(p, re.S), reply) for p, reply in (routes or [])]

    @classmethod
    def from_files(
        cls,
        name: str = "scripted",
        fixtures_path: str | Path | None = None,
        routes_path: str | Path | None = None,
    ) -> "ScriptedOracle":
        fixtures = load_fixture_file(fixtures_path) if fixtures_path else {}
        routes = load_routes_file(routes_path) if routes_path else []
        return cls(name=name, fixtures=fixtures, routes=routes)

    def complete(self, prompt: str) -> str:
        key = prompt_hash(prompt)
        if key in self.fixtures:
            return self.fixtures[key]
        for pattern, reply in self.routes:
            if pattern.search(prompt):
                return reply
        raise FixtureMissError(key)


class CallableOracle:
    """Adapter wrapping any ``prompt -> reply`` function as an oracle."""

    def __init__(self, fn: Callable[[str], str], name: str = "callable"):
        self._fn = fn
        self.name = name

    def complete(self, prompt: str) -> str:
        return self._fn(prompt)


class HttpChatOracle:
    """Generic chat-completion client over HTTP.

    The API key is read from the environment variable named in the
    configuration, never stored inline.  Transient failures (connection
    errors, timeouts, 429/5xx) are retried with exponential backoff up to
    ``attempts`` times, then surfaced as ``TransportError`` with the count.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        name: str | None = None,
        api_key_env: str | None = None,
        temperature: float = 0.0,
        max_tokens: int = 1024,
        timeout: float = 60.0,
        attempts: int = DEFAULT_RETRY_ATTEMPTS,
        backoff: float = DEFAULT_BACKOFF_SECONDS,
        session=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.name = name or model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise ConfigError(
                    f"API key environment variable {self.api_key_env!r} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        url = f"{self.base_url}/chat/completions"
        last_error = "no attempt made"
        for attempt in range(1, self.attempts + 1):
            try:
                resp = self._session.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout
                )
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code} from {url}"
                elif resp.status_code != 200:
                    raise TransportError(
                        f"HTTP {resp.status_code} from {url}", attempts=attempt
                    )
                else:
                    body = resp.json()
                    return body["choices"][0]["message"]["content"]
            except TransportError:
                raise
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            if attempt < self.attempts:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
        raise TransportError(last_error, attempts=self.attempts)


def load_fixture_file(path: str | Path) -> dict[str, str]:
    """Parse ``prompt_hash<TAB>reply`` lines; JSON-quoted replies may embed newlines."""
    fixtures: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            key, _, reply = line.partition("\t")
            if reply.startswith('"'):
                reply = json.loads(reply)
            fixtures[key.strip()] = reply
    return fixtures


def load_routes_file(path: str | Path) -> list[tuple[str, str]]:
    """Parse a JSONL routing table of ``{"pattern": ..., "reply": ...}`` records."""
    routes: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if not raw.strip():
                continue
            record = json.loads(raw)
            routes.append((record["pattern"], record["reply"]))
    return routes


# ---------------------------------------------------------------------------
# Ensembles and per-kind helpers
# ---------------------------------------------------------------------------


@dataclass
class OracleEnsemble:
    """An ordered set of oracles voting by strict majority."""

    members: list[Oracle]
    ensemble_name: str = "ensemble"

    def __post_init__(self):
        if not self.members:
            raise ConfigError("an oracle ensemble needs at least one member")

    @property
    def majority(self) -> int:
        return len(self.members) // 2 + 1


class GranularityLabel(Enum):
    COARSE = "coarse"
    MODERATE = "moderate"
    FINE = "fine"


_GRANULARITY_RE = re.compile(r"\(\s*(moderate|too coarse|too fine|coarse|fine)\s*\)", re.I)
_GRANULARITY_MAP = {
    "moderate": GranularityLabel.MODERATE,
    "too coarse": GranularityLabel.COARSE,
    "coarse": GranularityLabel.COARSE,
    "too fine": GranularityLabel.FINE,
    "fine": GranularityLabel.FINE,
}


def parse_granularity(reply: str) -> GranularityLabel:
    """Extract the leading parenthesized label from a classifier reply."""
    match = _GRANULARITY_RE.search(reply)
    if not match:
        raise ReplyParseError(
            f"no granularity label in reply: {reply[:120]!r}", reply=reply
        )
    return _GRANULARITY_MAP[match.group(1).lower()]


def classify_granularity(
    oracle: Oracle,
    term: str,
    templates: PromptLibrary | None = None,
    retry_budget: int = DEFAULT_RETRY_ATTEMPTS,
) -> GranularityLabel:
    """Ask whether a term sits at subfield granularity: coarse, moderate or fine."""
    if not term:
        raise ValidationError("cannot classify an empty term")
    templates = templates or PromptLibrary()
    prompt = templates.get("granularity").render(term=term)
    last: ReplyParseError | None = None
    for _ in range(max(1, retry_budget)):
        reply = oracle.complete(prompt)
        try:
            return parse_granularity(reply)
        except ReplyParseError as exc:
            last = exc
    raise last  # type: ignore[misc]


_LIST_ITEM_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])?\s*(.+?)\s*$")


def _parse_ranked_list(reply: str) -> list[str]:
    """Tolerant parse of a ranked tag list: JSON array, lines, or commas."""
    text = reply.strip()
    if not text:
        return []
    # JSON array, possibly inside a code fence
    fence = re.search(r"\[.*\]", text, re.S)
    if fence:
        try:
            parsed = json.loads(fence.group(0))
            if isinstance(parsed, list):
                return [str(item).strip() for item in parsed if str(item).strip()]
        except json.JSONDecodeError:
            pass
    lines = [ln for ln in text.splitlines() if ln.strip()]
    items: list[str] = []
    if len(lines) > 1:
        for ln in lines:
            m = _LIST_ITEM_RE.match(ln)
            if m:
                items.append(m.group(1))
    else:
        items = [part.strip() for part in re.split(r"[,;]", text) if part.strip()]
    return items


def rank_units(
    oracle: Oracle,
    requirement: str,
    candidates: Sequence[tuple[str, str]],
    templates: PromptLibrary | None = None,
    domain: str = "science",
    cap: int = RANK_CAP,
) -> list[str]:
    """Rank candidate units for a requirement; returns unit ids, best first.

    ``candidates`` are ``(unit_id, name)`` pairs already ordered by ascending
    corpus frequency (the prompt contract).  Names in the reply that match no
    candidate are dropped with a warning; output is deduplicated and capped.
    """
    if not candidates:
        raise ValidationError("rank_units needs a non-empty candidate list")
    templates = templates or PromptLibrary()
    tag_list = "; ".join(name for _, name in candidates)
    prompt = templates.get("unit_ranking").render(
        domain=domain, description=requirement, tag_list=tag_list
    )
    reply = oracle.complete(prompt)
    items = _parse_ranked_list(reply)
    if not items:
        raise ReplyParseError(
            f"ranker {oracle.name!r} returned an empty ranking", reply=reply
        )
    by_name = {name.casefold(): uid for uid, name in candidates}
    by_id = {uid: uid for uid, _ in candidates}
    ranked: list[str] = []
    seen: set[str] = set()
    dropped: list[str] = []
    for item in items:
        uid = by_id.get(item) or by_name.get(item.casefold())
        if uid is None:
            dropped.append(item)
            continue
        if uid not in seen:
            seen.add(uid)
            ranked.append(uid)
    if dropped:
        logger.warning(
            "ranker %s returned %d unknown tag(s), dropped: %s",
            oracle.name, len(dropped), ", ".join(dropped[:5]),
        )
    return ranked[:cap]


_YESNO_RE = re.compile(r"\b(yes|no)\b", re.I)


@dataclass
class JudgeResult:
    votes: int
    verdict: bool
    member_count: int
    failures: list[str] = field(default_factory=list)


def judge_relevance(
    ensemble: OracleEnsemble,
    requirement: str,
    instance,
    templates: PromptLibrary | None = None,
) -> JudgeResult:
    """Majority vote on whether an instance is relevant to the requirement.

    Each member is queried exactly once.  A member that fails or returns an
    unparseable reply counts as a "not relevant" vote so the surrounding
    search can terminate on flaky endpoints; the event is logged.
    """
    templates = templates or PromptLibrary()
    prompt = templates.get("relevance_judgment").render(
        requirement=requirement, query=instance.query, answer=instance.answer
    )
    votes = 0
    failures: list[str] = []
    for member in ensemble.members:
        try:
            reply = member.complete(prompt)
        except OracleError as exc:
            failures.append(f"{member.name}: {exc}")
            logger.warning(
                "judge %s failed, counted as not relevant: %s", member.name, exc
            )
            continue
        match = _YESNO_RE.search(reply)
        if match is None:
            failures.append(f"{member.name}: unparseable reply {reply[:60]!r}")
            logger.warning(
                "judge %s reply unparseable, counted as not relevant", member.name
            )
            continue
        if match.group(1).lower() == "yes":
            votes += 1
    n = len(ensemble.members)
    return JudgeResult(
        votes=votes, verdict=votes > n / 2, member_count=n, failures=failures
    )


def parse_json_array(reply: str, what: str = "array") -> list:
    """Extract the first JSON array from a reply, tolerating surrounding prose."""
    match = re.search(r"\[.*\]", reply, re.S)
    if not match:
        raise ReplyParseError(f"no JSON {what} in reply: {reply[:120]!r}", reply=reply)
    try:
        parsed = json.loads(match.group(0))
    except json.JSONDecodeError as exc:
        raise ReplyParseError(f"malformed JSON {what}: {exc}", reply=reply) from exc
    if not isinstance(parsed, list):
        raise ReplyParseError(f"expected a JSON {what}", reply=reply)
    return parsed
