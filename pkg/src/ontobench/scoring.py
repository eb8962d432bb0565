"""Intrinsic instance scores and the numeric kernels behind subset selection.

Hardness is answer perplexity given the question when a token-likelihood
provider is available, otherwise a deterministic character-bigram
surrogate fit on the whole pool (always flagged as such).  Quality is
Flesch Reading Ease with a documented heuristic syllable counter.  The
one-dimensional Wasserstein distance is computed exactly from the merged
breakpoints of the two empirical CDFs.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .oracles import Oracle, PromptLibrary

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 256

_SENTENCE_RE = re.compile(r"[.!?]+(?=\s|$)")
_VOWEL_GROUP_RE = re.compile(r"[aeiouy]+")


def hardness_score(instance, provider: Oracle, templates: PromptLibrary | None = None) -> float:
    """Perplexity of the answer conditioned on the question.

    The provider reports per-token log-probabilities (natural log) of the
    answer; the score is exp of the mean negative log-probability, so a
    fully certain answer scores exactly 1.
    """
    templates = templates or PromptLibrary()
    prompt = templates.get("likelihood_request").render(
        query=instance.query, answer=instance.answer
    )
    reply = provider.complete(prompt)
    from .oracles import parse_json_array

    logprobs = [float(x) for x in parse_json_array(reply, "log-probability list")]
    if not logprobs:
        raise ValidationError("likelihood provider returned no tokens")
    return math.exp(-sum(logprobs) / len(logprobs))


class BigramSurrogate:
    """Character-bigram model used when no likelihood provider is configured.

    Add-one smoothing over the pool alphabet keeps every probability
    positive; the surrogate hardness is exp of the per-character
    cross-entropy, a difficulty-like ordering rather than a true
    perplexity, and is flagged in all outputs.
    """

    START = "\x00"

    def __init__(self, texts: Iterable[str]):
        self.transitions: Counter = Counter()
        self.context_totals: Counter = Counter()
        alphabet: set[str] = set()
        for text in texts:
            prev = self.START
            for ch in text:
                self.transitions[(prev, ch)] += 1
                self.context_totals[prev] += 1
                alphabet.add(ch)
                prev = ch
        self.vocab_size = max(1, len(alphabet))

    def cross_entropy(self, text: str) -> float:
        if not text:
            return 0.0
        total = 0.0
        prev = self.START
        for ch in text:
            num = self.transitions.get((prev, ch), 0) + 1
            den = self.context_totals.get(prev, 0) + self.vocab_size
            total -= math.log(num / den)
            prev = ch
        return total / len(text)

    def hardness(self, text: str) -> float:
        return math.exp(self.cross_entropy(text))


def count_syllables(word: str) -> int:
    """Heuristic: maximal vowel groups (aeiouy), minus a terminal silent
    'e' when more than one group, floor 1."""
    letters = re.sub(r"[^a-z]", "", word.lower())
    if not letters:
        return 0
    count = len(_VOWEL_GROUP_RE.findall(letters))
    if count > 1 and letters.endswith("e"):
        count -= 1
    return max(1, count)


def split_sentences(text: str) -> int:
    """Sentence count: terminators (. ! ?) followed by whitespace or end; floor 1."""
    return max(1, len(_SENTENCE_RE.findall(text)))


def flesch_reading_ease(text: str) -> float:
    """Flesch Reading Ease with the heuristic counters above.

    206.835 - 1.015 * (words/sentences) - 84.6 * (syllables/words), with
    degenerate texts computed on floors (1 sentence, 1 word, 1 syllable).
    """
    words = [w for w in text.split() if re.search(r"[a-zA-Z0-9]", w)]
    n_words = max(1, len(words))
    n_sentences = split_sentences(text)
    n_syllables = max(1, sum(count_syllables(w) for w in words))
    return 206.835 - 1.015 * (n_words / n_sentences) - 84.6 * (n_syllables / n_words)


def quality_score(instance) -> float:
    """Linguistic quality of an instance: Flesch score of query + answer."""
    return flesch_reading_ease(instance.query + " " + instance.answer)


def wasserstein_1d(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Exact order-1 Wasserstein distance between two empirical distributions.

    Integrates |F_a - F_b| over the merged breakpoints; for equal sizes n
    this reduces to the mean absolute difference of sorted samples.
    """
    if len(sample_a) == 0 or len(sample_b) == 0:
        raise ValidationError("wasserstein_1d requires non-empty samples")
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    merged = np.sort(np.concatenate([a, b]))
    deltas = np.diff(merged)
    if deltas.size == 0:
        return 0.0
    cdf_a = np.searchsorted(a, merged[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, merged[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


def hash_embedding(text: str, dim: int = EMBEDDING_DIM, seed: int = 0) -> np.ndarray:
    """Offline embedding surrogate: feature-hashed character trigrams,
    L2-normalized.  Uses a keyed blake2 digest, never the salted builtin
    hash, so vectors are stable across processes and machines."""
    import hashlib

    vec = np.zeros(dim, dtype=float)
    lowered = text.lower()
    key = seed.to_bytes(8, "little", signed=True)
    for i in range(len(lowered) - 2):
        tri = lowered[i:i + 3]
        digest = hashlib.blake2b(tri.encode("utf-8"), key=key, digest_size=4).digest()
        vec[int.from_bytes(digest, "little") % dim] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def oracle_embedding(text: str, provider: Oracle, templates: PromptLibrary | None = None) -> np.ndarray:
    """Dense embedding served by an embedding-provider oracle."""
    templates = templates or PromptLibrary()
    prompt = templates.get("embedding_request").render(text=text)
    from .oracles import parse_json_array

    values = [float(x) for x in parse_json_array(provider.complete(prompt), "embedding")]
    if not values:
        raise ValidationError("embedding provider returned an empty vector")
    return np.asarray(values, dtype=float)


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------


def kmeans_assign(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> np.ndarray:
    """Lloyd's iterations with greedy farthest-point seeding, fixed seed.

    Runs until centroids move less than ``tol`` or ``max_iter`` sweeps.
    Returns the cluster index per point; clusters may end up empty.
    """
    n = points.shape[0]
    if k <= 0:
        raise ValidationError("cluster count must be positive")
    k = min(k, n)
    rng = np.random.default_rng([seed, 0])
    first = int(rng.integers(n))
    centers = [points[first]]
    dist2 = ((points - points[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dist2))  # first occurrence on ties keeps this deterministic
        centers.append(points[nxt])
        dist2 = np.minimum(dist2, ((points - points[nxt]) ** 2).sum(axis=1))
    c = np.stack(centers)

    def assignments(cents: np.ndarray) -> np.ndarray:
        # chunked broadcasting instead of a BLAS matmul keeps the float
        # summation order fixed across platforms, so assignments (and every
        # downstream golden file) stay byte-identical between machines
        out = np.empty(n, dtype=np.int64)
        chunk = max(1, int(2_000_000 // max(1, cents.shape[0] * cents.shape[1])))
        for start in range(0, n, chunk):
            block = points[start:start + chunk]
            d = ((block[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
            out[start:start + chunk] = d.argmin(axis=1)
        return out

    assign = assignments(c)
    for _ in range(max_iter):
        new_c = c.copy()
        for j in range(k):
            members = points[assign == j]
            if members.shape[0]:
                new_c[j] = members.mean(axis=0)
        movement = float(np.sqrt(((new_c - c) ** 2).sum(axis=1)).max())
        c = new_c
        assign = assignments(c)
        if movement < tol:
            break
    return assign
