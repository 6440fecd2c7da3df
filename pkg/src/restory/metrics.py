"""Similarity metrics for comparing candidate stories against references.

Implements n-gram BLEU (optionally add-one smoothed for n >= 2), ROUGE-L
(optionally Porter-stemmed), and greedy token-matching precision/recall/F1
over per-token embeddings, plus the three-way fidelity classification of
F1 scores. All scores live in [0, 1]; reporting multiplies by 100 at
emission time.
"""

from __future__ import annotations

import hashlib
import math
import string
import warnings as _warnings
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DataError


class MetricInputError(DataError):
    pass


_PUNCT = frozenset(string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel leading/trailing punctuation
    into separate tokens. Empty text gives an empty list."""
    out: list[str] = []
    for raw in text.lower().split():
        i, j = 0, len(raw)
        lead: list[str] = []
        while i < j and raw[i] in _PUNCT:
            lead.append(raw[i])
            i += 1
        trail: list[str] = []
        while j > i and raw[j - 1] in _PUNCT:
            trail.append(raw[j - 1])
            j -= 1
        out.extend(lead)
        if i < j:
            out.append(raw[i:j])
        out.extend(reversed(trail))
    return out


# ---------------------------------------------------------------------------
# Porter stemmer (classic suffix-stripping algorithm)

_VOWELS = "aeiou"


def _is_cons(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_cons(word, i - 1)
    return True


def _measure(stem: str) -> int:
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        vowel = not _is_cons(stem, i)
        if prev_vowel and not vowel:
            m += 1
        prev_vowel = vowel
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_cons(stem, i) for i in range(len(stem)))


def _ends_double_cons(word: str) -> bool:
    return len(word) >= 2 and word[-1] == word[-2] and _is_cons(word, len(word) - 1)


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    n = len(word)
    return (
        _is_cons(word, n - 3)
        and not _is_cons(word, n - 2)
        and _is_cons(word, n - 1)
        and word[-1] not in "wxy"
    )


_STEP2 = [
    ("ization", "ize"), ("iveness", "ive"), ("fulness", "ful"), ("ousness", "ous"),
    ("ational", "ate"), ("tional", "tion"), ("biliti", "ble"), ("entli", "ent"),
    ("ousli", "ous"), ("ation", "ate"), ("alism", "al"), ("aliti", "al"),
    ("iviti", "ive"), ("enci", "ence"), ("anci", "ance"), ("izer", "ize"),
    ("abli", "able"), ("alli", "al"), ("ator", "ate"), ("eli", "e"),
]

_STEP3 = [
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
]

_STEP4 = [
    "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ism",
    "ate", "iti", "ous", "ive", "ize", "ion", "al", "er", "ic", "ou",
]


def porter_stem(word: str) -> str:
    w = word.lower()
    if len(w) <= 2:
        return w

    # step 1a
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    # step 1b
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    else:
        stripped = False
        if w.endswith("ed") and _has_vowel(w[:-2]):
            w = w[:-2]
            stripped = True
        elif w.endswith("ing") and _has_vowel(w[:-3]):
            w = w[:-3]
            stripped = True
        if stripped:
            if w.endswith(("at", "bl", "iz")):
                w += "e"
            elif _ends_double_cons(w) and not w.endswith(("l", "s", "z")):
                w = w[:-1]
            elif _measure(w) == 1 and _ends_cvc(w):
                w += "e"

    # step 1c
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    # step 2
    for suffix, repl in _STEP2:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > 0:
                w = stem + repl
            break

    # step 3
    for suffix, repl in _STEP3:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > 0:
                w = stem + repl
            break

    # step 4
    for suffix in _STEP4:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > 1:
                if suffix == "ion" and not stem.endswith(("s", "t")):
                    break
                w = stem
            break

    # step 5a
    if w.endswith("e"):
        stem = w[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            w = stem

    # step 5b
    if _measure(w) > 1 and _ends_double_cons(w) and w.endswith("l"):
        w = w[:-1]

    return w


# ---------------------------------------------------------------------------
# Score containers


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f1: float

    def __post_init__(self):
        for name in ("precision", "recall", "f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise MetricInputError(f"{name} {v} outside [0, 1]")
        expected = _f1(self.precision, self.recall)
        if abs(self.f1 - expected) > 1e-9:
            raise MetricInputError(
                f"f1 {self.f1} inconsistent with precision/recall (expected {expected})"
            )

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "ScoreTriple":
        return cls(precision, recall, _f1(precision, recall))


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


class FidelityBand(Enum):
    FAITHFUL = "faithful"
    ADEQUATE = "adequate"
    DIVERGENT = "divergent"


def classify_fidelity(f1: float) -> FidelityBand:
    """Three-way quality banding of an F1 score.

    Faithful at or above 0.9, Divergent at or below 0.65, Adequate in
    between (the (0.65, 0.66) sliver closes the gap on the Adequate side).
    """
    if not 0.0 <= f1 <= 1.0:
        raise MetricInputError(f"f1 {f1} outside [0, 1]")
    if f1 >= 0.9:
        return FidelityBand.FAITHFUL
    if f1 > 0.65:
        return FidelityBand.ADEQUATE
    return FidelityBand.DIVERGENT


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidate: Sequence[str],
    reference: Sequence[str],
    max_n: int = 4,
    smoothing: bool = False,
) -> float:
    """Geometric mean of clipped n-gram precisions times the brevity penalty.

    With smoothing, numerators and denominators for n >= 2 get add-one;
    without it, any zero precision collapses the score to 0.
    """
    if max_n < 1:
        raise MetricInputError(f"max_n must be >= 1, got {max_n}")
    if not candidate or not reference:
        _warnings.warn("bleu over an empty sequence is defined as 0", RuntimeWarning)
        return 0.0

    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        clipped = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        total = sum(cand_counts.values())
        if smoothing and n >= 2:
            clipped += 1
            total += 1
        if clipped == 0 or total == 0:
            return 0.0
        log_sum += math.log(clipped / total) / max_n

    if len(candidate) < len(reference):
        bp = math.exp(1 - len(reference) / len(candidate))
    else:
        bp = 1.0
    return bp * math.exp(log_sum)


# ---------------------------------------------------------------------------
# ROUGE-L


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(
    candidate: Sequence[str],
    reference: Sequence[str],
    use_stemming: bool = False,
) -> ScoreTriple:
    """Longest-common-subsequence precision/recall/F1, optionally after
    Porter-stemming both sides. Either side empty gives all zeros."""
    if not candidate or not reference:
        return ScoreTriple(0.0, 0.0, 0.0)
    if use_stemming:
        candidate = [porter_stem(t) for t in candidate]
        reference = [porter_stem(t) for t in reference]
    lcs = _lcs_length(candidate, reference)
    return ScoreTriple.from_pr(lcs / len(candidate), lcs / len(reference))


# ---------------------------------------------------------------------------
# Greedy embedding matching


@dataclass(frozen=True, eq=False)
class EmbeddedText:
    """Tokens with one unit-norm vector each (rows of `vectors`)."""

    tokens: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vecs)
        if vecs.ndim != 2:
            raise MetricInputError(f"vectors must be 2-D, got shape {vecs.shape}")
        if len(self.tokens) != vecs.shape[0]:
            raise MetricInputError(
                f"{len(self.tokens)} tokens but {vecs.shape[0]} vectors"
            )
        if vecs.shape[0]:
            norms = np.linalg.norm(vecs, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise MetricInputError("vectors must be unit Euclidean norm")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def greedy_embedding_score(candidate: EmbeddedText, reference: EmbeddedText) -> ScoreTriple:
    """Greedy max-cosine token matching: precision averages each candidate
    token's best match against the reference, recall the reverse. Negative
    cosines floor at zero so scores stay in [0, 1]."""
    if len(candidate) == 0 or len(reference) == 0:
        raise MetricInputError("greedy embedding score needs non-empty inputs")
    if candidate.dim != reference.dim:
        raise MetricInputError(
            f"embedding dimension mismatch: {candidate.dim} vs {reference.dim}"
        )
    sim = candidate.vectors @ reference.vectors.T
    precision = float(np.mean(np.clip(sim.max(axis=1), 0.0, 1.0)))
    recall = float(np.mean(np.clip(sim.max(axis=0), 0.0, 1.0)))
    return ScoreTriple.from_pr(precision, recall)


# ---------------------------------------------------------------------------
# Embedding providers
#
# Contract: `provider_id` string plus `embed(text) -> EmbeddedText`,
# deterministic in the text. The hash-seeded provider gives hermetic,
# repeatable vectors; the one-hot provider gives exactly-orthogonal ones.


class HashEmbedder:
    """Deterministic synthetic embeddings: each distinct token type gets a
    unit vector seeded from its SHA-256 digest (optionally salted)."""

    def __init__(self, dim: int = 64, salt: int = 0):
        if dim < 1:
            raise MetricInputError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.salt = salt
        self.provider_id = f"synthetic-hash-{dim}" + (f"-s{salt}" if salt else "")
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.salt}:{token}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def embed(self, text: str) -> EmbeddedText:
        tokens = tuple(tokenize(text))
        if tokens:
            vectors = np.stack([self._vector(t) for t in tokens])
        else:
            vectors = np.zeros((0, self.dim))
        return EmbeddedText(tokens=tokens, vectors=vectors)


class OneHotEmbedder:
    """Basis-vector embeddings over a fixed vocabulary; distinct tokens are
    exactly orthogonal. Tokens outside the vocabulary are an error."""

    def __init__(self, vocabulary: Sequence[str]):
        vocab = sorted(set(vocabulary))
        if not vocab:
            raise MetricInputError("vocabulary must be non-empty")
        self._index = {tok: i for i, tok in enumerate(vocab)}
        self.dim = len(vocab)
        self.provider_id = f"one-hot-{self.dim}"

    def embed(self, text: str) -> EmbeddedText:
        tokens = tuple(tokenize(text))
        vectors = np.zeros((len(tokens), self.dim))
        for row, tok in enumerate(tokens):
            try:
                vectors[row, self._index[tok]] = 1.0
            except KeyError:
                raise MetricInputError(f"token {tok!r} not in embedder vocabulary") from None
        return EmbeddedText(tokens=tokens, vectors=vectors)
