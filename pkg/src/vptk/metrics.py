"""Region-level text metrics: word-set IoU, embedding cosine similarity,
consensus n-gram scoring (CIDEr-style), a simplified METEOR, and
binary-choice accuracy.

Everything is deterministic and pure. The similarity embedder is an
interface: the default is a hashed bag-of-stems (no model weights, fully
reproducible), with an external embedding-service client available when
absolute similarity quality matters. Scores from different embedders are
not comparable with each other.

meteor_lite is METEOR without the synonym stage: exact surface matches
first, Porter-stem matches second, harmonic precision/recall weighting
alpha=0.9, and a fragmentation penalty gamma*(chunks/matches)^beta with
gamma=0.5, beta=3. Candidate-to-reference alignment is greedy
left-to-right within each stage (the full metric searches for the
chunk-minimizing alignment; the greedy rule is pinned here for
reproducibility).
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import porter


class EmptyText(ValueError):
    """Text had no tokens left after normalization."""


class Misaligned(ValueError):
    """Candidate/reference ids or lengths do not line up."""


class DegenerateIdf(ValueError):
    """Too few corpus items for document frequencies to mean anything."""


@dataclass(frozen=True)
class MetricResult:
    """One scored metric with its supporting item count."""

    name: str
    value: float
    support: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"{self.name} produced a non-finite value")
        if self.support < 1:
            raise ValueError(f"{self.name} scored with support {self.support}")


class TextNormalizer:
    """Lowercase, strip punctuation, split on whitespace, optionally stem.

    Normalization is idempotent: tokens are already lowercase alphanumerics,
    and stems are reduced to a fixed point so a second pass changes nothing.
    """

    def __init__(self, stem: bool = False):
        self.stem = stem

    def tokens(self, text: str) -> list[str]:
        cleaned = "".join(c if c.isalnum() else " " for c in text.lower())
        words = cleaned.split()
        if not self.stem:
            return words
        return [self._stem_fixed(w) for w in words]

    @staticmethod
    def _stem_fixed(word: str) -> str:
        for _ in range(5):
            reduced = porter.stem(word)
            if reduced == word:
                return word
            word = reduced
        return word


def _require_tokens(text: str, normalizer: TextNormalizer, side: str) -> list[str]:
    toks = normalizer.tokens(text)
    if not toks:
        raise EmptyText(f"{side} text is empty after normalization")
    return toks


# --- embedders ------------------------------------------------------------------


class Embedder(Protocol):
    """text -> unit-norm vector of a fixed dimension."""

    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedBagEmbedder:
    """Deterministic bag-of-stems embedding via feature hashing.

    Each stem hashes (sha256) to one coordinate and a sign; counts
    accumulate and the vector is L2-normalized. Disjoint stem sets give
    orthogonal vectors unless coordinates collide.
    """

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self._normalizer = TextNormalizer(stem=True)

    def embed(self, text: str) -> np.ndarray:
        toks = _require_tokens(text, self._normalizer, "embedder input")
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok, count in Counter(toks).items():
            digest = hashlib.sha256(tok.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:8], "big") % self.dim
            sign = 1.0 if digest[8] % 2 == 0 else -1.0
            vec[idx] += sign * count
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # only reachable through sign cancellation across repeated hashes
            raise EmptyText("embedding cancelled to the zero vector")
        return vec / norm


class ExternalEmbedder:
    """Client for an embedding-service endpoint (POST {base}/embeddings).

    Responses are L2-normalized before use so the unit-norm contract holds
    regardless of what the service returns.
    """

    def __init__(self, base_url: str, model: str, dim: int, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        import requests

        if not text.strip():
            raise EmptyText("embedder input is empty")
        resp = requests.post(
            f"{self.base_url}/embeddings",
            json={"model": self.model, "input": text},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0.0 or vec.shape != (self.dim,):
            raise ValueError("embedding service returned an unusable vector")
        return vec / norm


# --- word-set and embedding metrics ----------------------------------------------


def semantic_iou(pred: str, gt: str, normalizer: TextNormalizer | None = None) -> float:
    """|words(pred) & words(gt)| / |words(pred) | words(gt)| over word sets."""
    normalizer = normalizer or TextNormalizer(stem=False)
    pw = set(_require_tokens(pred, normalizer, "prediction"))
    gw = set(_require_tokens(gt, normalizer, "ground truth"))
    return len(pw & gw) / len(pw | gw)


def semantic_similarity(pred: str, gt: str, embedder: Embedder | None = None) -> float:
    """Cosine of the two unit embeddings, in [-1, 1]."""
    embedder = embedder or HashedBagEmbedder()
    return float(np.dot(embedder.embed(pred), embedder.embed(gt)))


# --- consensus n-gram scoring -----------------------------------------------------


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def cider(
    candidates: dict[str, str],
    references: dict[str, list[str]],
    normalizer: TextNormalizer | None = None,
    max_n: int = 4,
) -> tuple[float, dict[str, float]]:
    """TF-IDF weighted n-gram cosine consensus, averaged over n=1..4, x10.

    Document frequencies come from the reference side: an n-gram's df is
    the number of corpus items whose reference set mentions it, and
    idf = ln(N / max(1, df)). Per item, each reference contributes the
    cosine between its TF-IDF vector and the candidate's, averaged over
    references and n-gram orders, scaled by 10. Returns the corpus mean
    and the per-item scores.
    """
    normalizer = normalizer or TextNormalizer(stem=True)
    n_items = len(references)
    if n_items < 2:
        raise DegenerateIdf("need >= 2 reference items for document frequencies")
    missing = [cid for cid in candidates if cid not in references or not references[cid]]
    if missing:
        raise Misaligned(f"candidates without references: {missing}")

    ref_tokens = {
        cid: [normalizer.tokens(r) for r in refs] for cid, refs in references.items()
    }
    doc_freq: list[Counter] = [Counter() for _ in range(max_n)]
    for toks_list in ref_tokens.values():
        for n in range(1, max_n + 1):
            seen: set[tuple] = set()
            for toks in toks_list:
                seen.update(_ngram_counts(toks, n).keys())
            for g in seen:
                doc_freq[n - 1][g] += 1
    log_n = math.log(n_items)

    def tfidf(tokens: list[str], n: int) -> dict[tuple, float]:
        counts = _ngram_counts(tokens, n)
        return {
            g: c * (log_n - math.log(max(1.0, doc_freq[n - 1][g])))
            for g, c in counts.items()
        }

    def cosine(a: dict[tuple, float], b: dict[tuple, float]) -> float:
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0.0 or nb == 0.0:
            return 0.0
        dot = sum(v * b[g] for g, v in a.items() if g in b)
        return dot / (na * nb)

    per_item: dict[str, float] = {}
    for cid, cand in candidates.items():
        cand_toks = normalizer.tokens(cand)
        total = 0.0
        for n in range(1, max_n + 1):
            cand_vec = tfidf(cand_toks, n)
            sims = [cosine(cand_vec, tfidf(toks, n)) for toks in ref_tokens[cid]]
            total += sum(sims) / len(sims)
        per_item[cid] = 10.0 * total / max_n
    corpus = sum(per_item.values()) / len(per_item) if per_item else 0.0
    return corpus, per_item


# --- simplified METEOR -------------------------------------------------------------


def _align(cand: list[str], ref: list[str], stemmer: TextNormalizer) -> list[tuple[int, int]]:
    """Greedy two-stage unigram alignment; returns (cand_idx, ref_idx) pairs."""
    cand_stems = [stemmer._stem_fixed(w) for w in cand]
    ref_stems = [stemmer._stem_fixed(w) for w in ref]
    matched_c = [False] * len(cand)
    matched_r = [False] * len(ref)
    pairs: list[tuple[int, int]] = []
    for stage_keys_c, stage_keys_r in ((cand, ref), (cand_stems, ref_stems)):
        for i, key in enumerate(stage_keys_c):
            if matched_c[i]:
                continue
            for j, rkey in enumerate(stage_keys_r):
                if not matched_r[j] and rkey == key:
                    matched_c[i] = matched_r[j] = True
                    pairs.append((i, j))
                    break
    pairs.sort()
    return pairs


def _chunks(pairs: list[tuple[int, int]]) -> int:
    count = 0
    prev = None
    for ci, ri in pairs:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            count += 1
        prev = (ci, ri)
    return count


def meteor_lite(
    candidate: str,
    references: list[str],
    alpha: float = 0.9,
    gamma: float = 0.5,
    beta: float = 3.0,
    normalizer: TextNormalizer | None = None,
) -> float:
    """Max over references of Fmean * (1 - penalty); see module docstring."""
    normalizer = normalizer or TextNormalizer(stem=False)
    stemmer = TextNormalizer(stem=True)
    cand = _require_tokens(candidate, normalizer, "candidate")
    if not references:
        raise EmptyText("no references given")
    best = 0.0
    for ref_text in references:
        ref = _require_tokens(ref_text, normalizer, "reference")
        pairs = _align(cand, ref, stemmer)
        m = len(pairs)
        if m == 0:
            continue
        precision = m / len(cand)
        recall = m / len(ref)
        f_mean = precision * recall / (alpha * precision + (1.0 - alpha) * recall)
        penalty = gamma * (_chunks(pairs) / m) ** beta
        best = max(best, f_mean * (1.0 - penalty))
    return best


# --- binary-choice accuracy ----------------------------------------------------------


def _contains_phrase(tokens: list[str], phrase: list[str]) -> bool:
    if not phrase or len(phrase) > len(tokens):
        return False
    return any(
        tokens[i : i + len(phrase)] == phrase for i in range(len(tokens) - len(phrase) + 1)
    )


def binary_choice_accuracy(
    responses: list[tuple[str, str, str, str]],
    normalizer: TextNormalizer | None = None,
) -> tuple[float, list[bool]]:
    """Score (response, class_a, class_b, gt_class) items.

    A response is correct iff exactly one of the two class names appears in
    it (word-boundary phrase match after normalization) and that name is the
    ground truth. Mentioning both or neither scores incorrect, never raises.
    """
    normalizer = normalizer or TextNormalizer(stem=False)
    verdicts: list[bool] = []
    for text, class_a, class_b, gt in responses:
        if gt not in (class_a, class_b):
            raise ValueError(f"gt_class {gt!r} is neither option")
        toks = normalizer.tokens(text)
        a_hit = _contains_phrase(toks, normalizer.tokens(class_a))
        b_hit = _contains_phrase(toks, normalizer.tokens(class_b))
        if a_hit == b_hit:
            verdicts.append(False)
        else:
            mentioned = class_a if a_hit else class_b
            verdicts.append(mentioned == gt)
    if not verdicts:
        raise ValueError("no responses to score")
    return sum(verdicts) / len(verdicts), verdicts
