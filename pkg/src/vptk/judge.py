"""Client for an external multimodal chat-completions service.

Used in two places: generating instruction data from role prompts, and
grading model answers 1-10 for benchmark evaluation. The transport layer
is deliberately boring: POST {base}/chat/completions with text plus an
optional base64 image part, bounded concurrency, exponential-backoff
retries on 429/5xx/timeouts, and a permanent on-disk response cache keyed
by (model, prompt, image bytes). Cached responses make dataset builds and
evaluations reproducible even though the upstream service is not.

All behavior is testable against a local mock server; nothing here needs
the real service.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import requests


class AuthError(RuntimeError):
    """Missing or rejected credentials; never retried."""


class ServiceUnavailable(RuntimeError):
    """Retries exhausted without a usable response."""


class UnscorableResponse(ValueError):
    """Judge reply had no parseable in-range score even after a re-ask."""


class Misaligned(ValueError):
    """Score lists of different lengths."""


class DegenerateReference(ValueError):
    """Reference scores sum to zero; the ratio is undefined."""


@dataclass(frozen=True)
class JudgeConfig:
    base_url: str
    model: str
    api_key_env: str = "JUDGE_API_KEY"
    max_concurrent: int = 4
    max_attempts: int = 5
    backoff_base: float = 1.0
    cache_dir: str = ".judge_cache"
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class JudgeScore:
    """A 1-10 integer grade plus the grader's stated reasoning."""

    score: int
    rationale: str

    def __post_init__(self) -> None:
        if not 1 <= self.score <= 10:
            raise ValueError(f"score {self.score} outside [1, 10]")


_SCORE_LINE = re.compile(r"^\s*Score:\s*(-?\d+)\s*$", re.MULTILINE)

_RETRYABLE = {429, 500, 502, 503, 504}


class JudgeClient:
    """One configured endpoint with its own concurrency bound and cache.

    Safe for concurrent use; the semaphore caps in-flight requests and
    cache writes are atomic (write-temp-then-rename).
    """

    def __init__(self, cfg: JudgeConfig, sleep_fn=time.sleep):
        self.cfg = cfg
        self._semaphore = threading.BoundedSemaphore(cfg.max_concurrent)
        self._sleep = sleep_fn
        Path(cfg.cache_dir).mkdir(parents=True, exist_ok=True)

    # --- cache ---------------------------------------------------------------

    def _cache_key(self, prompt: str, image_bytes: bytes | None) -> str:
        h = hashlib.sha256()
        h.update(self.cfg.model.encode("utf-8"))
        h.update(b"\x00")
        h.update(prompt.encode("utf-8"))
        h.update(b"\x00")
        if image_bytes is not None:
            h.update(hashlib.sha256(image_bytes).digest())
        return h.hexdigest()

    def _cache_path(self, key: str) -> Path:
        return Path(self.cfg.cache_dir) / f"{key}.json"

    def _cache_read(self, key: str) -> str | None:
        path = self._cache_path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["response"]

    def _cache_write(self, key: str, response: str) -> None:
        path = self._cache_path(key)
        payload = json.dumps({"model": self.cfg.model, "response": response}, ensure_ascii=False)
        fd, tmp = tempfile.mkstemp(dir=self.cfg.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(payload)
            os.replace(tmp, str(path))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # --- transport ------------------------------------------------------------

    def _api_key(self) -> str:
        key = os.environ.get(self.cfg.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.cfg.api_key_env} is not set")
        return key

    def complete(self, prompt: str, image_bytes: bytes | None = None) -> str:
        """Return the model's text for a prompt (and optional PNG bytes).

        Identical (model, prompt, image) requests are served from the
        on-disk cache without touching the network.
        """
        key = self._cache_key(prompt, image_bytes)
        cached = self._cache_read(key)
        if cached is not None:
            return cached
        api_key = self._api_key()  # fail before any request when unset

        content: list[dict] = [{"type": "text", "text": prompt}]
        if image_bytes is not None:
            encoded = base64.b64encode(image_bytes).decode("ascii")
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{encoded}"}}
            )
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
        }

        last_error: Exception | None = None
        for attempt in range(self.cfg.max_attempts):
            if attempt > 0:
                self._sleep(self.cfg.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    resp = requests.post(
                        f"{self.cfg.base_url.rstrip('/')}/chat/completions",
                        json=body,
                        headers={"Authorization": f"Bearer {api_key}"},
                        timeout=self.cfg.timeout,
                    )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = exc
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"service rejected credentials: {resp.status_code}")
            if resp.status_code in _RETRYABLE:
                last_error = ServiceUnavailable(f"status {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ServiceUnavailable(f"unexpected status {resp.status_code}: {resp.text[:200]}")
            text = resp.json()["choices"][0]["message"]["content"]
            self._cache_write(key, text)
            return text
        raise ServiceUnavailable(f"retries exhausted: {last_error}")

    # --- scoring ----------------------------------------------------------------

    def score_response(
        self,
        som_image: bytes,
        question: str,
        model_answer: str,
        reference: str | None = None,
    ) -> JudgeScore:
        """Grade an answer 1-10 against the marked image.

        The rubric demands a leading "Score: <integer 1-10>" line; a reply
        that fails to parse (or is out of range) triggers exactly one
        stricter re-ask before UnscorableResponse.
        """
        rubric = _rubric_text(question, model_answer, reference)
        reply = self.complete(rubric, som_image)
        parsed = _parse_score(reply)
        if parsed is not None:
            return parsed
        strict = (
            rubric
            + "\n\nYour previous reply did not follow the format. Reply again, and the very"
            " first line MUST be exactly 'Score: N' with N an integer from 1 to 10."
        )
        reply = self.complete(strict, som_image)
        parsed = _parse_score(reply)
        if parsed is None:
            raise UnscorableResponse(f"no parseable 1-10 score in: {reply[:200]!r}")
        return parsed


def _rubric_text(question: str, answer: str, reference: str | None) -> str:
    template = (resources.files("vptk") / "templates" / "judge_rubric.txt").read_text(
        encoding="utf-8"
    )
    reference_block = (
        f"\nReference answer (for comparison):\n{reference}\n" if reference else ""
    )
    return (
        template.replace("<<QUESTION>>", question)
        .replace("<<ANSWER>>", answer)
        .replace("<<REFERENCE_BLOCK>>", reference_block)
    )


def _parse_score(reply: str) -> JudgeScore | None:
    match = _SCORE_LINE.search(reply)
    if not match:
        return None
    value = int(match.group(1))
    if not 1 <= value <= 10:
        return None
    rationale = reply[match.end() :].strip()
    return JudgeScore(score=value, rationale=rationale)


def score_pair_ratio(model_scores: list[int], reference_scores: list[int]) -> float:
    """100 * sum(model) / sum(reference), the judged-quality percentage."""
    if len(model_scores) != len(reference_scores):
        raise Misaligned(
            f"{len(model_scores)} model scores vs {len(reference_scores)} reference scores"
        )
    ref_sum = sum(reference_scores)
    if ref_sum <= 0:
        raise DegenerateReference("reference scores sum to zero")
    return 100.0 * sum(model_scores) / ref_sum
