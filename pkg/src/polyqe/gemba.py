"""LLM-as-judge scoring: prompt construction, score extraction, batch client.

Prompts follow the instruct-the-judge pattern: a scoring instruction on a
0-100 scale, the segment under evaluation, optionally a human reference,
and optionally example translations (with gold scores, and with their own
sources in the in-context variant). Rendering is byte-deterministic; the
prompt always ends with a single trailing "Score:" cue so the reply's last
number is the score.

The HTTP client speaks the common chat-completions JSON shape and is only
ever tested against a local mock server; no live endpoints are required.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import requests

from .errors import PolyqeError

logger = logging.getLogger(__name__)

VARIANTS = ("standard", "polycand", "polyic")

LANG_NAMES = {
    "cs": "Czech",
    "de": "German",
    "en": "English",
    "es": "Spanish",
    "fr": "French",
    "hi": "Hindi",
    "is": "Icelandic",
    "it": "Italian",
    "ja": "Japanese",
    "ko": "Korean",
    "pl": "Polish",
    "pt": "Portuguese",
    "ru": "Russian",
    "uk": "Ukrainian",
    "zh": "Chinese",
}

_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


class ScoreParseError(PolyqeError):
    """The judge's reply contains no number; carries the raw response."""

    def __init__(self, response: str):
        super().__init__(f"no score found in response: {response[:200]!r}")
        self.response = response


def lang_name(code: str) -> str:
    return LANG_NAMES.get(code, code)


@dataclass(frozen=True)
class GembaExample:
    translation: str
    score: Optional[float] = None
    source: Optional[str] = None


@dataclass(frozen=True)
class GembaPrompt:
    variant: str
    src_lang: str
    tgt_lang: str
    src: str
    mt: str
    ref: Optional[str] = None
    examples: tuple[GembaExample, ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")


def _preamble(spec: GembaPrompt, separator: str) -> str:
    reference_clause = " with respect to human reference" if spec.ref is not None else ""
    return (
        f"Score the translation provided at the end of this prompt from {spec.src_lang} "
        f"to {spec.tgt_lang}{reference_clause} on a continuous scale from 0 to 100, "
        'where a score of zero means "no meaning preserved" and score of one hundred '
        'means "perfect meaning and grammar". Keep your explanation as short as '
        f"possible. Provide the final score at the end of your answer{separator} "
        "do not output anything else afterward."
    )


def _format_score(score: float) -> str:
    return f"{score:g}"


def _segment_lines(spec: GembaPrompt) -> list[str]:
    lines = [f"{spec.src_lang} source: {spec.src}"]
    if spec.ref is not None:
        lines.append(f"{spec.tgt_lang} human reference: {spec.ref}")
    return lines


def build_prompt(spec: GembaPrompt) -> str:
    """Render the prompt for the given variant, byte-deterministically."""
    if spec.variant == "standard":
        if spec.examples:
            raise ValueError("the standard variant takes no examples")
        lines = [_preamble(spec, ";"), *_segment_lines(spec),
                 f"{spec.tgt_lang} translation: {spec.mt}", "", "Score:"]
        return "\n".join(lines)

    if not spec.examples:
        raise ValueError(f"the {spec.variant} variant needs at least one example")
    with_scores = all(ex.score is not None for ex in spec.examples)
    if not with_scores and any(ex.score is not None for ex in spec.examples):
        raise ValueError("either all examples carry scores or none do")

    if spec.variant == "polycand":
        intro = (
            "Below is an example translation along with its score:"
            if with_scores
            else "Below is an example translation:"
        )
        lines = [_preamble(spec, ";"), *_segment_lines(spec), "", intro]
        for i, example in enumerate(spec.examples):
            if i > 0:
                lines.append("")
            lines.append(f'{spec.tgt_lang} translation: "{example.translation}"')
            if with_scores:
                lines.append(f"Score: {_format_score(example.score)}")
        lines += [
            "",
            "Now score this translation (remember to output the final score only "
            "at the end of your answer):",
            f"{spec.tgt_lang} translation: {spec.mt}",
            "",
            "Score:",
        ]
        return "\n".join(lines)

    # polyic: full scored examples, each with its own source
    for i, example in enumerate(spec.examples):
        if example.source is None:
            raise ValueError(f"polyic example {i} is missing its source")
        if example.score is None:
            raise ValueError(f"polyic example {i} is missing its score")
    lines = [_preamble(spec, ","), "", "Below is an example translation along with its score:"]
    for i, example in enumerate(spec.examples):
        if i > 0:
            lines.append("")
        lines.append(f"Source: {example.source}")
        lines.append(f'Translation: "{example.translation}"')
        lines.append(f"Score: {_format_score(example.score)}")
    lines += [
        "",
        "Now score this translation (remember to output the final score only "
        "at the end of your answer):",
        *_segment_lines(spec),
        f"{spec.tgt_lang} translation: {spec.mt}",
        "",
        "Score:",
    ]
    return "\n".join(lines)


def parse_score(response: str) -> float:
    """Extract the last number in the reply, clamped to [0, 100]."""
    matches = _NUMBER.findall(response)
    if not matches:
        raise ScoreParseError(response)
    return float(min(max(float(matches[-1]), 0.0), 100.0))


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model: str
    auth_env: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def _headers(endpoint: LlmEndpointConfig) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    if endpoint.auth_env:
        token = os.environ.get(endpoint.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
    return headers


def request_completion(prompt: str, endpoint: LlmEndpointConfig,
                       session: Optional[requests.Session] = None) -> str:
    """One chat-completion round trip; returns the reply text."""
    body = {
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": endpoint.temperature,
    }
    headers = _headers(endpoint)
    if logger.isEnabledFor(logging.DEBUG):
        redacted = {k: ("***" if k == "Authorization" else v) for k, v in headers.items()}
        logger.debug("POST %s headers=%s body=%s", endpoint.base_url, redacted, json.dumps(body))
    post = session.post if session is not None else requests.post
    response = post(endpoint.base_url, json=body, headers=headers, timeout=endpoint.timeout)
    logger.debug("response %s: %s", response.status_code, response.text[:500])
    if response.status_code != 200:
        raise RuntimeError(f"endpoint returned HTTP {response.status_code}")
    payload = response.json()
    try:
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise RuntimeError(f"malformed completion payload: {payload!r}") from exc


@dataclass(frozen=True)
class ScoreResult:
    id: str
    score: float
    attempts: int

    @property
    def retries(self) -> int:
        return self.attempts - 1


@dataclass(frozen=True)
class ScoreFailure:
    id: str
    error: str
    attempts: int


def score_batch(
    items: Sequence[tuple[str, GembaPrompt]],
    endpoint: LlmEndpointConfig,
    concurrency: int = 4,
) -> tuple[dict[str, ScoreResult], list[ScoreFailure]]:
    """Score items with bounded in-flight requests; failures never abort the batch.

    Transport and HTTP errors are retried with exponential backoff up to
    endpoint.max_retries; replies that carry no parsable score fail the item
    immediately (at temperature 0 a retry would fetch the same reply).
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")

    def run(item: tuple[str, GembaPrompt]):
        item_id, spec = item
        prompt = build_prompt(spec)
        session = requests.Session()
        attempts = 0
        try:
            while True:
                attempts += 1
                try:
                    content = request_completion(prompt, endpoint, session)
                except (requests.RequestException, RuntimeError) as exc:
                    if attempts > endpoint.max_retries:
                        return ScoreFailure(item_id, str(exc), attempts)
                    time.sleep(endpoint.backoff_base * 2 ** (attempts - 1))
                    continue
                try:
                    return ScoreResult(item_id, parse_score(content), attempts)
                except ScoreParseError as exc:
                    return ScoreFailure(item_id, str(exc), attempts)
        finally:
            session.close()

    results: dict[str, ScoreResult] = {}
    failures: list[ScoreFailure] = []
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        for outcome in pool.map(run, items):
            if isinstance(outcome, ScoreResult):
                results[outcome.id] = outcome
            else:
                failures.append(outcome)
    return results, failures
