"""Prompt bundle assembly and verdict parsing for LLM-based link judgment.

Bundles carry a fixed system instruction, a per-pair template over the
requirement and code text, and an automatically generated additional-
information section derived from the strategy graph: one line per structural
relation of the code artifact, one user-feedback line, and one fine-grained
line (each with a fixed negative form when the signal is absent).  Relation
lines are sorted by (other artifact id, relation kind) so identical inputs
yield byte-identical prompts.

Dispatch goes through a pluggable client interface; a recording/replay mock
ships here so test suites never touch the network.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import requests

from .corpus import Project
from .errors import PromptError
from .strategies import EdgeType, StrategyGraph

__all__ = [
    "SYSTEM_INSTRUCTION",
    "PROMPT_TEMPLATE",
    "Verdict",
    "PromptBundle",
    "LlmVerdict",
    "BatchResult",
    "TransientLlmError",
    "build_prompt",
    "parse_verdict",
    "run_batch",
    "MockClient",
    "ReplayClient",
    "RecordingClient",
    "HttpEndpointClient",
    "bundles_to_jsonl",
    "bundles_from_jsonl",
]

SYSTEM_INSTRUCTION = "You are a judge in the field of software traceability."

PROMPT_TEMPLATE = (
    'Determine if the following Requirements and Code are related. '
    'Answer only "Yes" or "No".\n'
    "\n"
    "Requirements: {requirements_text}\n"
    "\n"
    "Code: {code_text}\n"
    "\n"
    "Additional Information: {additional_information}"
)

RELATION_LINE = "{code1} and {code2} have a {relation} relationship."
FEEDBACK_LINE = "User feedback indicates label is {label}."
NO_FEEDBACK_LINE = "No user feedback information."
FINE_GRAINED_LINE = "Fine-grained relationship exists between {requirements} and {code}."
NO_FINE_GRAINED_LINE = "No fine-grained relationship between {requirements} and {code}."

DEFAULT_TEMPERATURE = 1.0
DEFAULT_CODE_TOKEN_BUDGET = 6000
TRUNCATION_MARKER = "... [truncated]"

_FIRST_WORD_RE = re.compile(r"[A-Za-z]+")


class Verdict(str, Enum):
    YES = "yes"
    NO = "no"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class PromptBundle:
    system_instruction: str
    user_prompt: str
    pair: tuple[str, str]
    temperature: float = DEFAULT_TEMPERATURE


@dataclass(frozen=True)
class LlmVerdict:
    pair: tuple[str, str]
    raw_response: str
    label: Verdict


@dataclass(frozen=True)
class BatchResult:
    """Verdicts in input order plus the dispatch manifest."""

    verdicts: tuple[LlmVerdict, ...]
    retry_counts: tuple[int, ...]
    unparseable_count: int
    errors: tuple[str, ...]
    remaining_pairs: tuple[tuple[str, str], ...]
    requests_sent: int


class TransientLlmError(Exception):
    """Endpoint failure worth retrying (rate limit, 5xx, connection)."""


class LlmClient(Protocol):  # pragma: no cover - interface only
    def send(self, bundle: PromptBundle) -> str: ...


def _truncate_code(text: str, budget: int) -> str:
    words = text.split()
    if len(words) <= budget:
        return text
    return " ".join(words[:budget]) + " " + TRUNCATION_MARKER


def build_prompt(
    pair: tuple[str, str],
    project: Project,
    graph: StrategyGraph,
    feedback_labels: Mapping[tuple[str, str], int] | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    code_token_budget: int = DEFAULT_CODE_TOKEN_BUDGET,
) -> PromptBundle:
    """Assemble the deterministic prompt bundle for one requirement-code pair."""
    req_id, code_id = pair
    feedback_labels = feedback_labels or {}
    try:
        req = project.artifact(req_id)
        code = project.artifact(code_id)
    except KeyError as exc:
        raise PromptError(f"unknown pair endpoint: {exc.args[0]}") from exc

    lines: list[str] = []
    incident = sorted(
        graph.incident_code_edges(code_id),
        key=lambda e: (e.target if e.source == code_id else e.source, e.type.value),
    )
    for edge in incident:
        lines.append(
            RELATION_LINE.format(code1=edge.source, code2=edge.target, relation=edge.type.value)
        )
    if pair in feedback_labels:
        lines.append(FEEDBACK_LINE.format(label=feedback_labels[pair]))
    else:
        lines.append(NO_FEEDBACK_LINE)
    if graph.has_edge(req_id, code_id, EdgeType.FINE_GRAINED):
        lines.append(FINE_GRAINED_LINE.format(requirements=req_id, code=code_id))
    else:
        lines.append(NO_FINE_GRAINED_LINE.format(requirements=req_id, code=code_id))

    user_prompt = PROMPT_TEMPLATE.format(
        requirements_text=req.text,
        code_text=_truncate_code(code.text, code_token_budget),
        additional_information="\n".join(lines),
    )
    return PromptBundle(
        system_instruction=SYSTEM_INSTRUCTION,
        user_prompt=user_prompt,
        pair=pair,
        temperature=temperature,
    )


def parse_verdict(raw: str, pair: tuple[str, str]) -> LlmVerdict:
    """First-token rule: leading alphabetic run, case-insensitive yes/no."""
    match = _FIRST_WORD_RE.match(raw.strip())
    token = match.group(0).lower() if match else ""
    if token == "yes":
        label = Verdict.YES
    elif token == "no":
        label = Verdict.NO
    else:
        label = Verdict.UNPARSEABLE
    return LlmVerdict(pair=pair, raw_response=raw, label=label)


def run_batch(
    bundles: Sequence[PromptBundle],
    client: "LlmClient",
    budget: int | None = None,
    max_retries: int = 3,
    backoff_s: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> BatchResult:
    """Sequential dispatch with retry/backoff and a request budget.

    Every request sent (including retries) counts against the budget.  On
    budget exhaustion or a persistent failure the partial verdicts are
    returned with the error manifest listing the unprocessed pairs.
    """
    verdicts: list[LlmVerdict] = []
    retry_counts: list[int] = []
    errors: list[str] = []
    sent = 0
    stop_index = len(bundles)

    for i, bundle in enumerate(bundles):
        retries = 0
        while True:
            if budget is not None and sent >= budget:
                errors.append(f"request budget {budget} exhausted before pair {bundle.pair}")
                stop_index = i
                break
            try:
                sent += 1
                response = client.send(bundle)
            except TransientLlmError as exc:
                retries += 1
                if retries > max_retries:
                    errors.append(f"persistent failure for pair {bundle.pair}: {exc}")
                    stop_index = i
                    break
                sleep(backoff_s * (2 ** (retries - 1)))
                continue
            verdicts.append(parse_verdict(response, bundle.pair))
            retry_counts.append(retries)
            break
        if stop_index == i:
            break

    remaining = tuple(b.pair for b in bundles[len(verdicts):])
    return BatchResult(
        verdicts=tuple(verdicts),
        retry_counts=tuple(retry_counts),
        unparseable_count=sum(1 for v in verdicts if v.label is Verdict.UNPARSEABLE),
        errors=tuple(errors),
        remaining_pairs=remaining,
        requests_sent=sent,
    )


class MockClient:
    """Scripted in-memory client: responses by pair, optional failure counts."""

    def __init__(
        self,
        responses: Mapping[tuple[str, str], str] | str = "Yes",
        fail_times: int = 0,
    ) -> None:
        self._responses = responses
        self._fail_remaining: dict[tuple[str, str], int] = {}
        self._fail_times = fail_times
        self.calls = 0

    def send(self, bundle: PromptBundle) -> str:
        self.calls += 1
        remaining = self._fail_remaining.setdefault(bundle.pair, self._fail_times)
        if remaining > 0:
            self._fail_remaining[bundle.pair] = remaining - 1
            raise TransientLlmError("scripted transient failure")
        if isinstance(self._responses, str):
            return self._responses
        try:
            return self._responses[bundle.pair]
        except KeyError as exc:
            raise TransientLlmError(f"no scripted response for {bundle.pair}") from exc


class ReplayClient:
    """Replays recorded responses from a JSONL file keyed by pair."""

    def __init__(self, path: Path | str) -> None:
        self._responses: dict[tuple[str, str], str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            self._responses[(record["req_id"], record["code_id"])] = record["response"]

    def send(self, bundle: PromptBundle) -> str:
        if bundle.pair not in self._responses:
            raise TransientLlmError(f"no recording for pair {bundle.pair}")
        return self._responses[bundle.pair]


class RecordingClient:
    """Wraps a live client and appends (pair, response) records to a JSONL file."""

    def __init__(self, inner: "LlmClient", path: Path | str) -> None:
        self._inner = inner
        self._path = Path(path)

    def send(self, bundle: PromptBundle) -> str:
        response = self._inner.send(bundle)
        record = {
            "req_id": bundle.pair[0],
            "code_id": bundle.pair[1],
            "response": response,
        }
        with self._path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        return response


class HttpEndpointClient:
    """Generic JSON endpoint adapter.

    Wire schema: POST ``base_url`` with body
    ``{"model": ..., "system": ..., "prompt": ..., "temperature": ...}``;
    the response body must be JSON with a ``text`` field.  The bearer token
    is read from the environment variable named by ``token_env``.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        token_env: str = "TRACELAB_LLM_TOKEN",
        timeout_s: float = 60.0,
        session: requests.Session | None = None,
    ) -> None:
        self.base_url = base_url
        self.model = model
        self.token_env = token_env
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def send(self, bundle: PromptBundle) -> str:
        headers = {}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            response = self._session.post(
                self.base_url,
                json={
                    "model": self.model,
                    "system": bundle.system_instruction,
                    "prompt": bundle.user_prompt,
                    "temperature": bundle.temperature,
                },
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransientLlmError(str(exc)) from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientLlmError(f"endpoint returned {response.status_code}")
        if response.status_code != 200:
            raise PromptError(
                f"endpoint returned {response.status_code}: {response.text[:200]}"
            )
        body = response.json()
        if "text" not in body:
            raise PromptError("endpoint response missing 'text' field")
        return str(body["text"])


def bundles_to_jsonl(bundles: Iterable[PromptBundle], path: Path | str) -> None:
    """Prompt dump format: one JSON bundle per line, for offline auditing."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for b in bundles:
            fh.write(
                json.dumps(
                    {
                        "req_id": b.pair[0],
                        "code_id": b.pair[1],
                        "system_instruction": b.system_instruction,
                        "user_prompt": b.user_prompt,
                        "temperature": b.temperature,
                    },
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )


def bundles_from_jsonl(path: Path | str) -> list[PromptBundle]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        out.append(
            PromptBundle(
                system_instruction=record["system_instruction"],
                user_prompt=record["user_prompt"],
                pair=(record["req_id"], record["code_id"]),
                temperature=record["temperature"],
            )
        )
    return out
