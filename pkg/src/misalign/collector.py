"""Collect steered LLM answers from an OpenAI-compatible chat endpoint.

Each (question, subgroup) pair gets ``samples_per_pair`` answer slots. A slot
is one request per attempt; replies that are not a bare option letter are
retried up to ``max_retries`` times and then recorded as unparsed. Every
attempt is appended to a JSON-lines file as soon as it returns, which makes
collection resumable: a rerun only requests slots that are not finished.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from .errors import ConfigError, UpstreamError
from .prompts import build_prompt, parse_choice
from .survey import QuestionSpec, ResponseSample, Source, Subgroup

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CollectorConfig:
    endpoint_url: str
    model_name: str
    api_key_env: str = "OPENAI_API_KEY"
    samples_per_pair: int = 10
    temperature: float = 1.0
    max_retries: int = 3
    requests_per_second: float = 2.0
    max_in_flight: int = 4
    max_tokens: int = 5
    timeout: float = 60.0
    backoff_base: float = 1.0
    max_backoff: float = 60.0
    max_rate_limit_retries: int = 6

    def __post_init__(self):
        if self.samples_per_pair < 1:
            raise ConfigError("samples_per_pair must be >= 1")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.requests_per_second <= 0:
            raise ConfigError("requests_per_second must be positive")
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise ConfigError("max_retries must be >= 0 and max_in_flight >= 1")

    @property
    def chat_url(self) -> str:
        url = self.endpoint_url.rstrip("/")
        return url if url.endswith("/chat/completions") else url + "/chat/completions"

    def echo(self) -> dict:
        # holds the variable *name* only, never its value
        return asdict(self)


@dataclass(frozen=True)
class CollectedResponse:
    question_id: str
    subgroup: Subgroup
    sample_index: int
    attempt: int
    raw_text: str
    parsed_option: int | None
    timestamp: str

    def to_json(self) -> str:
        d = asdict(self)
        d["subgroup"] = str(self.subgroup)
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "CollectedResponse":
        d = json.loads(line)
        d["subgroup"] = Subgroup.parse(d["subgroup"])
        return cls(**d)


@dataclass
class CollectionStats:
    requests: int = 0
    rate_limited: int = 0
    parse_failures: int = 0
    exhausted_slots: int = 0
    skipped_slots: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, **deltas: int) -> None:
        with self._lock:
            for name, n in deltas.items():
                setattr(self, name, getattr(self, name) + n)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}


@dataclass
class CollectionResult:
    responses: list[CollectedResponse]
    stats: CollectionStats

    def parsed_counts(self) -> dict[tuple[str, Subgroup], int]:
        counts: dict[tuple[str, Subgroup], int] = {}
        for r in self.responses:
            if r.parsed_option is not None:
                key = (r.question_id, r.subgroup)
                counts[key] = counts.get(key, 0) + 1
        return counts


class Throttle:
    """Spaces request starts at least ``1 / rate`` seconds apart across threads."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / rate
        self.clock = clock
        self.sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = self.clock()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            self.sleep(start - now)


class ChatClient:
    def __init__(
        self,
        config: CollectorConfig,
        api_key: str,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        stats: CollectionStats | None = None,
    ):
        self.config = config
        self.sleep = sleep
        self.stats = stats or CollectionStats()
        self.throttle = Throttle(config.requests_per_second, sleep=sleep)
        self._http = httpx.Client(
            transport=transport,
            timeout=config.timeout,
            headers={"Authorization": f"Bearer {api_key}"},
        )

    def close(self) -> None:
        self._http.close()

    def _backoff(self, n: int, response: httpx.Response | None) -> float:
        delay = self.config.backoff_base * (2 ** n)
        if response is not None:
            try:
                delay = max(delay, float(response.headers.get("retry-after", 0)))
            except ValueError:
                pass
        return min(delay, self.config.max_backoff)

    def complete(self, prompt: str, context: str = "") -> str:
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        for n in range(self.config.max_rate_limit_retries + 1):
            self.throttle.wait()
            self.stats.add(requests=1)
            response = None
            try:
                response = self._http.post(self.config.chat_url, json=payload)
            except httpx.TransportError as exc:
                reason = f"transport error: {exc}"
            else:
                if response.status_code == 200:
                    return _content(response, context)
                if response.status_code != 429 and response.status_code < 500:
                    raise UpstreamError(
                        f"{context}: HTTP {response.status_code} from {self.config.chat_url}: "
                        f"{response.text[:200]}"
                    )
                reason = f"HTTP {response.status_code}"
            if n == self.config.max_rate_limit_retries:
                raise UpstreamError(f"{context}: giving up after {n + 1} requests ({reason})")
            self.stats.add(rate_limited=1)
            delay = self._backoff(n, response)
            log.warning("%s: %s, retrying in %.1fs", context, reason, delay)
            self.sleep(delay)
        raise AssertionError("unreachable")


def _content(response: httpx.Response, context: str) -> str:
    try:
        return response.json()["choices"][0]["message"]["content"] or ""
    except (ValueError, KeyError, IndexError, TypeError):
        raise UpstreamError(f"{context}: malformed chat-completions response: {response.text[:200]}") from None


def read_responses(path: str | Path) -> list[CollectedResponse]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(CollectedResponse.from_json(line))
    return out


def _finished_slots(responses: Iterable[CollectedResponse], max_retries: int) -> set[tuple[str, Subgroup, int]]:
    done = set()
    for r in responses:
        if r.parsed_option is not None or r.attempt >= max_retries + 1:
            done.add((r.question_id, r.subgroup, r.sample_index))
    return done


def collect(
    questions: Sequence[QuestionSpec],
    subgroups: Sequence[Subgroup],
    config: CollectorConfig,
    output_path: str | Path,
    transport: httpx.BaseTransport | None = None,
    api_key: str | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> CollectionResult:
    """Fill every (question, subgroup) pair with parsed answers.

    Existing lines in ``output_path`` are kept and finished slots are
    skipped. Returns all responses in the file after the run.
    """
    if api_key is None:
        api_key = os.environ.get(config.api_key_env)
        if not api_key:
            raise ConfigError(f"environment variable {config.api_key_env} is not set")
    for q in questions:
        for sg in subgroups:
            build_prompt(q, sg)  # fail fast on unknown dimensions

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    existing = read_responses(output_path)
    done = _finished_slots(existing, config.max_retries)
    stats = CollectionStats()
    slots = [
        (q, sg, i)
        for q in questions
        for sg in subgroups
        for i in range(config.samples_per_pair)
    ]
    pending = [s for s in slots if (s[0].question_id, s[1], s[2]) not in done]
    stats.skipped_slots = len(slots) - len(pending)
    log.info("%d slots pending, %d already complete", len(pending), stats.skipped_slots)

    client = ChatClient(config, api_key, transport=transport, sleep=sleep, stats=stats)
    write_lock = threading.Lock()
    new: list[CollectedResponse] = []

    with open(output_path, "a", encoding="utf-8") as sink:

        def record(resp: CollectedResponse) -> None:
            with write_lock:
                sink.write(resp.to_json() + "\n")
                sink.flush()
                new.append(resp)

        def fill(slot) -> None:
            q, sg, i = slot
            prompt = build_prompt(q, sg)
            context = f"question {q.question_id}, subgroup {sg}, sample {i}"
            for attempt in range(1, config.max_retries + 2):
                text = client.complete(prompt, context)
                choice = parse_choice(text, q)
                record(CollectedResponse(
                    q.question_id, sg, i, attempt, text, choice,
                    datetime.now(timezone.utc).isoformat(),
                ))
                if choice is not None:
                    return
                stats.add(parse_failures=1)
            stats.add(exhausted_slots=1)
            log.warning("%s: no parsable answer after %d attempts", context, config.max_retries + 1)

        try:
            if config.max_in_flight == 1:
                for slot in pending:
                    fill(slot)
            else:
                with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
                    for fut in [pool.submit(fill, s) for s in pending]:
                        fut.result()
        finally:
            client.close()

    return CollectionResult(existing + new, stats)


def responses_to_samples(responses: Iterable[CollectedResponse]) -> list[ResponseSample]:
    """Parsed responses as LLM samples; unparsed attempts are dropped."""
    return [
        ResponseSample(r.question_id, Source.LLM, r.subgroup, r.parsed_option)
        for r in responses
        if r.parsed_option is not None
    ]


# --------------------------------------------------------------------------
# Scripted endpoint for tests and offline runs
# --------------------------------------------------------------------------

class ScriptedEndpoint:
    """Mock chat-completions endpoint replaying a fixed reply script.

    Each script entry is a reply string or ``{"status": 429}``-style dict
    for an error response. The script cycles when exhausted.
    """

    def __init__(self, script: Sequence[str | dict], fail_after: int | None = None):
        if not script:
            raise ConfigError("mock script is empty")
        self.script = list(script)
        self.fail_after = fail_after
        self.calls = 0
        self.prompts: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedEndpoint":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            return cls(data)
        return cls(data["replies"], data.get("fail_after"))

    def handler(self, request: httpx.Request) -> httpx.Response:
        with self._lock:
            if self.fail_after is not None and self.calls >= self.fail_after:
                raise Interrupted(f"scripted interruption after {self.calls} requests")
            entry = self.script[self.calls % len(self.script)]
            self.calls += 1
            body = json.loads(request.content)
            self.prompts.append(body["messages"][-1]["content"])
        if isinstance(entry, dict):
            status = int(entry.get("status", 500))
            headers = {"retry-after": str(entry["retry_after"])} if "retry_after" in entry else {}
            return httpx.Response(status, json={"error": {"message": "scripted"}}, headers=headers)
        return httpx.Response(200, json={
            "id": f"mock-{self.calls}",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": entry},
                         "finish_reason": "stop"}],
        })

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handler)


class Interrupted(RuntimeError):
    """Raised by :class:`ScriptedEndpoint` to simulate a killed run."""
