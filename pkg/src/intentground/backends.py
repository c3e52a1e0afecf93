"""Model backend clients: HTTP transports and in-process scripted mocks.

Two wire contracts. Chat: ordered (role, text, optional image ref) messages
in, text out. Detector: image ref + phrase list in, scored phrase-tagged
boxes out. Both transports retry with jittered exponential backoff and log
every exchange for audit. Scripted mocks implement the same contracts from
transcript fixtures, so every pipeline runs with zero network access.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence, Union

import httpx

from .geometry import BBox

logger = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """Backend unreachable or persistently failing after retries."""


class TranscriptError(RuntimeError):
    """Scripted backend received a request its transcript does not cover."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str
    image_ref: str | None = None

    def to_dict(self) -> dict:
        data = {"role": self.role, "text": self.text}
        if self.image_ref is not None:
            data["image_ref"] = self.image_ref
        return data


def render_request(messages: Sequence[ChatMessage]) -> str:
    """Flatten a message list to one audit/matching string."""
    parts = []
    for m in messages:
        image = f" [image: {m.image_ref}]" if m.image_ref else ""
        parts.append(f"{m.role}: {m.text}{image}")
    return "\n".join(parts)


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    backoff_base: float = 0.25
    jitter: float = 0.1

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def sleep_for(self, attempt: int, rng: random.Random | None = None) -> float:
        spread = (rng or random).uniform(0.0, self.jitter)
        return self.backoff_base * (2**attempt) + spread


@dataclass(frozen=True)
class BackendEndpoint:
    """Where and how to reach one model backend."""

    kind: str  # chat | detector | grounder
    base_url: str
    auth_env_var: str | None = None
    timeout: float = 30.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if self.kind not in ("chat", "detector", "grounder"):
            raise ValueError(f"unknown endpoint kind {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    def auth_headers(self) -> dict[str, str]:
        if not self.auth_env_var:
            return {}
        token = os.environ.get(self.auth_env_var)
        if not token:
            raise TransportError(f"auth env var {self.auth_env_var} is unset")
        return {"Authorization": f"Bearer {token}"}


@dataclass(frozen=True)
class Detection:
    box: BBox
    phrase: str
    score: float

    def __post_init__(self) -> None:
        if not self.phrase:
            raise ValueError("detection phrase must be nonempty")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score out of [0, 1]: {self.score}")


@dataclass(frozen=True)
class DetectorResult:
    """Scored detections, held in descending-score order."""

    detections: tuple[Detection, ...]

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.detections, key=lambda d: -d.score))
        object.__setattr__(self, "detections", ordered)

    def phrases(self) -> list[str]:
        seen: list[str] = []
        for det in self.detections:
            if det.phrase not in seen:
                seen.append(det.phrase)
        return seen


class ChatBackend(Protocol):
    def complete(self, messages: Sequence[ChatMessage]) -> str: ...


class DetectorBackend(Protocol):
    def detect(self, image_ref: str, phrases: Sequence[str]) -> DetectorResult: ...


def _with_retries(endpoint: BackendEndpoint, send: Callable[[], httpx.Response]) -> httpx.Response:
    last_error: Exception | None = None
    for attempt in range(endpoint.retry.max_retries + 1):
        try:
            response = send()
            if response.status_code < 500:
                response.raise_for_status()
                return response
            last_error = TransportError(f"{endpoint.base_url} returned {response.status_code}")
        except httpx.HTTPStatusError:
            raise TransportError(f"{endpoint.base_url} rejected the request") from None
        except httpx.HTTPError as exc:
            last_error = exc
        if attempt < endpoint.retry.max_retries:
            time.sleep(endpoint.retry.sleep_for(attempt))
    raise TransportError(
        f"{endpoint.base_url} unreachable after {endpoint.retry.max_retries + 1} attempts"
    ) from last_error


class HttpChatBackend:
    """Chat completion over HTTP: POST {messages: [...]} -> {text: ...}."""

    def __init__(self, endpoint: BackendEndpoint, client: httpx.Client | None = None):
        self.endpoint = endpoint
        self._client = client or httpx.Client(timeout=endpoint.timeout)
        self.exchanges: list[tuple[str, str]] = []

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        payload = {"messages": [m.to_dict() for m in messages]}
        response = _with_retries(
            self.endpoint,
            lambda: self._client.post(
                self.endpoint.base_url, json=payload, headers=self.endpoint.auth_headers()
            ),
        )
        text = response.json()["text"]
        request_text = render_request(messages)
        self.exchanges.append((request_text, text))
        logger.debug("chat exchange: %s -> %s", request_text, text)
        return text


class HttpDetectorBackend:
    """Open-set detection over HTTP: POST {image_ref, phrases} -> {detections}."""

    def __init__(self, endpoint: BackendEndpoint, client: httpx.Client | None = None):
        self.endpoint = endpoint
        self._client = client or httpx.Client(timeout=endpoint.timeout)
        self.exchanges: list[tuple[str, str]] = []

    def detect(self, image_ref: str, phrases: Sequence[str]) -> DetectorResult:
        payload = {"image_ref": image_ref, "phrases": list(phrases)}
        response = _with_retries(
            self.endpoint,
            lambda: self._client.post(
                self.endpoint.base_url, json=payload, headers=self.endpoint.auth_headers()
            ),
        )
        result = DetectorResult(
            detections=tuple(
                Detection(box=BBox.from_sequence(d["box"]), phrase=d["phrase"], score=d["score"])
                for d in response.json()["detections"]
            )
        )
        request_text = detector_request_key(image_ref, phrases)
        self.exchanges.append((request_text, render_detections(result)))
        logger.debug("detector exchange: %s -> %d detections", request_text, len(result.detections))
        return result


def detector_request_key(image_ref: str, phrases: Sequence[str]) -> str:
    return f"{image_ref} :: {' | '.join(phrases)}"


def render_detections(result: DetectorResult) -> str:
    return "; ".join(
        f"{d.phrase}@{d.score:g}:{','.join(f'{c:g}' for c in d.box.to_list())}"
        for d in result.detections
    )


# --- scripted mocks ---


@dataclass
class TranscriptEntry:
    """One canned exchange: matcher against the request text -> response.

    ``match`` of None matches anything. ``error`` simulates a transport
    failure. Non-repeat entries are consumed once, in order.
    """

    match: str | None = None
    response: str = ""
    error: bool = False
    repeat: bool = False
    detections: list[dict] | None = None  # detector transcripts only
    consumed: bool = field(default=False, repr=False)

    def matches(self, request_text: str) -> bool:
        if self.consumed and not self.repeat:
            return False
        return self.match is None or self.match in request_text


def load_transcript(path: Union[str, Path]) -> list[TranscriptEntry]:
    """Read transcript entries from a JSONL fixture file."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            data = json.loads(line)
            entries.append(
                TranscriptEntry(
                    match=data.get("match"),
                    response=data.get("response", ""),
                    error=data.get("error", False),
                    repeat=data.get("repeat", False),
                    detections=data.get("detections"),
                )
            )
    return entries


class ScriptedChatBackend:
    """Chat mock driven by an ordered transcript. Thread-safe."""

    def __init__(self, entries: Sequence[TranscriptEntry]):
        self.entries = list(entries)
        self.exchanges: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedChatBackend":
        return cls(load_transcript(path))

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        request_text = render_request(messages)
        with self._lock:
            for entry in self.entries:
                if entry.matches(request_text):
                    entry.consumed = True
                    if entry.error:
                        self.exchanges.append((request_text, "<transport-error>"))
                        raise TransportError("scripted transport failure")
                    self.exchanges.append((request_text, entry.response))
                    return entry.response
        raise TranscriptError(f"no transcript entry matches request:\n{request_text}")


class ScriptedDetectorBackend:
    """Detector mock driven by an ordered transcript. Thread-safe."""

    def __init__(self, entries: Sequence[TranscriptEntry]):
        self.entries = list(entries)
        self.exchanges: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedDetectorBackend":
        return cls(load_transcript(path))

    def detect(self, image_ref: str, phrases: Sequence[str]) -> DetectorResult:
        request_text = detector_request_key(image_ref, phrases)
        with self._lock:
            for entry in self.entries:
                if entry.matches(request_text):
                    entry.consumed = True
                    if entry.error:
                        self.exchanges.append((request_text, "<transport-error>"))
                        raise TransportError("scripted transport failure")
                    result = DetectorResult(
                        detections=tuple(
                            Detection(
                                box=BBox.from_sequence(d["box"]),
                                phrase=d["phrase"],
                                score=d["score"],
                            )
                            for d in entry.detections or []
                        )
                    )
                    self.exchanges.append((request_text, render_detections(result)))
                    return result
        raise TranscriptError(f"no transcript entry matches request: {request_text}")


class CallableChatBackend:
    """Chat mock computing the reply from the request; handy in tests."""

    def __init__(self, fn: Callable[[Sequence[ChatMessage]], str]):
        self._fn = fn
        self.exchanges: list[tuple[str, str]] = []

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        reply = self._fn(messages)
        self.exchanges.append((render_request(messages), reply))
        return reply
