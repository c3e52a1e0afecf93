"""Inference orchestration: the four grounding pipelines over pluggable backends.

Modes: ``direct`` sends the query straight to a grounder; ``rog`` reasons
out an object category first and grounds that; ``dr`` detects with the full
vocabulary then asks a reasoner to choose among the detected phrases;
``rd`` reasons the vocabulary down to one or two categories and detects
only those. Every run yields a trace of backend calls plus the final
prediction; failures become markers, never dropped records.
"""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

from .backends import (
    BackendEndpoint,
    ChatBackend,
    ChatMessage,
    Detection,
    DetectorBackend,
    DetectorResult,
    TransportError,
    detector_request_key,
    render_detections,
)
from .dataset import Manifest, IntentionRecord
from .generation import render_text
from .grammar import EmptyCategoryError, GrammarSpec, extract_category, parse_boxes
from .geometry import BBox

MODES = ("direct", "rog", "dr", "rd")

# Failure markers beyond the grammar parse statuses.
STATUS_OK = "ok"
STATUS_TRANSPORT = "transport_error"
STATUS_NO_DETECTIONS = "no_detections"
STATUS_MISMATCH = "reasoner_detector_mismatch"
STATUS_VOCAB_MISMATCH = "vocabulary_mismatch"

FLAG_REASON_FALLBACK = "reason_fallback"

DEFAULT_DETECTOR_DELIMITER = " . "
MAX_REASONED_CATEGORIES = 2


class PipelineError(RuntimeError):
    """Pipeline could not produce a trace (transport failure after retries)."""


class BatchAbortError(RuntimeError):
    """Transport failure rate exceeded the configured ceiling."""


def load_orchestrator_prompts(path: Union[str, Path, None] = None) -> dict[str, str]:
    if path is None:
        raw = resources.files("intentground.fixtures").joinpath("orchestrator_prompts.json").read_text()
    else:
        raw = Path(path).read_text()
    return json.loads(raw)


@dataclass(frozen=True)
class TraceCall:
    endpoint_kind: str
    request_text: str
    response_text: str
    latency: float

    def to_dict(self) -> dict:
        return {
            "endpoint_kind": self.endpoint_kind,
            "request_text": self.request_text,
            "response_text": self.response_text,
            "latency": self.latency,
        }


@dataclass
class PipelineTrace:
    """Ordered backend calls and the outcome for one record."""

    record_id: str
    mode: str
    calls: list[TraceCall] = field(default_factory=list)
    final_box: BBox | None = None
    status: str = STATUS_OK
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "mode": self.mode,
            "calls": [c.to_dict() for c in self.calls],
            "final_box": self.final_box.to_list() if self.final_box else None,
            "status": self.status,
            "flags": list(self.flags),
        }


def _timed_chat(backend: ChatBackend, messages: Sequence[ChatMessage], kind: str) -> tuple[str, TraceCall]:
    started = time.perf_counter()
    reply = backend.complete(messages)
    latency = time.perf_counter() - started
    request_text = "\n".join(m.text for m in messages)
    return reply, TraceCall(kind, request_text, reply, latency)


def _timed_detect(
    backend: DetectorBackend, image_ref: str, phrases: Sequence[str]
) -> tuple[DetectorResult, TraceCall]:
    started = time.perf_counter()
    result = backend.detect(image_ref, phrases)
    latency = time.perf_counter() - started
    return result, TraceCall(
        "detector", detector_request_key(image_ref, phrases), render_detections(result), latency
    )


def _ground(
    trace: PipelineTrace,
    record: IntentionRecord,
    grounder: ChatBackend,
    grammar: GrammarSpec,
    query: str,
) -> PipelineTrace:
    messages = [ChatMessage("user", f"{grammar.ref_token} {query}", image_ref=record.image_ref)]
    reply, call = _timed_chat(grounder, messages, "grounder")
    trace.calls.append(call)
    parsed = parse_boxes(reply, record.image_size, grammar)
    if parsed.status == "ok":
        trace.final_box = parsed.boxes[0]  # models are prompted for one box
        trace.status = STATUS_OK
    else:
        trace.status = parsed.status
    return trace


def run_direct(record: IntentionRecord, grounder: ChatBackend, grammar: GrammarSpec) -> PipelineTrace:
    """Single call: the raw query straight to the grounding backend."""
    trace = PipelineTrace(record_id=record.record_id, mode="direct")
    return _ground(trace, record, grounder, grammar, record.query_text)


def run_rog(record: IntentionRecord, grounder: ChatBackend, grammar: GrammarSpec) -> PipelineTrace:
    """Two calls: reason the query into a category, then ground the category.

    An empty reasoning reply falls back to grounding the full query text,
    flagged on the trace.
    """
    trace = PipelineTrace(record_id=record.record_id, mode="rog")
    messages = [
        ChatMessage("user", f"{grammar.reason_token} {record.query_text}", image_ref=record.image_ref)
    ]
    reply, call = _timed_chat(grounder, messages, "grounder")
    trace.calls.append(call)
    try:
        query = extract_category(reply)
    except EmptyCategoryError:
        trace.flags = (*trace.flags, FLAG_REASON_FALLBACK)
        query = record.query_text
    return _ground(trace, record, grounder, grammar, query)


def _match_phrase(detections: Sequence[Detection], chosen: str) -> Detection | None:
    lowered = chosen.lower()
    exact = [d for d in detections if d.phrase.lower() == lowered]
    if exact:
        return exact[0]  # detections are score-sorted
    loose = [d for d in detections if lowered in d.phrase.lower() or d.phrase.lower() in lowered]
    return loose[0] if loose else None


def run_dr(
    record: IntentionRecord,
    detector: DetectorBackend,
    reasoner: ChatBackend,
    vocabulary: Sequence[str],
    prompts: dict[str, str] | None = None,
) -> PipelineTrace:
    """Detect with the full vocabulary, then reason over the detected phrases."""
    if not vocabulary:
        raise ValueError("vocabulary must be nonempty")
    prompts = prompts or load_orchestrator_prompts()
    trace = PipelineTrace(record_id=record.record_id, mode="dr")
    result, call = _timed_detect(detector, record.image_ref, list(vocabulary))
    trace.calls.append(call)
    if not result.detections:
        trace.status = STATUS_NO_DETECTIONS
        return trace
    phrases = result.phrases()
    prompt = render_text(
        prompts["dr_choose"], {"QUERY": record.query_text, "PHRASES": ", ".join(phrases)}
    )
    reply, call = _timed_chat(
        reasoner, [ChatMessage("user", prompt, image_ref=record.image_ref)], "chat"
    )
    trace.calls.append(call)
    try:
        chosen = extract_category(reply)
    except EmptyCategoryError:
        trace.status = STATUS_MISMATCH
        return trace
    matched = _match_phrase(result.detections, chosen)
    if matched is None:
        trace.status = STATUS_MISMATCH
        return trace
    trace.final_box = matched.box
    return trace


def _map_to_vocabulary(categories: Sequence[str], vocabulary: Sequence[str]) -> list[str]:
    mapped: list[str] = []
    for category in categories:
        lowered = category.lower()
        hit = next((v for v in vocabulary if v.lower() == lowered), None)
        if hit is None:
            hit = next(
                (v for v in vocabulary if v.lower() in lowered or lowered in v.lower()), None
            )
        if hit is not None and hit not in mapped:
            mapped.append(hit)
    return mapped


_LIST_SPLIT = re.compile(r"[,;\n]")


def run_rd(
    record: IntentionRecord,
    reasoner: ChatBackend,
    detector: DetectorBackend,
    vocabulary: Sequence[str],
    prompts: dict[str, str] | None = None,
) -> PipelineTrace:
    """Reason the vocabulary down to at most two categories, then detect those."""
    if not vocabulary:
        raise ValueError("vocabulary must be nonempty")
    prompts = prompts or load_orchestrator_prompts()
    trace = PipelineTrace(record_id=record.record_id, mode="rd")
    prompt = render_text(
        prompts["rd_reason"], {"QUERY": record.query_text, "VOCABULARY": ", ".join(vocabulary)}
    )
    reply, call = _timed_chat(
        reasoner, [ChatMessage("user", prompt, image_ref=record.image_ref)], "chat"
    )
    trace.calls.append(call)
    categories: list[str] = []
    for item in _LIST_SPLIT.split(reply):
        try:
            category = extract_category(item)
        except EmptyCategoryError:
            continue
        if category not in categories:
            categories.append(category)
        if len(categories) == MAX_REASONED_CATEGORIES:
            break
    mapped = _map_to_vocabulary(categories, vocabulary)
    if not mapped:
        trace.status = STATUS_VOCAB_MISMATCH
        return trace
    result, call = _timed_detect(detector, record.image_ref, mapped)
    trace.calls.append(call)
    if not result.detections:
        trace.status = STATUS_NO_DETECTIONS
        return trace
    trace.final_box = result.detections[0].box  # global top score across categories
    return trace


@dataclass
class ModeBackends:
    """Backends wired for one run; modes use the subset they need."""

    grounder: ChatBackend | None = None
    reasoner: ChatBackend | None = None
    detector: DetectorBackend | None = None


def run_record(
    record: IntentionRecord,
    mode: str,
    backends: ModeBackends,
    grammar: GrammarSpec,
    vocabulary: Sequence[str] | None = None,
    prompts: dict[str, str] | None = None,
) -> PipelineTrace:
    if mode == "direct":
        return run_direct(record, _need(backends.grounder, "grounder"), grammar)
    if mode == "rog":
        return run_rog(record, _need(backends.grounder, "grounder"), grammar)
    if mode == "dr":
        return run_dr(
            record,
            _need(backends.detector, "detector"),
            _need(backends.reasoner, "reasoner"),
            vocabulary or (),
            prompts,
        )
    if mode == "rd":
        return run_rd(
            record,
            _need(backends.reasoner, "reasoner"),
            _need(backends.detector, "detector"),
            vocabulary or (),
            prompts,
        )
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def _need(backend, name: str):
    if backend is None:
        raise ValueError(f"mode requires a {name} backend")
    return backend


@dataclass
class BatchResult:
    predictions_path: Path
    traces_path: Path
    n_records: int
    n_ok: int
    n_transport_failures: int


def batch_run(
    manifest: Manifest,
    mode: str,
    backends: ModeBackends,
    grammar: GrammarSpec,
    out_dir: Union[str, Path],
    vocabulary: Sequence[str] | None = None,
    prompts: dict[str, str] | None = None,
    concurrency_limit: int = 4,
    query_types: Sequence[str] | None = None,
    max_failure_rate: float = 0.10,
) -> BatchResult:
    """Run one mode over every selected record; write predictions and traces.

    Output order is stable by record_id regardless of completion order, and
    no record is ever dropped: failures carry their marker. Aborts when the
    transport-failure fraction exceeds ``max_failure_rate``.
    """
    records = [
        r for r in manifest.records if query_types is None or r.query_type in query_types
    ]
    if not records:
        raise ValueError("no records selected for this run")

    def run_one(record: IntentionRecord) -> PipelineTrace:
        try:
            return run_record(record, mode, backends, grammar, vocabulary, prompts)
        except TransportError:
            return PipelineTrace(record_id=record.record_id, mode=mode, status=STATUS_TRANSPORT)

    with ThreadPoolExecutor(max_workers=max(1, concurrency_limit)) as pool:
        traces = list(pool.map(run_one, records))

    traces.sort(key=lambda t: t.record_id)
    n_transport = sum(1 for t in traces if t.status == STATUS_TRANSPORT)
    rate = n_transport / len(traces)
    if rate > max_failure_rate:
        raise BatchAbortError(
            f"{n_transport}/{len(traces)} records failed on transport "
            f"({rate:.1%} > {max_failure_rate:.1%} ceiling)"
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    predictions_path = out / f"predictions-{mode}.jsonl"
    traces_path = out / f"traces-{mode}.jsonl"
    with open(predictions_path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(
                json.dumps(
                    {
                        "record_id": trace.record_id,
                        "mode": trace.mode,
                        "box": trace.final_box.to_list() if trace.final_box else None,
                        "status": trace.status,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(traces_path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.to_dict(), sort_keys=True) + "\n")
    n_ok = sum(1 for t in traces if t.status == STATUS_OK)
    return BatchResult(
        predictions_path=predictions_path,
        traces_path=traces_path,
        n_records=len(traces),
        n_ok=n_ok,
        n_transport_failures=n_transport,
    )


def make_endpoint_backends(
    mode: str,
    chat_endpoint: BackendEndpoint | None = None,
    detector_endpoint: BackendEndpoint | None = None,
) -> ModeBackends:
    """Wire HTTP backends for a mode from endpoint configs."""
    from .backends import HttpChatBackend, HttpDetectorBackend

    chat = HttpChatBackend(chat_endpoint) if chat_endpoint else None
    detector = HttpDetectorBackend(detector_endpoint) if detector_endpoint else None
    return ModeBackends(grounder=chat, reasoner=chat, detector=detector)
