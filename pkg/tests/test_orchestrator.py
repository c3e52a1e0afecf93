from __future__ import annotations

import json

import httpx
import pytest

from intentground.backends import (
    BackendEndpoint,
    CallableChatBackend,
    Detection,
    DetectorResult,
    HttpChatBackend,
    HttpDetectorBackend,
    RetryPolicy,
    ScriptedChatBackend,
    ScriptedDetectorBackend,
    TranscriptEntry,
    TransportError,
    load_transcript,
)
from intentground.dataset import Manifest
from intentground.geometry import BBox
from intentground.orchestrator import (
    BatchAbortError,
    ModeBackends,
    batch_run,
    run_direct,
    run_dr,
    run_rd,
    run_rog,
)

from conftest import make_record, make_small_manifest

VOCABULARY = ["chair", "table", "handbag", "soap"]
BOX_TOKENS = "{<10><10><50><50>}"


def detector_entries(*dets, match=None, repeat=False):
    return TranscriptEntry(
        match=match,
        repeat=repeat,
        detections=[{"box": list(b), "phrase": p, "score": s} for b, p, s in dets],
    )


class TestRunDirect:
    def test_echoed_box_becomes_prediction(self, curly_grammar):
        backend = ScriptedChatBackend([TranscriptEntry(response=f"here: {BOX_TOKENS}")])
        trace = run_direct(make_record(), backend, curly_grammar)
        assert trace.status == "ok"
        assert trace.final_box == BBox(10, 10, 50, 50)
        assert len(trace.calls) == 1
        assert trace.calls[0].request_text.startswith("<ref> ")

    def test_prose_reply_is_failure_marker_not_exception(self, curly_grammar):
        backend = ScriptedChatBackend([TranscriptEntry(response="it is near the window")])
        trace = run_direct(make_record(), backend, curly_grammar)
        assert trace.status == "no_box_found"
        assert trace.final_box is None
        assert len(trace.calls) == 1


class TestRunRog:
    def test_two_stage_flow_feeds_category_forward(self, curly_grammar):
        backend = ScriptedChatBackend(
            [
                TranscriptEntry(match="<reason>", response="Chair."),
                TranscriptEntry(match="<ref>", response=BOX_TOKENS),
            ]
        )
        trace = run_rog(make_record(), backend, curly_grammar)
        assert trace.status == "ok"
        assert len(trace.calls) == 2
        assert "chair" in trace.calls[1].request_text
        assert trace.flags == ()

    def test_empty_reasoning_falls_back_to_query_text(self, curly_grammar):
        record = make_record(query_text="somewhere to rest my legs")
        backend = ScriptedChatBackend(
            [
                TranscriptEntry(match="<reason>", response="..."),
                TranscriptEntry(match="<ref>", response=BOX_TOKENS),
            ]
        )
        trace = run_rog(record, backend, curly_grammar)
        assert "reason_fallback" in trace.flags
        assert record.query_text in trace.calls[1].request_text
        assert len(trace.calls) == 2


class TestRunDr:
    def test_reasoner_choice_picks_matching_detection(self):
        detector = ScriptedDetectorBackend(
            [detector_entries(((5, 5, 20, 20), "chair", 0.9), ((30, 30, 60, 60), "table", 0.8))]
        )
        reasoner = ScriptedChatBackend([TranscriptEntry(response="table")])
        trace = run_dr(make_record(), detector, reasoner, VOCABULARY)
        assert trace.status == "ok"
        assert trace.final_box == BBox(30, 30, 60, 60)
        assert len(trace.calls) == 2
        # full vocabulary goes to the detector
        assert all(v in trace.calls[0].request_text for v in VOCABULARY)

    def test_unknown_choice_is_mismatch(self):
        detector = ScriptedDetectorBackend(
            [detector_entries(((5, 5, 20, 20), "chair", 0.9))]
        )
        reasoner = ScriptedChatBackend([TranscriptEntry(response="lamp")])
        trace = run_dr(make_record(), detector, reasoner, VOCABULARY)
        assert trace.status == "reasoner_detector_mismatch"
        assert trace.final_box is None

    def test_top_score_wins_among_same_phrase(self):
        detector = ScriptedDetectorBackend(
            [detector_entries(((0, 0, 10, 10), "chair", 0.7), ((40, 40, 80, 80), "chair", 0.9))]
        )
        reasoner = ScriptedChatBackend([TranscriptEntry(response="chair")])
        trace = run_dr(make_record(), detector, reasoner, VOCABULARY)
        assert trace.final_box == BBox(40, 40, 80, 80)

    def test_no_detections_short_circuits(self):
        detector = ScriptedDetectorBackend([detector_entries()])
        reasoner = ScriptedChatBackend([])
        trace = run_dr(make_record(), detector, reasoner, VOCABULARY)
        assert trace.status == "no_detections"
        assert len(trace.calls) == 1


class TestRunRd:
    def test_single_category_narrowing(self):
        reasoner = ScriptedChatBackend([TranscriptEntry(response="chair")])
        detector = ScriptedDetectorBackend(
            [detector_entries(((5, 5, 20, 20), "chair", 0.95), match="chair")]
        )
        trace = run_rd(make_record(), reasoner, detector, VOCABULARY)
        assert trace.status == "ok"
        assert trace.final_box == BBox(5, 5, 20, 20)
        assert len(trace.calls) == 2

    def test_two_categories_joined_for_detector(self):
        reasoner = ScriptedChatBackend([TranscriptEntry(response="chair, stool")])
        detector = ScriptedDetectorBackend(
            [detector_entries(((5, 5, 20, 20), "chair", 0.95), repeat=True)]
        )
        trace = run_rd(make_record(), reasoner, detector, VOCABULARY + ["stool"])
        prompt = trace.calls[1].request_text
        assert "chair" in prompt and "stool" in prompt
        categories = prompt.split(" :: ")[1].split(" | ")
        assert set(categories) <= set(VOCABULARY + ["stool"])
        assert len(categories) <= 2

    def test_at_most_two_categories_kept(self):
        reasoner = ScriptedChatBackend([TranscriptEntry(response="chair, table, soap")])
        detector = ScriptedDetectorBackend(
            [detector_entries(((5, 5, 20, 20), "chair", 0.95), repeat=True)]
        )
        trace = run_rd(make_record(), reasoner, detector, VOCABULARY)
        categories = trace.calls[1].request_text.split(" :: ")[1].split(" | ")
        assert len(categories) == 2

    def test_out_of_vocabulary_maps_by_containment(self):
        reasoner = ScriptedChatBackend([TranscriptEntry(response="a folding chair")])
        detector = ScriptedDetectorBackend(
            [detector_entries(((5, 5, 20, 20), "chair", 0.95), repeat=True)]
        )
        trace = run_rd(make_record(), reasoner, detector, VOCABULARY)
        assert trace.status == "ok"
        assert "chair" in trace.calls[1].request_text

    def test_gibberish_is_vocabulary_mismatch(self):
        reasoner = ScriptedChatBackend([TranscriptEntry(response="xqzzy glorp")])
        detector = ScriptedDetectorBackend([])
        trace = run_rd(make_record(), reasoner, detector, VOCABULARY)
        assert trace.status == "vocabulary_mismatch"
        assert len(trace.calls) == 1


class TestBatchRun:
    def perfect_backend(self):
        return ScriptedChatBackend([TranscriptEntry(response=BOX_TOKENS, repeat=True)])

    def test_all_success_writes_one_line_per_record(self, tmp_path, curly_grammar):
        manifest = make_small_manifest(10)
        backends = ModeBackends(grounder=self.perfect_backend())
        result = batch_run(manifest, "direct", backends, curly_grammar, tmp_path)
        lines = result.predictions_path.read_text().splitlines()
        assert len(lines) == 10
        assert result.n_ok == 10
        ids = [json.loads(line)["record_id"] for line in lines]
        assert ids == sorted(ids)

    def test_single_transport_failure_keeps_all_lines(self, tmp_path, curly_grammar):
        manifest = make_small_manifest(10)
        victim = manifest.records[3].query_text + " extra-unique-suffix"
        manifest.records[3].query_text = victim
        backend = ScriptedChatBackend(
            [
                TranscriptEntry(match="extra-unique-suffix", error=True),
                TranscriptEntry(response=BOX_TOKENS, repeat=True),
            ]
        )
        result = batch_run(
            manifest, "direct", ModeBackends(grounder=backend), curly_grammar, tmp_path
        )
        lines = [json.loads(l) for l in result.predictions_path.read_text().splitlines()]
        assert len(lines) == 10
        failures = [l for l in lines if l["status"] == "transport_error"]
        assert len(failures) == 1
        assert failures[0]["record_id"] == manifest.records[3].record_id

    def test_failure_rate_above_ceiling_aborts(self, tmp_path, curly_grammar):
        manifest = make_small_manifest(10)
        for i in (2, 5):
            manifest.records[i].query_text += " poisoned-query"
        backend = ScriptedChatBackend(
            [
                TranscriptEntry(match="poisoned-query", error=True),
                TranscriptEntry(match="poisoned-query", error=True),
                TranscriptEntry(response=BOX_TOKENS, repeat=True),
            ]
        )
        with pytest.raises(BatchAbortError, match="20.0%"):
            batch_run(manifest, "direct", ModeBackends(grounder=backend), curly_grammar, tmp_path)

    def test_reruns_are_byte_identical(self, tmp_path, curly_grammar):
        manifest = make_small_manifest(8)

        def once(subdir):
            backends = ModeBackends(grounder=self.perfect_backend())
            return batch_run(
                manifest, "direct", backends, curly_grammar, tmp_path / subdir, concurrency_limit=4
            ).predictions_path.read_bytes()

        assert once("a") == once("b")

    def test_query_type_filter(self, tmp_path, curly_grammar):
        manifest = make_small_manifest(10)
        backends = ModeBackends(grounder=self.perfect_backend())
        result = batch_run(
            manifest, "direct", backends, curly_grammar, tmp_path, query_types=("context",)
        )
        assert result.n_records == 5


class TestScriptedBackends:
    def test_entries_consumed_in_order(self):
        backend = ScriptedChatBackend(
            [TranscriptEntry(response="first"), TranscriptEntry(response="second")]
        )
        from intentground.backends import ChatMessage

        assert backend.complete([ChatMessage("user", "x")]) == "first"
        assert backend.complete([ChatMessage("user", "x")]) == "second"

    def test_transcript_file_round_trip(self, tmp_path):
        path = tmp_path / "transcript.jsonl"
        path.write_text(
            json.dumps({"match": "hello", "response": "world"})
            + "\n"
            + json.dumps({"error": True})
            + "\n"
        )
        entries = load_transcript(path)
        assert entries[0].match == "hello"
        assert entries[1].error

    def test_unmatched_request_raises(self):
        from intentground.backends import ChatMessage, TranscriptError

        backend = ScriptedChatBackend([TranscriptEntry(match="never", response="x")])
        with pytest.raises(TranscriptError):
            backend.complete([ChatMessage("user", "something else")])

    def test_detector_result_sorted_by_score(self):
        result = DetectorResult(
            detections=(
                Detection(BBox(0, 0, 1, 1), "a", 0.2),
                Detection(BBox(0, 0, 1, 1), "b", 0.9),
            )
        )
        assert [d.phrase for d in result.detections] == ["b", "a"]

    def test_callable_backend_logs_exchanges(self):
        from intentground.backends import ChatMessage

        backend = CallableChatBackend(lambda msgs: msgs[-1].text.upper())
        assert backend.complete([ChatMessage("user", "hi")]) == "HI"
        assert backend.exchanges == [("user: hi", "HI")]


class TestHttpBackends:
    def make_endpoint(self, **kwargs):
        return BackendEndpoint(
            kind="chat",
            base_url="http://backend.test/complete",
            retry=RetryPolicy(max_retries=2, backoff_base=0.001, jitter=0.0),
            **kwargs,
        )

    def test_retries_5xx_then_succeeds(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] < 3:
                return httpx.Response(500)
            return httpx.Response(200, json={"text": "done"})

        client = httpx.Client(transport=httpx.MockTransport(handler))
        backend = HttpChatBackend(self.make_endpoint(), client=client)
        from intentground.backends import ChatMessage

        assert backend.complete([ChatMessage("user", "go")]) == "done"
        assert calls["n"] == 3
        assert backend.exchanges == [("user: go", "done")]

    def test_persistent_5xx_exhausts_retries(self):
        client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(502)))
        backend = HttpChatBackend(self.make_endpoint(), client=client)
        from intentground.backends import ChatMessage

        with pytest.raises(TransportError, match="3 attempts"):
            backend.complete([ChatMessage("user", "go")])

    def test_4xx_fails_without_retry(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(403)

        client = httpx.Client(transport=httpx.MockTransport(handler))
        backend = HttpChatBackend(self.make_endpoint(), client=client)
        from intentground.backends import ChatMessage

        with pytest.raises(TransportError):
            backend.complete([ChatMessage("user", "go")])
        assert calls["n"] == 1

    def test_bearer_token_from_env(self, monkeypatch):
        monkeypatch.setenv("IG_TEST_TOKEN", "sekrit")
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json={"text": "ok"})

        client = httpx.Client(transport=httpx.MockTransport(handler))
        backend = HttpChatBackend(self.make_endpoint(auth_env_var="IG_TEST_TOKEN"), client=client)
        from intentground.backends import ChatMessage

        backend.complete([ChatMessage("user", "go")])
        assert seen["auth"] == "Bearer sekrit"

    def test_missing_token_is_transport_error(self, monkeypatch):
        monkeypatch.delenv("IG_TEST_TOKEN", raising=False)
        client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200)))
        backend = HttpChatBackend(self.make_endpoint(auth_env_var="IG_TEST_TOKEN"), client=client)
        from intentground.backends import ChatMessage

        with pytest.raises(TransportError, match="IG_TEST_TOKEN"):
            backend.complete([ChatMessage("user", "go")])

    def test_detector_parses_detections(self):
        payload = {
            "detections": [
                {"box": [1, 1, 5, 5], "phrase": "chair", "score": 0.4},
                {"box": [2, 2, 8, 8], "phrase": "table", "score": 0.8},
            ]
        }
        client = httpx.Client(
            transport=httpx.MockTransport(lambda r: httpx.Response(200, json=payload))
        )
        endpoint = BackendEndpoint(kind="detector", base_url="http://det.test/detect")
        backend = HttpDetectorBackend(endpoint, client=client)
        result = backend.detect("img.jpg", ["chair", "table"])
        assert [d.phrase for d in result.detections] == ["table", "chair"]
