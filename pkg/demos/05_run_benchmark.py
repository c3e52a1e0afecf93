#!/usr/bin/env python3
"""All four inference modes over scripted backends, scored into a report."""

from pathlib import Path
from tempfile import TemporaryDirectory

from intentground.backends import ScriptedChatBackend, ScriptedDetectorBackend, TranscriptEntry
from intentground.dataset import Manifest, IntentionRecord, save_manifest
from intentground.evaluation import EvalConfig, evaluate_files, render_report
from intentground.geometry import BBox, ImageSize
from intentground.grammar import get_grammar, serialize_box
from intentground.orchestrator import ModeBackends, batch_run, run_dr, run_rd

VOCABULARY = ["chair", "table", "handbag", "soap"]


def build_manifest(n: int = 8) -> Manifest:
    size = ImageSize(200, 200)
    records = []
    for i in range(n):
        x1, y1 = 10 + 6 * i, 20 + 4 * i
        records.append(
            IntentionRecord(
                record_id=f"bench-{i:02d}",
                image_ref=f"images/bench-{i:02d}.jpg",
                image_size=size,
                object_category=VOCABULARY[i % len(VOCABULARY)],
                query_type="context" if i % 2 == 0 else "uncommon",
                query_text=f"benchmark query {i:02d}",
                primary_bbox=BBox(x1, y1, x1 + 60, y1 + 40),
                split="test",
            )
        )
    return Manifest(records=records)


def grounder_for(manifest: Manifest, grammar, jitter: int = 0) -> ScriptedChatBackend:
    entries = []
    for record in manifest.records:
        b = record.primary_bbox
        box = BBox(b.x1 + jitter, b.y1, b.x2 + jitter, b.y2)
        entries.append(
            TranscriptEntry(
                match=record.query_text,
                response=serialize_box(box, record.image_size, grammar),
                repeat=True,
            )
        )
    return ScriptedChatBackend(entries)


def main():
    grammar = get_grammar("curly-bins-100")
    manifest = build_manifest()

    with TemporaryDirectory() as tmp:
        manifest_path = Path(tmp) / "manifest.jsonl"
        save_manifest(manifest, manifest_path)

        for label, jitter in (("perfect", 0), ("offset-by-20px", 20)):
            backends = ModeBackends(grounder=grounder_for(manifest, grammar, jitter))
            result = batch_run(manifest, "direct", backends, grammar, Path(tmp) / label)
            report = evaluate_files(result.predictions_path, manifest_path, EvalConfig())
            print(f"--- {label} grounder ---")
            print(render_report(report, "text-table").decode())

    # hybrid pipelines on one record, traced call by call
    record = manifest.records[0]
    detector = ScriptedDetectorBackend(
        [
            TranscriptEntry(
                repeat=True,
                detections=[
                    {"box": [10, 20, 70, 60], "phrase": "chair", "score": 0.92},
                    {"box": [120, 30, 180, 90], "phrase": "table", "score": 0.80},
                ],
            )
        ]
    )
    reasoner = ScriptedChatBackend([TranscriptEntry(response="chair", repeat=True)])
    for name, trace in (
        ("detect-then-reason", run_dr(record, detector, reasoner, VOCABULARY)),
        ("reason-then-detect", run_rd(record, reasoner, detector, VOCABULARY)),
    ):
        print(f"{name}: {len(trace.calls)} calls, status {trace.status}, box {trace.final_box.to_list()}")
        for call in trace.calls:
            print(f"  [{call.endpoint_kind}] {call.request_text[:70]}")


if __name__ == "__main__":
    main()
