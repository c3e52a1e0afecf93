#!/usr/bin/env python3
"""The annotation loop in-process: lease, decide, finalize, repeat."""

from intentground.annotation import AnnotationStore, Decision
from intentground.dataset import Manifest, IntentionRecord
from intentground.generation import CandidateSet, CheckerVerdict
from intentground.geometry import BBox, ImageSize


def checker(sentence: str, category: str) -> CheckerVerdict:
    ok = "towel" not in category
    return CheckerVerdict(ok, "fits the need" if ok else "category cannot satisfy it")


def main():
    record = IntentionRecord(
        record_id="ann-demo",
        image_ref="images/ann-demo.jpg",
        image_size=ImageSize(640, 480),
        object_category="chair",
        query_type="context",
        query_text="placeholder",
        primary_bbox=BBox(100, 120, 300, 420),
    )
    store = AnnotationStore(Manifest(records=[record]), checker=checker, lease_seconds=600)
    store.create_tasks(
        [
            CandidateSet(
                record_id="ann-demo",
                intention_type="context",
                sentences=(
                    "I need somewhere to sit while I work",
                    "a spot to rest would help",
                    "my legs need a break near the desk",
                    "I want to sit by the window",
                    "give me a place to settle down",
                ),
            )
        ]
    )

    task = store.lease_task("annotator-7", "sentence_validation")
    print(f"leased {task.task_id}; candidates:")
    for i, sentence in enumerate(task.payload["candidates"]):
        print(f"  [{i}] {sentence}")

    store.submit_decision(
        task.task_id,
        Decision(annotator_id="annotator-7", chosen_index=2, edited_text="my legs need a break at this desk"),
    )
    result = store.finalize("ann-demo")
    print(f"sentence finalize -> {result.status}; manifest text: {result.record.query_text!r}")

    bbox_task = store.lease_task("annotator-8", "alt_bbox")
    print(f"leased {bbox_task.task_id} (sentence: {bbox_task.payload['sentence']!r})")
    store.submit_decision(
        bbox_task.task_id,
        Decision(
            annotator_id="annotator-8",
            boxes=[(BBox(400, 100, 550, 380), "stool"), (BBox(20, 20, 80, 60), "towel rack")],
        ),
    )
    result = store.finalize("ann-demo")
    print(f"bbox finalize -> {result.status}; alternatives added: {result.added_boxes}")
    print(f"alternative boxes now: {[b.to_list() for b in result.record.alternative_bboxes]}")
    print("stats:", store.stats())


if __name__ == "__main__":
    main()
