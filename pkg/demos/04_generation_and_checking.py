#!/usr/bin/env python3
"""Candidate sentence generation and the checker gate, on scripted backends."""

from intentground.backends import ScriptedChatBackend, TranscriptEntry
from intentground.dataset import IntentionRecord
from intentground.generation import PassRateLedger, build_generation_prompt, check_sentence, generate_candidates
from intentground.geometry import BBox, ImageSize

FIVE = (
    "1. I need somewhere to rest while I sort these parts.\n"
    "2. We are one seat short for dinner tonight.\n"
    "3. I want to settle in by the lamp with my book.\n"
    "4. My legs are done after that hike; help me out.\n"
    "5. Grandma needs to get off her feet near the window."
)


def main():
    record = IntentionRecord(
        record_id="demo-0",
        image_ref="images/demo-0.jpg",
        image_size=ImageSize(640, 480),
        object_category="chair",
        query_type="context",
        query_text="placeholder",
        primary_bbox=BBox(100, 120, 300, 420),
    )

    prompt = build_generation_prompt(record, "context")
    print(f"generation prompt has {len(prompt)} messages; final user turn:")
    print(f"  {prompt[-1].text[:120]}...")

    backend = ScriptedChatBackend([TranscriptEntry(response=FIVE)])
    candidates = generate_candidates(record, "context", backend)
    print("candidates:")
    for sentence in candidates.sentences:
        print(f"  - {sentence}")

    ledger = PassRateLedger()
    checker = ScriptedChatBackend(
        [
            TranscriptEntry(match="rest while I sort", response="yes, implies seating"),
            TranscriptEntry(match="seat short", response="yes, implies seating"),
            TranscriptEntry(match="settle in by the lamp", response="yes"),
            TranscriptEntry(match="legs are done", response="no, too vague about the object"),
            TranscriptEntry(match="off her feet", response="yes"),
        ]
    )
    for sentence in candidates.sentences:
        verdict = check_sentence(sentence, record.object_category, "context", checker)
        ledger.record_outcome("context", "checker", verdict.accepted)
        print(f"  checker[{'+' if verdict.accepted else '-'}] {sentence[:46]:<46} {verdict.rationale}")

    # name leakage on uncommon sentences never reaches the backend
    verdict = check_sentence("stand on the chair to reach it", "chair", "uncommon", checker)
    ledger.record_outcome("uncommon", "checker", verdict.accepted, leaked=True)
    print(f"leak filter: {verdict.rationale}")
    print(f"context checker pass rate: {ledger.format_rate('context', 'checker')}")


if __name__ == "__main__":
    main()
