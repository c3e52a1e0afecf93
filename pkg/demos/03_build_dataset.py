#!/usr/bin/env python3
"""Synthesize a manifest, validate it, and emit instruction-tuning data."""

import json
from pathlib import Path
from tempfile import TemporaryDirectory

from intentground.dataset import (
    MixSpec,
    emit_naive_conversations,
    emit_rog_conversations,
    mix_datasets,
    save_manifest,
    synthesize_manifest,
    validate_manifest,
)
from intentground.grammar import get_grammar


def main():
    manifest = synthesize_manifest(
        {
            "train": {"images": 30, "context_boxes": 42, "uncommon_boxes": 38},
            "test": {"images": 10, "context_boxes": 14, "uncommon_boxes": 12},
        },
        seed=7,
    )
    stats, issues = validate_manifest(manifest)
    print(f"records: {len(manifest.records)}, issues: {len(issues)}")
    print(json.dumps(stats, indent=2, sort_keys=True))

    grammar = get_grammar("curly-bins-100")
    rog = emit_rog_conversations(manifest, grammar)
    naive = emit_naive_conversations(manifest, grammar)
    print(f"rog conversations:   {len(rog)} (4 turns each)")
    print(f"naive conversations: {len(naive)} (2 turns each)")
    print("sample rog exchange:")
    for role, content in rog[0].turns:
        print(f"  {role}: {content}")

    with TemporaryDirectory() as tmp:
        path = Path(tmp) / "manifest.jsonl"
        save_manifest(manifest, path)
        spec = MixSpec(
            sources=[(str(path), "rog"), (str(path), "naive")],
            shuffle_seed=13,
        )
        mixed = mix_datasets(spec, grammar)
        print(f"mixed dataset: {len(mixed)} conversations, shuffled by seed {spec.shuffle_seed}")


if __name__ == "__main__":
    main()
