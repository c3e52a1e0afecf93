from __future__ import annotations

import random

import pytest

from intentground.dataset import IntentionRecord, Manifest
from intentground.geometry import BBox, ImageSize
from intentground.grammar import get_grammar


@pytest.fixture(scope="session")
def curly_grammar():
    return get_grammar("curly-bins-100")


@pytest.fixture(scope="session")
def paren_grammar():
    return get_grammar("paren-pairs-1000")


def make_record(
    record_id: str = "r0",
    query_type: str = "context",
    category: str = "chair",
    box: BBox | None = None,
    alternatives: list[BBox] | None = None,
    split: str = "test",
    size: ImageSize = ImageSize(100, 100),
    query_text: str | None = None,
) -> IntentionRecord:
    if query_text is None:
        query_text = category if query_type == "object" else f"a need satisfied by a {category}"
    return IntentionRecord(
        record_id=record_id,
        image_ref=f"images/{record_id}.jpg",
        image_size=size,
        object_category=category,
        query_type=query_type,
        query_text=query_text,
        primary_bbox=box or BBox(10, 10, 50, 50),
        alternative_bboxes=alternatives or [],
        split=split,
    )


def make_small_manifest(n: int = 4, split: str = "test") -> Manifest:
    records = []
    for i in range(n):
        qtype = "context" if i % 2 == 0 else "uncommon"
        records.append(
            make_record(
                record_id=f"{split}-{i:03d}",
                query_type=qtype,
                box=BBox(10 + i, 10, 50 + i, 50),
                split=split,
            )
        )
    return Manifest(records=records)


def random_int_box(rng: random.Random, extent: int, min_size: int = 1) -> BBox:
    x1 = rng.randint(0, extent - min_size)
    y1 = rng.randint(0, extent - min_size)
    x2 = rng.randint(x1 + min_size, extent)
    y2 = rng.randint(y1 + min_size, extent)
    return BBox(x1, y1, x2, y2)
