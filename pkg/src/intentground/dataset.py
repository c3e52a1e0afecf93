"""Intention-grounding dataset schema, validation, and tuning-data emission.

A manifest is a line-delimited JSON file of intention records: one image +
one intention query + a primary target box, optionally augmented with
alternative boxes that also satisfy the intention. Records never embed
pixels; images are referenced by relative path plus stored dimensions, so
everything here runs imageless.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .geometry import BBox, ImageSize
from .grammar import GrammarSpec, serialize_box

QUERY_TYPES = ("context", "uncommon", "object")
INTENTION_TYPES = ("context", "uncommon")
SPLITS = ("train", "val", "test")

PathLike = Union[str, Path]


class ManifestValidationError(ValueError):
    """Manifest failed validation; carries the issue list."""

    def __init__(self, issues: Sequence["ValidationIssue"]):
        self.issues = list(issues)
        preview = "; ".join(str(i) for i in self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        super().__init__(f"{len(self.issues)} manifest issue(s): {preview}{more}")


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    detail: str
    record_id: str | None = None

    def __str__(self) -> str:
        where = f" [{self.record_id}]" if self.record_id else ""
        return f"{self.kind}{where}: {self.detail}"


@dataclass
class IntentionRecord:
    """One image + query + ground-truth-set sample.

    ``query_type`` is context or uncommon for intention sentences, or
    ``object`` for explicit-name queries, in which case ``query_text`` must
    equal ``object_category``.
    """

    record_id: str
    image_ref: str
    image_size: ImageSize
    object_category: str
    query_type: str
    query_text: str
    primary_bbox: BBox
    alternative_bboxes: list[BBox] = field(default_factory=list)
    split: str = "train"

    def ground_truths(self, with_alternatives: bool = True) -> list[BBox]:
        if with_alternatives:
            return [self.primary_bbox, *self.alternative_bboxes]
        return [self.primary_bbox]

    def box_count(self) -> int:
        return 1 + len(self.alternative_bboxes)

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_ref": self.image_ref,
            "image_size": {"width": self.image_size.width, "height": self.image_size.height},
            "object_category": self.object_category,
            "query_type": self.query_type,
            "query_text": self.query_text,
            "primary_bbox": self.primary_bbox.to_list(),
            "alternative_bboxes": [b.to_list() for b in self.alternative_bboxes],
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IntentionRecord":
        return cls(
            record_id=data["record_id"],
            image_ref=data["image_ref"],
            image_size=ImageSize(**data["image_size"]),
            object_category=data["object_category"],
            query_type=data["query_type"],
            query_text=data["query_text"],
            primary_bbox=BBox.from_sequence(data["primary_bbox"]),
            alternative_bboxes=[BBox.from_sequence(b) for b in data.get("alternative_bboxes", [])],
            split=data.get("split", "train"),
        )


@dataclass
class Manifest:
    """All records plus the optional declared per-split statistics."""

    records: list[IntentionRecord] = field(default_factory=list)
    declared_stats: dict | None = None

    def by_id(self) -> dict[str, IntentionRecord]:
        return {r.record_id: r for r in self.records}


def compute_stats(manifest: Manifest) -> dict:
    """Recompute per-split image counts and per-type box counts.

    Image counts are distinct image refs per split; box counts include the
    primary plus every alternative box, bucketed by query type.
    """
    stats: dict[str, dict] = {}
    images: dict[str, set[str]] = {}
    for record in manifest.records:
        split = record.split
        cell = stats.setdefault(split, {"images": 0})
        images.setdefault(split, set()).add(record.image_ref)
        key = f"{record.query_type}_boxes"
        cell[key] = cell.get(key, 0) + record.box_count()
    for split, refs in images.items():
        stats[split]["images"] = len(refs)
    return stats


def validate_manifest(manifest: Manifest) -> tuple[dict, list[ValidationIssue]]:
    """Check every record invariant and the declared statistics.

    Returns (recomputed stats, issues). Issues carry the offending
    record_id; an empty issue list means the manifest is clean.
    """
    issues: list[ValidationIssue] = []
    seen: set[str] = set()
    for record in manifest.records:
        rid = record.record_id
        if rid in seen:
            issues.append(ValidationIssue("duplicate_id", f"record_id {rid!r} repeats", rid))
        seen.add(rid)
        if record.split not in SPLITS:
            issues.append(ValidationIssue("bad_split", f"unknown split {record.split!r}", rid))
        if record.query_type not in QUERY_TYPES:
            issues.append(
                ValidationIssue("bad_query_type", f"unknown query type {record.query_type!r}", rid)
            )
        if not record.query_text:
            issues.append(ValidationIssue("empty_query_text", "query_text is empty", rid))
        if record.query_type == "object" and record.query_text != record.object_category:
            issues.append(
                ValidationIssue(
                    "object_query_mismatch",
                    f"object query text {record.query_text!r} != category {record.object_category!r}",
                    rid,
                )
            )
        for box in record.ground_truths():
            if not record.image_size.contains(box):
                issues.append(
                    ValidationIssue(
                        "box_out_of_bounds",
                        f"box {box.to_list()} exceeds image "
                        f"{record.image_size.width}x{record.image_size.height}",
                        rid,
                    )
                )
    stats = compute_stats(manifest)
    if manifest.declared_stats is not None:
        for split, declared in manifest.declared_stats.items():
            actual = stats.get(split, {"images": 0})
            for key, value in declared.items():
                got = actual.get(key, 0)
                if got != value:
                    issues.append(
                        ValidationIssue(
                            "stat_mismatch",
                            f"{split}/{key}: declared {value}, recomputed {got}",
                        )
                    )
    return stats, issues


def _require_valid(manifest: Manifest) -> None:
    _, issues = validate_manifest(manifest)
    if issues:
        raise ManifestValidationError(issues)


# --- manifest file I/O (JSONL; optional stats header line) ---


def load_manifest(path: PathLike) -> Manifest:
    records: list[IntentionRecord] = []
    declared = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            if "declared_stats" in data and "record_id" not in data:
                declared = data["declared_stats"]
                continue
            try:
                records.append(IntentionRecord.from_dict(data))
            except (KeyError, ValueError) as exc:
                raise ManifestValidationError(
                    [ValidationIssue("unreadable_record", f"line {line_no}: {exc}")]
                ) from exc
    return Manifest(records=records, declared_stats=declared)


def save_manifest(manifest: Manifest, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if manifest.declared_stats is not None:
            fh.write(json.dumps({"declared_stats": manifest.declared_stats}, sort_keys=True) + "\n")
        for record in manifest.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


# --- affordance vocabulary fixture ---


@dataclass(frozen=True)
class AffordanceEntry:
    category: str
    primary_function: str


def load_vocabulary(path: PathLike | None = None) -> list[AffordanceEntry]:
    """Category vocabulary with primary functions (packaged fixture by default)."""
    if path is None:
        raw = resources.files("intentground.fixtures").joinpath("affordance_vocabulary.json").read_text()
    else:
        raw = Path(path).read_text()
    return [AffordanceEntry(**entry) for entry in json.loads(raw)]


def vocabulary_categories(path: PathLike | None = None) -> list[str]:
    return [entry.category for entry in load_vocabulary(path)]


# --- instruction-tuning conversation emission ---


@dataclass
class TuningConversation:
    """One emitted conversation: alternating user/assistant turns."""

    conversation_id: str
    image_ref: str
    turns: list[tuple[str, str]]

    def __post_init__(self) -> None:
        for i, (role, _) in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "assistant"
            if role != expected:
                raise ValueError(f"turn {i} must be {expected}, got {role}")
        if not self.turns or self.turns[-1][0] != "assistant":
            raise ValueError("conversation must end with an assistant turn")

    def to_dict(self) -> dict:
        return {
            "conversation_id": self.conversation_id,
            "image_ref": self.image_ref,
            "turns": [{"role": role, "content": content} for role, content in self.turns],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TuningConversation":
        return cls(
            conversation_id=data["conversation_id"],
            image_ref=data["image_ref"],
            turns=[(t["role"], t["content"]) for t in data["turns"]],
        )


def emit_rog_conversations(manifest: Manifest, grammar: GrammarSpec) -> list[TuningConversation]:
    """Two-exchange reason-then-ground conversations, one per intention record.

    Exchange 1 asks for the object category behind the intention; exchange 2
    grounds that category to the primary box. Object-name queries carry no
    intention to reason over and are skipped.
    """
    _require_valid(manifest)
    conversations = []
    for record in manifest.records:
        if record.query_type not in INTENTION_TYPES:
            continue
        box_text = serialize_box(record.primary_bbox, record.image_size, grammar)
        conversations.append(
            TuningConversation(
                conversation_id=f"{record.record_id}-rog",
                image_ref=record.image_ref,
                turns=[
                    ("user", f"{grammar.reason_token} {record.query_text}"),
                    ("assistant", record.object_category),
                    ("user", f"{grammar.ref_token} {record.object_category}"),
                    ("assistant", box_text),
                ],
            )
        )
    return conversations


def emit_naive_conversations(
    manifest: Manifest,
    grammar: GrammarSpec,
    user_template: str = "{ref_token} {query_text}",
) -> list[TuningConversation]:
    """Single-exchange conversations: query straight to the primary box."""
    _require_valid(manifest)
    conversations = []
    for record in manifest.records:
        prompt = user_template.format(ref_token=grammar.ref_token, query_text=record.query_text)
        box_text = serialize_box(record.primary_bbox, record.image_size, grammar)
        conversations.append(
            TuningConversation(
                conversation_id=f"{record.record_id}-naive",
                image_ref=record.image_ref,
                turns=[("user", prompt), ("assistant", box_text)],
            )
        )
    return conversations


CONVERSATION_STYLES = {
    "rog": emit_rog_conversations,
    "naive": emit_naive_conversations,
}


@dataclass
class MixSpec:
    """Dataset mix: (manifest path, conversation style) sources plus a seed."""

    sources: list[tuple[str, str]]
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if not self.sources:
            raise ValueError("mix spec needs at least one source")
        for _, style in self.sources:
            if style not in CONVERSATION_STYLES:
                raise ValueError(f"unknown conversation style {style!r}")

    @classmethod
    def from_file(cls, path: PathLike) -> "MixSpec":
        data = json.loads(Path(path).read_text())
        return cls(
            sources=[(s["manifest"], s["style"]) for s in data["sources"]],
            shuffle_seed=data.get("shuffle_seed", 0),
        )


def mix_datasets(spec: MixSpec, grammar: GrammarSpec) -> list[TuningConversation]:
    """Concatenate per-source emissions, shuffled deterministically by seed."""
    conversations: list[TuningConversation] = []
    for source, style in spec.sources:
        try:
            manifest = load_manifest(source)
        except OSError as exc:
            raise OSError(f"cannot read mix source {source!r}: {exc}") from exc
        conversations.extend(CONVERSATION_STYLES[style](manifest, grammar))
    random.Random(spec.shuffle_seed).shuffle(conversations)
    return conversations


def save_conversations(conversations: Iterable[TuningConversation], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(json.dumps(conv.to_dict(), sort_keys=True) + "\n")


def load_conversations(path: PathLike) -> list[TuningConversation]:
    with open(path, encoding="utf-8") as fh:
        return [TuningConversation.from_dict(json.loads(line)) for line in fh if line.strip()]


# --- synthetic manifests for desk-scale runs ---


def synthesize_manifest(
    split_spec: Mapping[str, Mapping[str, int]],
    seed: int = 0,
    image_size: tuple[int, int] = (640, 480),
) -> Manifest:
    """Generate a manifest matching declared per-split image and box counts.

    ``split_spec`` maps split -> {"images": n, "context_boxes": n,
    "uncommon_boxes": n}. Each image gets one context and one uncommon
    record; alternative boxes are spread over the leading records until the
    declared box totals are met. Box totals below the image count (fewer
    boxes than primaries) are unsatisfiable.
    """
    rng = random.Random(seed)
    width, height = image_size
    size = ImageSize(width, height)
    categories = vocabulary_categories()
    records: list[IntentionRecord] = []

    def random_box() -> BBox:
        x1 = rng.randint(0, width - 20)
        y1 = rng.randint(0, height - 20)
        x2 = rng.randint(x1 + 10, min(width, x1 + width // 2 + 10))
        y2 = rng.randint(y1 + 10, min(height, y1 + height // 2 + 10))
        return BBox(x1, y1, x2, y2)

    for split, counts in split_spec.items():
        n_images = counts["images"]
        for qtype in INTENTION_TYPES:
            total_boxes = counts[f"{qtype}_boxes"]
            extras = total_boxes - n_images
            if extras < 0:
                raise ValueError(
                    f"{split}/{qtype}: {total_boxes} boxes cannot cover {n_images} primaries"
                )
            if extras > n_images:
                raise ValueError(
                    f"{split}/{qtype}: more than one alternative per record not supported "
                    f"({extras} extras for {n_images} images)"
                )
            for i in range(n_images):
                category = categories[i % len(categories)]
                alternatives = [random_box()] if i < extras else []
                records.append(
                    IntentionRecord(
                        record_id=f"{split}-{qtype}-{i:06d}",
                        image_ref=f"images/{split}/{i:06d}.jpg",
                        image_size=size,
                        object_category=category,
                        query_type=qtype,
                        query_text=f"synthetic {qtype} intention {i} needing a {category}",
                        primary_bbox=random_box(),
                        alternative_bboxes=alternatives,
                        split=split,
                    )
                )
    declared = {split: dict(counts) for split, counts in split_spec.items()}
    return Manifest(records=records, declared_stats=declared)


def with_object_queries(manifest: Manifest) -> Manifest:
    """Derive explicit object-name queries from every intention record."""
    extra = []
    seen_pairs = set()
    for record in manifest.records:
        key = (record.image_ref, record.object_category, record.split)
        if key in seen_pairs:
            continue
        seen_pairs.add(key)
        extra.append(
            replace(
                record,
                record_id=f"{record.record_id}-object",
                query_type="object",
                query_text=record.object_category,
                alternative_bboxes=list(record.alternative_bboxes),
            )
        )
    return Manifest(records=[*manifest.records, *extra], declared_stats=manifest.declared_stats)
