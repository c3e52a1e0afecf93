"""Token grammars for grounded model output.

Grounding models emit boxes as quantized coordinate tokens inside literal
delimiters, e.g. ``{<10><10><50><50>}`` at 100 bins or
``<box>(100,100),(500,500)</box>`` at 1000 bins. A GrammarSpec describes one
such format declaratively; this module serializes pixel boxes into it and
parses arbitrary model text back out. It also normalizes the free-text
category replies produced by the reasoning stage.
"""

from __future__ import annotations

import json
import math
import re
import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Union

from .geometry import BBox, ImageSize, InvalidBoxError

# ParsedOutput.status values.
STATUS_OK = "ok"
STATUS_NO_BOX = "no_box_found"
STATUS_OUT_OF_RANGE = "out_of_range"
STATUS_MALFORMED = "malformed"

_COORD_NAMES = ("x1", "y1", "x2", "y2")


class GrammarError(ValueError):
    """Grammar spec is internally inconsistent or unusable."""


class EmptyCategoryError(ValueError):
    """Category text contains no alphabetic content."""


@dataclass(frozen=True)
class GrammarSpec:
    """One grounded-output token format.

    ``coord_template`` holds the body between the delimiters with {x1} {y1}
    {x2} {y2} placeholders; coordinate order is fixed. ``scale`` is the
    number of coordinate bins.
    """

    name: str
    box_open: str
    box_close: str
    coord_template: str
    scale: int
    reason_token: str = "<reason>"
    ref_token: str = "<ref>"

    def __post_init__(self) -> None:
        if self.scale < 2:
            raise GrammarError(f"scale must be >= 2, got {self.scale}")
        if not self.box_open or not self.box_close:
            raise GrammarError("box delimiters must be nonempty")
        if self.box_open == self.box_close:
            raise GrammarError("box delimiters must be distinct")
        if self.reason_token == self.ref_token:
            raise GrammarError("reason and ref task tokens must differ")
        missing = [n for n in _COORD_NAMES if ("{%s}" % n) not in self.coord_template]
        if missing:
            raise GrammarError(f"coord_template missing placeholders: {missing}")


@dataclass(frozen=True)
class ParsedOutput:
    """Boxes recovered from one model reply.

    status is ``ok`` exactly when at least one box pattern was found and
    every occurrence decoded to a valid in-range box; on any failure the
    box list is empty and status names the first failure class.
    """

    boxes: tuple[BBox, ...]
    raw_text: str
    status: str


@lru_cache(maxsize=32)
def _box_pattern(grammar: GrammarSpec) -> re.Pattern[str]:
    body = re.escape(grammar.coord_template)
    for name in _COORD_NAMES:
        body = body.replace(re.escape("{%s}" % name), r"(\d+)")
    return re.compile(re.escape(grammar.box_open) + body + re.escape(grammar.box_close))


def _quantize(value: float, extent: int, scale: int) -> int:
    ratio = value / extent * scale
    nearest = round(ratio)
    # Snap values a float-rounding hair below a bin edge back onto it, so
    # pixels produced by bin * extent / scale re-quantize to the same bin.
    if abs(ratio - nearest) < 1e-9:
        ratio = nearest
    return min(scale, max(0, math.floor(ratio)))


def serialize_box(box: BBox, size: ImageSize, grammar: GrammarSpec) -> str:
    """Emit a box as grammar tokens, quantized to the grammar's bins.

    Quantization floors each coordinate into [0, scale]; a box narrower than
    one bin is widened to a single bin so the output always parses back.
    """
    if not size.contains(box):
        raise InvalidBoxError(f"box {box.to_list()} outside image {size.width}x{size.height}")
    x1 = _quantize(box.x1, size.width, grammar.scale)
    y1 = _quantize(box.y1, size.height, grammar.scale)
    x2 = _quantize(box.x2, size.width, grammar.scale)
    y2 = _quantize(box.y2, size.height, grammar.scale)
    # x1 < x2 <= width guarantees x1 lands at most at bin scale-1, so the
    # bump never exceeds scale; same for y.
    if x2 <= x1:
        x2 = x1 + 1
    if y2 <= y1:
        y2 = y1 + 1
    body = grammar.coord_template.format(x1=x1, y1=y1, x2=x2, y2=y2)
    return grammar.box_open + body + grammar.box_close


def parse_boxes(text: str, size: ImageSize, grammar: GrammarSpec) -> ParsedOutput:
    """Extract every box occurrence from arbitrary model text.

    Bins map back to pixels as ``bin * extent / scale``. Never raises:
    missing patterns, out-of-range bins, and inverted corners all come back
    as a status.
    """
    boxes: list[BBox] = []
    failure: str | None = None
    for match in _box_pattern(grammar).finditer(text):
        bins = [int(g) for g in match.groups()]
        if any(b > grammar.scale for b in bins):
            failure = failure or STATUS_OUT_OF_RANGE
            continue
        x1, y1, x2, y2 = bins
        try:
            boxes.append(
                BBox(
                    x1 * size.width / grammar.scale,
                    y1 * size.height / grammar.scale,
                    x2 * size.width / grammar.scale,
                    y2 * size.height / grammar.scale,
                )
            )
        except InvalidBoxError:
            failure = failure or STATUS_MALFORMED
    if failure is not None:
        return ParsedOutput(boxes=(), raw_text=text, status=failure)
    if not boxes:
        return ParsedOutput(boxes=(), raw_text=text, status=STATUS_NO_BOX)
    return ParsedOutput(boxes=tuple(boxes), raw_text=text, status=STATUS_OK)


_STRIP_CHARS = string.whitespace + string.punctuation
_LIST_DELIMITER = re.compile(r"[,;\n]")


def extract_category(text: str) -> str:
    """Normalize a free-text category reply to its first list item.

    Lowercases, strips surrounding whitespace and punctuation, and keeps the
    first comma/semicolon/newline-separated item that contains a letter.
    Idempotent. Raises EmptyCategoryError when the input has no alphabetic
    content at all.
    """
    if not any(ch.isalpha() for ch in text):
        raise EmptyCategoryError(f"no alphabetic content in {text!r}")
    cleaned = text.strip(_STRIP_CHARS).lower()
    for segment in _LIST_DELIMITER.split(cleaned):
        if any(ch.isalpha() for ch in segment):
            return segment.strip(_STRIP_CHARS)
    raise EmptyCategoryError(f"no alphabetic list item in {text!r}")  # unreachable


def grammar_from_dict(data: dict) -> GrammarSpec:
    """Build a GrammarSpec from its declarative config form."""
    known = {"name", "box_open", "box_close", "coord_template", "scale", "reason_token", "ref_token"}
    unknown = set(data) - known
    if unknown:
        raise GrammarError(f"unknown grammar config keys: {sorted(unknown)}")
    try:
        return GrammarSpec(**data)
    except TypeError as exc:
        raise GrammarError(f"incomplete grammar config: {exc}") from exc


def load_grammars(path: Union[str, Path, None] = None) -> dict[str, GrammarSpec]:
    """Load grammar presets from a config file (the packaged presets by default)."""
    if path is None:
        raw = resources.files("intentground.fixtures").joinpath("grammar_presets.json").read_text()
    else:
        raw = Path(path).read_text()
    data = json.loads(raw)
    specs = [grammar_from_dict(entry) for entry in data["presets"]]
    return {spec.name: spec for spec in specs}


def get_grammar(name: str) -> GrammarSpec:
    """Fetch one packaged preset by name."""
    grammars = load_grammars()
    if name not in grammars:
        raise GrammarError(f"unknown grammar preset {name!r}; have {sorted(grammars)}")
    return grammars[name]
