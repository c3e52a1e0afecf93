"""Candidate intention-sentence generation and the automated checker gate.

Stage one of dataset construction: render a generation prompt for a target
object (context-aware or uncommon variant), collect exactly five candidate
sentences from a text backend, then screen each sentence with a yes/no
checker. A pass-rate ledger keeps per-type, per-stage acceptance books.
"""

from __future__ import annotations

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence, Union

from .backends import ChatBackend, ChatMessage
from .dataset import INTENTION_TYPES, IntentionRecord

CANDIDATES_PER_SET = 5
STAGES = ("generation", "checker", "human")


class TemplateError(ValueError):
    """Prompt template references a placeholder with no binding."""


class CandidateFormatError(RuntimeError):
    """Backend reply did not contain the required number of sentences."""


class CheckerFormatError(RuntimeError):
    """Checker reply was neither a yes nor a no."""


_PLACEHOLDER = re.compile(r"\{([A-Z][A-Z0-9_]*)\}")


def render_text(template: str, bindings: Mapping[str, str]) -> str:
    """Substitute {UPPERCASE} placeholders; unknown ones are an error."""

    def replace(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in bindings:
            raise TemplateError(f"unbound placeholder {{{key}}}")
        return bindings[key]

    return _PLACEHOLDER.sub(replace, template)


@dataclass(frozen=True)
class PromptTemplate:
    """Role-tagged prompt segments plus in-context example pairs.

    In-context examples render as alternating user/assistant messages,
    inserted just before the final segment.
    """

    template_id: str
    segments: tuple[tuple[str, str], ...]
    in_context_examples: tuple[tuple[str, str], ...] = ()

    def render(
        self, bindings: Mapping[str, str], image_ref: str | None = None
    ) -> list[ChatMessage]:
        if not self.segments:
            raise TemplateError(f"template {self.template_id} has no segments")
        messages = [
            ChatMessage(role, render_text(text, bindings)) for role, text in self.segments[:-1]
        ]
        for user_text, assistant_text in self.in_context_examples:
            messages.append(ChatMessage("user", render_text(user_text, bindings)))
            messages.append(ChatMessage("assistant", render_text(assistant_text, bindings)))
        last_role, last_text = self.segments[-1]
        messages.append(ChatMessage(last_role, render_text(last_text, bindings), image_ref))
        return messages

    @classmethod
    def from_dict(cls, data: dict) -> "PromptTemplate":
        return cls(
            template_id=data["template_id"],
            segments=tuple((s["role"], s["text"]) for s in data["segments"]),
            in_context_examples=tuple(
                (e["user"], e["assistant"]) for e in data.get("in_context_examples", [])
            ),
        )


def load_prompt_template(name: str, path: Union[str, Path, None] = None) -> PromptTemplate:
    """Load a named template from a fixture file (packaged prompts by default)."""
    if path is None:
        raw = resources.files("intentground.fixtures").joinpath("generation_prompts.json").read_text()
    else:
        raw = Path(path).read_text()
    data = json.loads(raw)
    if name not in data:
        raise KeyError(f"no prompt template {name!r}; have {sorted(data)}")
    return PromptTemplate.from_dict(data[name])


def _crop_ref(record: IntentionRecord) -> str:
    box = record.primary_bbox
    return f"{record.image_ref}#crop={box.x1:g},{box.y1:g},{box.x2:g},{box.y2:g}"


def build_generation_prompt(
    record: IntentionRecord,
    intention_type: str,
    template: PromptTemplate | None = None,
) -> list[ChatMessage]:
    """Render the generation prompt for one record and intention type.

    The context variant attaches the full image (target marked in the
    prompt); the uncommon variant attaches a crop of the target box.
    """
    if intention_type not in INTENTION_TYPES:
        raise ValueError(f"intention type must be one of {INTENTION_TYPES}")
    if template is None:
        template = load_prompt_template(intention_type)
    image_ref = record.image_ref if intention_type == "context" else _crop_ref(record)
    bindings = {"OBJECT": record.object_category, "IMAGE_REF": image_ref}
    return template.render(bindings, image_ref=image_ref)


@dataclass(frozen=True)
class CandidateSet:
    """Exactly five candidate sentences for one record and intention type."""

    record_id: str
    intention_type: str
    sentences: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.sentences) != CANDIDATES_PER_SET:
            raise ValueError(f"expected {CANDIDATES_PER_SET} sentences, got {len(self.sentences)}")
        if any(not s for s in self.sentences):
            raise ValueError("candidate sentences must be nonempty")

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "intention_type": self.intention_type,
            "sentences": list(self.sentences),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CandidateSet":
        return cls(
            record_id=data["record_id"],
            intention_type=data["intention_type"],
            sentences=tuple(data["sentences"]),
        )


_NUMBERED_LINE = re.compile(r"^\s*\d+\s*[\.\):-]\s*(.+?)\s*$")


def split_numbered_sentences(reply: str) -> list[str]:
    return [m.group(1) for line in reply.splitlines() if (m := _NUMBERED_LINE.match(line))]


def generate_candidates(
    record: IntentionRecord,
    intention_type: str,
    backend: ChatBackend,
    template: PromptTemplate | None = None,
) -> CandidateSet:
    """Ask the backend for five numbered sentences; one retry on a short reply."""
    messages = build_generation_prompt(record, intention_type, template)
    for attempt in range(2):
        reply = backend.complete(messages)
        sentences = split_numbered_sentences(reply)
        if len(sentences) == CANDIDATES_PER_SET:
            return CandidateSet(
                record_id=record.record_id,
                intention_type=intention_type,
                sentences=tuple(sentences),
            )
    raise CandidateFormatError(
        f"{record.record_id}/{intention_type}: expected {CANDIDATES_PER_SET} numbered "
        f"sentences, got {len(sentences)} after retry"
    )


def generate_candidates_batch(
    records: Sequence[IntentionRecord],
    intention_type: str,
    backend: ChatBackend,
    template: PromptTemplate | None = None,
    concurrency_limit: int = 4,
    ledger: "PassRateLedger | None" = None,
) -> list[CandidateSet | None]:
    """Concurrent per-record generation with a bounded in-flight limit.

    Returns one entry per record in input order; format failures come back
    as None (and as a rejected generation in the ledger, when given).
    """

    def one(record: IntentionRecord) -> CandidateSet | None:
        try:
            candidates = generate_candidates(record, intention_type, backend, template)
        except CandidateFormatError:
            if ledger is not None:
                ledger.record_outcome(intention_type, "generation", accepted=False)
            return None
        if ledger is not None:
            ledger.record_outcome(intention_type, "generation", accepted=True)
        return candidates

    with ThreadPoolExecutor(max_workers=max(1, concurrency_limit)) as pool:
        return list(pool.map(one, records))


@dataclass(frozen=True)
class CheckerVerdict:
    accepted: bool
    rationale: str

    def __post_init__(self) -> None:
        if not self.accepted and not self.rationale:
            raise ValueError("rejections must carry a rationale")


def check_sentence(
    sentence: str,
    category: str,
    intention_type: str,
    backend: ChatBackend,
    template: PromptTemplate | None = None,
) -> CheckerVerdict:
    """Yes/no screening of one candidate sentence.

    Uncommon sentences that literally contain the category name are
    rejected before any backend call (name leakage); everything else goes
    to the backend, whose reply must start with yes or no.
    """
    if intention_type == "uncommon" and category.lower() in sentence.lower():
        return CheckerVerdict(accepted=False, rationale=f"target name {category!r} leaked")
    if template is None:
        template = load_prompt_template("checker")
    messages = template.render({"SENTENCE": sentence, "OBJECT": category})
    reply = backend.complete(messages).strip()
    lowered = reply.lower()
    if lowered.startswith("yes"):
        return CheckerVerdict(accepted=True, rationale=reply[3:].strip(" .,:-") or "accepted")
    if lowered.startswith("no"):
        return CheckerVerdict(accepted=False, rationale=reply[2:].strip(" .,:-") or "rejected")
    raise CheckerFormatError(f"checker reply not parseable as yes/no: {reply!r}")


def is_leaked(sentence: str, category: str) -> bool:
    return category.lower() in sentence.lower()


@dataclass
class LedgerCell:
    generated: int = 0
    accepted: int = 0
    leak_rejected: int = 0


class PassRateLedger:
    """Per (intention type, stage) acceptance counts. Increment-only, thread-safe."""

    def __init__(self) -> None:
        self._cells: dict[tuple[str, str], LedgerCell] = {}
        self._lock = threading.Lock()

    def record_outcome(
        self, intention_type: str, stage: str, accepted: bool, leaked: bool = False
    ) -> None:
        with self._lock:
            cell = self._cells.setdefault((intention_type, stage), LedgerCell())
            cell.generated += 1
            if accepted:
                cell.accepted += 1
            if leaked:
                cell.leak_rejected += 1

    def cell(self, intention_type: str, stage: str) -> LedgerCell:
        with self._lock:
            found = self._cells.get((intention_type, stage))
            return LedgerCell(found.generated, found.accepted, found.leak_rejected) if found else LedgerCell()

    def pass_rate(self, intention_type: str, stage: str) -> float | None:
        cell = self.cell(intention_type, stage)
        if cell.generated == 0:
            return None
        return cell.accepted / cell.generated

    def format_rate(self, intention_type: str, stage: str) -> str:
        rate = self.pass_rate(intention_type, stage)
        if rate is None:
            return "—"
        return f"{rate * 100:.1f}%"

    def to_dict(self) -> dict:
        with self._lock:
            return {
                f"{t}/{stage}": {
                    "generated": cell.generated,
                    "accepted": cell.accepted,
                    "leak_rejected": cell.leak_rejected,
                }
                for (t, stage), cell in sorted(self._cells.items())
            }

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PassRateLedger":
        ledger = cls()
        data = json.loads(Path(path).read_text())
        for key, counts in data.items():
            intention_type, stage = key.split("/", 1)
            cell = LedgerCell(**counts)
            ledger._cells[(intention_type, stage)] = cell
        return ledger
