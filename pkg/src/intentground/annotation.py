"""Lease-based annotation task queue with checker-gated finalization.

Two task kinds flow through the queue: sentence validation (pick or edit
one of five candidate sentences, or reject them all) and alternative-box
collection (draw extra boxes that also satisfy a finalized sentence). Tasks
move open -> leased -> submitted -> finalized/rejected; expired leases fall
back to open. A sentence or box enters the manifest only when the human
decision and the automated checker both accept it. State changes append to
an event log from which the whole queue can be rebuilt.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Union

from .dataset import Manifest, IntentionRecord
from .generation import CandidateSet, CheckerVerdict, PassRateLedger
from .geometry import BBox

logger = logging.getLogger(__name__)

TASK_KINDS = ("sentence_validation", "alt_bbox")
TASK_STATES = ("open", "leased", "submitted", "finalized", "rejected")
_ALLOWED_TRANSITIONS = {
    "open": {"leased"},
    "leased": {"open", "submitted"},
    "submitted": {"finalized", "rejected"},
}

DEFAULT_LEASE_SECONDS = 15 * 60

Checker = Callable[[str, str], CheckerVerdict]


class AnnotationError(RuntimeError):
    pass


class LeaseExpiredError(AnnotationError):
    """Decision arrived after the lease lapsed."""


class ForbiddenError(AnnotationError):
    """Decision submitted by someone other than the lease holder."""


class StateTransitionError(AnnotationError):
    """Task state machine does not admit this transition."""


class DecisionValidationError(AnnotationError):
    """Decision content is invalid; the task stays leased."""


@dataclass
class Lease:
    annotator_id: str
    expires_at: float

    def expired(self, now: float) -> bool:
        return now >= self.expires_at


@dataclass
class Decision:
    """Annotator output for one task.

    Sentence tasks set chosen_index (plus optional edited_text) or
    none_valid; box tasks set boxes as (bbox, category) pairs, empty for an
    explicit "no valid alternatives".
    """

    annotator_id: str
    chosen_index: int | None = None
    edited_text: str | None = None
    none_valid: bool = False
    boxes: list[tuple[BBox, str]] | None = None
    submitted_at: float = 0.0

    def to_dict(self) -> dict:
        return {
            "annotator_id": self.annotator_id,
            "chosen_index": self.chosen_index,
            "edited_text": self.edited_text,
            "none_valid": self.none_valid,
            "boxes": [[b.to_list(), c] for b, c in self.boxes] if self.boxes is not None else None,
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Decision":
        boxes = data.get("boxes")
        return cls(
            annotator_id=data["annotator_id"],
            chosen_index=data.get("chosen_index"),
            edited_text=data.get("edited_text"),
            none_valid=data.get("none_valid", False),
            boxes=[(BBox.from_sequence(b), c) for b, c in boxes] if boxes is not None else None,
            submitted_at=data.get("submitted_at", 0.0),
        )


@dataclass
class AnnotationTask:
    task_id: str
    kind: str
    record_id: str
    payload: dict
    state: str = "open"
    lease: Lease | None = None
    decision: Decision | None = None
    resolution: str | None = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "record_id": self.record_id,
            "payload": self.payload,
            "state": self.state,
            "lease": (
                {"annotator_id": self.lease.annotator_id, "expires_at": self.lease.expires_at}
                if self.lease
                else None
            ),
            "decision": self.decision.to_dict() if self.decision else None,
            "resolution": self.resolution,
        }


@dataclass
class FinalizeResult:
    status: str  # finalized | rejected | pending
    reason: str | None = None
    record: IntentionRecord | None = None
    added_boxes: int = 0


def _always_accept(sentence: str, category: str) -> CheckerVerdict:
    return CheckerVerdict(accepted=True, rationale="auto-accept (no checker backend configured)")


class AnnotationStore:
    """Queue state plus the manifest it feeds. Thread-safe; event-sourced.

    The clock is injectable so lease expiry is testable without sleeping.
    """

    def __init__(
        self,
        manifest: Manifest,
        checker: Checker | None = None,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock: Callable[[], float] = time.time,
        event_log_path: Union[str, Path, None] = None,
        ledger: PassRateLedger | None = None,
        show_primary_box: bool = True,
    ):
        self.manifest = manifest
        self.checker = checker or _always_accept
        self.lease_seconds = lease_seconds
        self.clock = clock
        self.ledger = ledger or PassRateLedger()
        self.show_primary_box = show_primary_box
        self.tasks: dict[str, AnnotationTask] = {}
        self.provenance: dict[str, dict] = {}
        self._records = manifest.by_id()
        self._lock = threading.RLock()
        self._event_log_path = Path(event_log_path) if event_log_path else None
        if self._event_log_path and self._event_log_path.exists():
            self._replay()

    # --- event log ---

    def _append_event(self, event: str, **payload) -> None:
        if self._event_log_path is None:
            return
        entry = {"event": event, "ts": self.clock(), **payload}
        with open(self._event_log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def _replay(self) -> None:
        with open(self._event_log_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                self._apply_event(entry)

    def _apply_event(self, entry: dict) -> None:
        event = entry["event"]
        if event == "task_created":
            task = AnnotationTask(
                task_id=entry["task_id"],
                kind=entry["kind"],
                record_id=entry["record_id"],
                payload=entry["payload"],
            )
            self.tasks[task.task_id] = task
        elif event == "task_leased":
            task = self.tasks[entry["task_id"]]
            task.state = "leased"
            task.lease = Lease(entry["annotator_id"], entry["expires_at"])
        elif event == "lease_expired":
            task = self.tasks[entry["task_id"]]
            task.state = "open"
            task.lease = None
        elif event == "decision_submitted":
            task = self.tasks[entry["task_id"]]
            task.state = "submitted"
            task.decision = Decision.from_dict(entry["decision"])
        elif event == "task_finalized":
            task = self.tasks[entry["task_id"]]
            task.state = "finalized"
            task.resolution = entry.get("resolution")
            self._apply_manifest_delta(task, entry)
        elif event == "task_rejected":
            task = self.tasks[entry["task_id"]]
            task.state = "rejected"
            task.resolution = entry.get("resolution")

    def _apply_manifest_delta(self, task: AnnotationTask, entry: dict) -> None:
        record = self._records.get(task.record_id)
        if record is None:
            return
        if entry.get("sentence"):
            record.query_text = entry["sentence"]
        for box_coords, _category in entry.get("added_boxes", []):
            record.alternative_bboxes.append(BBox.from_sequence(box_coords))

    # --- task creation ---

    def create_tasks(
        self, candidate_sets: Iterable[Union[CandidateSet, dict]] = ()
    ) -> list[AnnotationTask]:
        """Create sentence tasks from candidate sets and box tasks for records
        whose sentence is already finalized. Idempotent: existing tasks are
        kept. Accepts raw dicts as loaded from a candidates file; sets
        without exactly five sentences are skipped with a logged reason.
        """
        created = []
        with self._lock:
            for item in candidate_sets:
                if isinstance(item, CandidateSet):
                    cs = item
                else:
                    try:
                        cs = CandidateSet.from_dict(item)
                    except (KeyError, ValueError) as exc:
                        logger.warning("skipping candidate set: %s", exc)
                        continue
                record = self._records.get(cs.record_id)
                if record is None:
                    logger.warning(
                        "skipping candidate set for unknown record %s", cs.record_id
                    )
                    continue
                task_id = f"sentence:{cs.record_id}"
                if task_id in self.tasks:
                    continue
                task = AnnotationTask(
                    task_id=task_id,
                    kind="sentence_validation",
                    record_id=cs.record_id,
                    payload={
                        "candidates": list(cs.sentences),
                        "intention_type": cs.intention_type,
                        "image_ref": record.image_ref,
                        "image_size": {
                            "width": record.image_size.width,
                            "height": record.image_size.height,
                        },
                        "category": record.object_category,
                    },
                )
                self.tasks[task_id] = task
                created.append(task)
                self._append_event(
                    "task_created",
                    task_id=task_id,
                    kind=task.kind,
                    record_id=task.record_id,
                    payload=task.payload,
                )
            for task in list(self.tasks.values()):
                if task.kind == "sentence_validation" and task.state == "finalized":
                    created.extend(self._ensure_bbox_task(task.record_id))
        return created

    def _ensure_bbox_task(self, record_id: str) -> list[AnnotationTask]:
        task_id = f"bbox:{record_id}"
        if task_id in self.tasks:
            return []
        record = self._records[record_id]
        existing = [record.primary_bbox.to_list()] if self.show_primary_box else []
        existing += [b.to_list() for b in record.alternative_bboxes]
        task = AnnotationTask(
            task_id=task_id,
            kind="alt_bbox",
            record_id=record_id,
            payload={
                "sentence": record.query_text,
                "image_ref": record.image_ref,
                "image_size": {
                    "width": record.image_size.width,
                    "height": record.image_size.height,
                },
                "category": record.object_category,
                "intention_type": record.query_type,
                "existing_boxes": existing,
            },
        )
        self.tasks[task_id] = task
        self._append_event(
            "task_created",
            task_id=task_id,
            kind=task.kind,
            record_id=task.record_id,
            payload=task.payload,
        )
        return [task]

    # --- leasing ---

    def _sweep_expired(self, now: float) -> None:
        for task in self.tasks.values():
            if task.state == "leased" and task.lease and task.lease.expired(now):
                self._transition(task, "open")
                task.lease = None
                self._append_event("lease_expired", task_id=task.task_id)

    def _annotator_holds_record(self, annotator_id: str, record_id: str, now: float) -> bool:
        for task in self.tasks.values():
            if (
                task.state == "leased"
                and task.lease
                and not task.lease.expired(now)
                and task.lease.annotator_id == annotator_id
                and task.record_id == record_id
            ):
                return True
        return False

    def lease_task(self, annotator_id: str, kind: str | None = None) -> AnnotationTask | None:
        """Atomically lease the next open task, or None when the queue is drained."""
        if not annotator_id:
            raise ValueError("annotator_id must be nonempty")
        if kind is not None and kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {kind!r}")
        with self._lock:
            now = self.clock()
            self._sweep_expired(now)
            for task in sorted(self.tasks.values(), key=lambda t: t.task_id):
                if task.state != "open":
                    continue
                if kind is not None and task.kind != kind:
                    continue
                if self._annotator_holds_record(annotator_id, task.record_id, now):
                    continue
                self._transition(task, "leased")
                task.lease = Lease(annotator_id, now + self.lease_seconds)
                self._append_event(
                    "task_leased",
                    task_id=task.task_id,
                    annotator_id=annotator_id,
                    expires_at=task.lease.expires_at,
                )
                return task
            return None

    # --- decisions ---

    def _validate_decision(self, task: AnnotationTask, decision: Decision) -> None:
        if task.kind == "sentence_validation":
            if decision.none_valid:
                return
            if decision.chosen_index is None or not (
                0 <= decision.chosen_index < len(task.payload["candidates"])
            ):
                raise DecisionValidationError(
                    f"chosen_index must be in [0, {len(task.payload['candidates'])})"
                )
            if decision.edited_text is not None and not decision.edited_text.strip():
                raise DecisionValidationError("edited_text must be nonempty when present")
        else:
            if decision.boxes is None and not decision.none_valid:
                raise DecisionValidationError("box decision needs boxes or an explicit none_valid")
            size = self._records[task.record_id].image_size
            for box, category in decision.boxes or []:
                if not size.contains(box):
                    raise DecisionValidationError(
                        f"box {box.to_list()} exceeds image {size.width}x{size.height}"
                    )
                if not category:
                    raise DecisionValidationError("each alternative box needs a category")

    def submit_decision(self, task_id: str, decision: Decision) -> AnnotationTask:
        """Record a decision on a task leased by this annotator."""
        with self._lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise KeyError(f"no task {task_id!r}")
            now = self.clock()
            if task.state == "leased" and task.lease and task.lease.expired(now):
                self._transition(task, "open")
                task.lease = None
                self._append_event("lease_expired", task_id=task.task_id)
            if task.state != "leased" or task.lease is None:
                raise LeaseExpiredError(f"task {task_id} is not under an active lease")
            if task.lease.annotator_id != decision.annotator_id:
                raise ForbiddenError(
                    f"task {task_id} is leased by {task.lease.annotator_id!r}, "
                    f"not {decision.annotator_id!r}"
                )
            self._validate_decision(task, decision)
            decision.submitted_at = now
            self._transition(task, "submitted")
            task.decision = decision
            self._append_event(
                "decision_submitted", task_id=task_id, decision=decision.to_dict()
            )
            return task

    # --- finalization ---

    def finalize(self, record_id: str) -> FinalizeResult:
        """Gate the oldest submitted task of this record through checker + human.

        A sentence enters the manifest only when the human picked one AND
        the checker accepts it; each alternative box is gated the same way
        individually. Without a submitted decision the record is pending.
        """
        with self._lock:
            if record_id not in self._records:
                raise KeyError(f"no record {record_id!r}")
            submitted = [
                t
                for t in sorted(self.tasks.values(), key=lambda t: t.task_id)
                if t.record_id == record_id and t.state == "submitted"
            ]
            if not submitted:
                return FinalizeResult(status="pending", reason="no submitted decision")
            task = submitted[0]
            if task.kind == "sentence_validation":
                return self._finalize_sentence(task)
            return self._finalize_bbox(task)

    def _finalize_sentence(self, task: AnnotationTask) -> FinalizeResult:
        record = self._records[task.record_id]
        decision = task.decision
        intention_type = task.payload.get("intention_type", record.query_type)
        human_accepted = not decision.none_valid
        self.ledger.record_outcome(intention_type, "human", human_accepted)
        if not human_accepted:
            self._transition(task, "rejected")
            task.resolution = "human"
            self._append_event("task_rejected", task_id=task.task_id, resolution="human")
            return FinalizeResult(status="rejected", reason="human")
        sentence = decision.edited_text or task.payload["candidates"][decision.chosen_index]
        verdict = self.checker(sentence, record.object_category)
        self.ledger.record_outcome(intention_type, "checker", verdict.accepted)
        if not verdict.accepted:
            self._transition(task, "rejected")
            task.resolution = "checker"
            self._append_event("task_rejected", task_id=task.task_id, resolution="checker")
            return FinalizeResult(status="rejected", reason="checker")
        record.query_text = sentence
        self._transition(task, "finalized")
        task.resolution = "accepted"
        self.provenance[task.record_id] = {
            "candidates": task.payload["candidates"],
            "decision": decision.to_dict(),
            "checker": {"accepted": verdict.accepted, "rationale": verdict.rationale},
        }
        self._append_event(
            "task_finalized", task_id=task.task_id, resolution="accepted", sentence=sentence
        )
        self._ensure_bbox_task(task.record_id)
        return FinalizeResult(status="finalized", record=record)

    def _finalize_bbox(self, task: AnnotationTask) -> FinalizeResult:
        record = self._records[task.record_id]
        decision = task.decision
        intention_type = task.payload.get("intention_type", record.query_type)
        if decision.none_valid or not decision.boxes:
            self._transition(task, "finalized")
            task.resolution = "no_alternatives"
            self._append_event(
                "task_finalized", task_id=task.task_id, resolution="no_alternatives", added_boxes=[]
            )
            return FinalizeResult(status="finalized", record=record, added_boxes=0)
        accepted_boxes: list[tuple[BBox, str]] = []
        verdicts = []
        for box, category in decision.boxes:
            self.ledger.record_outcome(intention_type, "human", True)
            verdict = self.checker(record.query_text, category)
            self.ledger.record_outcome(intention_type, "checker", verdict.accepted)
            verdicts.append({"category": category, "accepted": verdict.accepted,
                             "rationale": verdict.rationale})
            if verdict.accepted:
                accepted_boxes.append((box, category))
        if not accepted_boxes:
            self._transition(task, "rejected")
            task.resolution = "checker"
            self._append_event("task_rejected", task_id=task.task_id, resolution="checker")
            return FinalizeResult(status="rejected", reason="checker")
        for box, _category in accepted_boxes:
            record.alternative_bboxes.append(box)
        self._transition(task, "finalized")
        task.resolution = "accepted"
        self.provenance.setdefault(task.record_id, {})["alt_boxes"] = verdicts
        self._append_event(
            "task_finalized",
            task_id=task.task_id,
            resolution="accepted",
            added_boxes=[[b.to_list(), c] for b, c in accepted_boxes],
        )
        return FinalizeResult(status="finalized", record=record, added_boxes=len(accepted_boxes))

    # --- misc ---

    def _transition(self, task: AnnotationTask, new_state: str) -> None:
        allowed = _ALLOWED_TRANSITIONS.get(task.state, set())
        if new_state not in allowed:
            raise StateTransitionError(f"{task.task_id}: {task.state} -> {new_state} not allowed")
        task.state = new_state

    def get_record(self, record_id: str) -> IntentionRecord:
        record = self._records.get(record_id)
        if record is None:
            raise KeyError(f"no record {record_id!r}")
        return record

    def get_task(self, task_id: str) -> AnnotationTask:
        task = self.tasks.get(task_id)
        if task is None:
            raise KeyError(f"no task {task_id!r}")
        return task

    def stats(self) -> dict:
        with self._lock:
            states: dict[str, int] = {}
            for task in self.tasks.values():
                states[task.state] = states.get(task.state, 0) + 1
            rates = {
                key: {
                    **counts,
                    "pass_rate": self.ledger.format_rate(*key.split("/", 1)),
                }
                for key, counts in self.ledger.to_dict().items()
            }
            return {"tasks_by_state": states, "ledger": rates}


def new_annotator_id() -> str:
    return f"annotator-{uuid.uuid4().hex[:8]}"
