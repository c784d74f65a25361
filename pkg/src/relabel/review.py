"""Review queue records: tasks offered to annotators and their decisions.

A ReviewTask shows the annotator both references (the model prediction and
the previous human label). A ReviewDecision records the verdict; before it
can be merged into a new dataset version it is resolved to a concrete label
(``resolved_label``) using those references.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .dataset import (
    FORMAT_VERSION,
    DatasetVersion,
    FormatError,
    Label,
    ValidationError,
    label_from_json,
    label_to_json,
    validate_label,
)
from .metrics import similarity_sort_key

CHOICES = ("keep_previous", "accept_model", "new_label")

# Generation and tagging reviews default to a two-option choice question;
# classification and detection default to open relabeling.
DEFAULT_MODE_BY_TASK = {
    "classification": "open",
    "tagging": "choice",
    "detection": "open",
    "generation": "choice",
    "ctr": "open",
}


@dataclass(frozen=True)
class ReviewTask:
    item_id: str
    round: int
    payload: object
    previous_human_label: Label
    model_reference: Label
    reason: dict
    mode: str
    queue_position: int


@dataclass(frozen=True)
class ReviewDecision:
    item_id: str
    round: int
    annotator_id: str
    choice: str
    new_label: Label | None
    submitted_at: float
    resolved_label: Label | None = None


def build_queue(
    version: DatasetVersion,
    flags: Sequence,
    predictions_by_item: dict[str, Label],
    round: int,
    bands: int = 16,
    seed: int = 0,
) -> list[ReviewTask]:
    """Build the sorted review queue for one round of flags.

    One task per flagged item (an item flagged for several entity classes is
    queued once, keeping its highest-severity reason). Drop-action flags (ctr)
    bypass the queue entirely. Order: similarity groups first so near-duplicate
    texts are read together, severity descending within a group.
    """
    item_map = version.item_map()
    best: dict[str, object] = {}
    for flag in flags:
        if flag.action == "drop":
            continue
        current = best.get(flag.item_id)
        if current is None or flag.severity > current.severity:
            best[flag.item_id] = flag

    def payload_text(payload: object) -> str:
        if isinstance(payload, str):
            return payload
        return " ".join(f"{k}:{payload[k]}" for k in sorted(payload))

    mode = DEFAULT_MODE_BY_TASK[version.task]
    entries = []
    for item_id, flag in best.items():
        item = item_map[item_id]
        sim_key = similarity_sort_key(payload_text(item.payload), bands=bands, seed=seed)
        entries.append((sim_key[0], -flag.severity, sim_key[1], item_id, item, flag))
    entries.sort(key=lambda e: e[:4])

    queue = []
    for position, (_, _, _, item_id, item, flag) in enumerate(entries):
        queue.append(
            ReviewTask(
                item_id=item_id,
                round=round,
                payload=item.payload,
                previous_human_label=item.label,
                model_reference=predictions_by_item[item_id],
                reason=flag.reason,
                mode=mode,
                queue_position=position,
            )
        )
    return queue


def resolve_decision_label(task: ReviewTask, decision: ReviewDecision) -> Label:
    if decision.choice == "keep_previous":
        return task.previous_human_label
    if decision.choice == "accept_model":
        return task.model_reference
    if decision.choice == "new_label":
        if decision.new_label is None:
            raise ValidationError(f"decision for {decision.item_id}: new_label missing")
        return decision.new_label
    raise ValidationError(f"unknown choice: {decision.choice!r}")


def resolve_decisions(
    submissions: Sequence[ReviewDecision], queue: Sequence[ReviewTask]
) -> list[ReviewDecision]:
    """Collapse the append-only submission log to one decision per item.

    Latest ``submitted_at`` wins; exact ties go to the lexicographically
    greatest annotator_id. Undecided items simply do not appear. Output is in
    queue order. Pure function of its inputs.
    """
    tasks = {task.item_id: task for task in queue}
    winners: dict[str, ReviewDecision] = {}
    for decision in submissions:
        if decision.item_id not in tasks:
            raise ValidationError(f"decision for unqueued item {decision.item_id!r}")
        incumbent = winners.get(decision.item_id)
        if incumbent is None or (decision.submitted_at, decision.annotator_id) >= (
            incumbent.submitted_at,
            incumbent.annotator_id,
        ):
            winners[decision.item_id] = decision
    resolved = []
    for task in queue:
        decision = winners.get(task.item_id)
        if decision is None:
            continue
        resolved.append(
            replace(decision, resolved_label=resolve_decision_label(task, decision))
        )
    return resolved


# ---------------------------------------------------------------------------
# Wire formats


def task_to_json(task_kind: str, task: ReviewTask) -> dict:
    return {
        "format": FORMAT_VERSION,
        "item_id": task.item_id,
        "round": task.round,
        "payload": task.payload,
        "previous_human_label": label_to_json(task_kind, task.previous_human_label),
        "model_reference": label_to_json(task_kind, task.model_reference),
        "reason": task.reason,
        "mode": task.mode,
        "queue_position": task.queue_position,
    }


def task_from_json(task_kind: str, obj: dict) -> ReviewTask:
    try:
        return ReviewTask(
            item_id=str(obj["item_id"]),
            round=int(obj["round"]),
            payload=obj["payload"],
            previous_human_label=label_from_json(task_kind, obj["previous_human_label"]),
            model_reference=label_from_json(task_kind, obj["model_reference"]),
            reason=dict(obj["reason"]),
            mode=str(obj["mode"]),
            queue_position=int(obj["queue_position"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed review task: {exc}") from exc


def decision_to_json(task_kind: str, decision: ReviewDecision) -> dict:
    def enc(label):
        return None if label is None else label_to_json(task_kind, label)

    return {
        "format": FORMAT_VERSION,
        "item_id": decision.item_id,
        "round": decision.round,
        "annotator_id": decision.annotator_id,
        "choice": decision.choice,
        "new_label": enc(decision.new_label),
        "resolved_label": enc(decision.resolved_label),
        "submitted_at": decision.submitted_at,
    }


def decision_from_json(task_kind: str, obj: dict) -> ReviewDecision:
    def dec(value):
        return None if value is None else label_from_json(task_kind, value)

    try:
        return ReviewDecision(
            item_id=str(obj["item_id"]),
            round=int(obj["round"]),
            annotator_id=str(obj["annotator_id"]),
            choice=str(obj["choice"]),
            new_label=dec(obj.get("new_label")),
            submitted_at=float(obj["submitted_at"]),
            resolved_label=dec(obj.get("resolved_label")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed review decision: {exc}") from exc


def validate_decision(
    task_kind: str, decision: ReviewDecision, task: ReviewTask, tokenizer: str
) -> None:
    """Check a submitted decision against its task before accepting it."""
    if decision.choice not in CHOICES:
        raise ValidationError(f"unknown choice: {decision.choice!r}")
    if decision.choice == "new_label":
        if task.mode != "open":
            raise ValidationError("new_label is only accepted in open mode")
        if decision.new_label is None:
            raise ValidationError("choice new_label requires a label")
        validate_label(task_kind, decision.new_label, task.payload, tokenizer)
    elif decision.new_label is not None:
        raise ValidationError(f"choice {decision.choice} must not carry a label")
