"""Task-generic item/label model, versioned dataset storage and content hashing.

A dataset version is an immutable snapshot of labeled items with lineage to
its parent version. On disk a version is one directory holding
``manifest.json`` and ``items.jsonl``; the manifest pins the content hash so
any corruption or out-of-band edit is detected on load.

Canonical serialization (used for both storage and hashing): items sorted by
id, record fields emitted in a fixed key order, UTF-8, no insignificant
whitespace, reals rendered in shortest round-trip decimal form. This makes
content hashes bit-identical across platforms.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .tokens import DEFAULT_TOKENIZER, tokenize

if TYPE_CHECKING:  # pragma: no cover
    from .review import ReviewDecision

FORMAT_VERSION = 1

TASKS = ("classification", "tagging", "detection", "generation", "ctr")
SPLITS = ("train", "dev")
LABEL_SOURCES = ("human", "human-relabel", "import")

MANIFEST_NAME = "manifest.json"
ITEMS_NAME = "items.jsonl"


class DatasetError(Exception):
    """Base class for dataset storage and validation failures."""


class FormatError(DatasetError):
    """Malformed file, unreadable record, or content-hash mismatch."""


class ValidationError(DatasetError):
    """Structurally readable data that violates a dataset invariant."""


@dataclass(frozen=True, order=True)
class Span:
    """Token-level span ``[start, end)`` tagged with an entity class."""

    start: int
    end: int
    entity_class: str


@dataclass(frozen=True, order=True)
class Box:
    """Axis-aligned box in pixel coordinates tagged with an object class."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    object_class: str


# Label is task-shaped:
#   classification -> str, tagging -> tuple[Span, ...],
#   detection -> tuple[Box, ...], generation -> str, ctr -> int
Label = object


@dataclass(frozen=True)
class HistoryEntry:
    round: int
    source: str
    label: Label


@dataclass(frozen=True)
class Item:
    """One labeled example. ``label`` always equals the last history entry."""

    id: str
    payload: object
    label: Label
    label_history: tuple[HistoryEntry, ...]
    split: str


@dataclass(frozen=True)
class DatasetVersion:
    version_id: str
    parent_version: str | None
    task: str
    items: tuple[Item, ...]
    content_hash: str
    round: int
    tokenizer: str = DEFAULT_TOKENIZER

    def item_map(self) -> dict[str, Item]:
        return {item.id: item for item in self.items}

    def train_items(self) -> list[Item]:
        return [item for item in self.items if item.split == "train"]

    def dev_items(self) -> list[Item]:
        return [item for item in self.items if item.split == "dev"]


@dataclass(frozen=True)
class DiffEntry:
    """One changed item between two versions; ``dropped`` means removed."""

    item_id: str
    old_label: Label
    new_label: Label | None
    dropped: bool = False


# ---------------------------------------------------------------------------
# Label serialization and validation


def label_to_json(task: str, label: Label) -> object:
    if task in ("classification", "generation"):
        return label
    if task == "tagging":
        return [
            {"start": s.start, "end": s.end, "entity_class": s.entity_class}
            for s in sorted(label)
        ]
    if task == "detection":
        return [
            {
                "x_min": b.x_min,
                "y_min": b.y_min,
                "x_max": b.x_max,
                "y_max": b.y_max,
                "object_class": b.object_class,
            }
            for b in sorted(label)
        ]
    if task == "ctr":
        return label
    raise ValidationError(f"unknown task: {task!r}")


def label_from_json(task: str, value: object) -> Label:
    try:
        if task in ("classification", "generation"):
            if not isinstance(value, str):
                raise TypeError("expected string label")
            return value
        if task == "tagging":
            return tuple(
                sorted(
                    Span(int(s["start"]), int(s["end"]), str(s["entity_class"]))
                    for s in value
                )
            )
        if task == "detection":
            return tuple(
                sorted(
                    Box(
                        float(b["x_min"]),
                        float(b["y_min"]),
                        float(b["x_max"]),
                        float(b["y_max"]),
                        str(b["object_class"]),
                    )
                    for b in value
                )
            )
        if task == "ctr":
            if value not in (0, 1) or isinstance(value, bool):
                raise TypeError("ctr label must be 0 or 1")
            return int(value)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed {task} label: {exc}") from exc
    raise ValidationError(f"unknown task: {task!r}")


def validate_label(task: str, label: Label, payload: object, tokenizer: str) -> None:
    """Raise ValidationError unless ``label`` satisfies the task invariants."""
    if task == "classification":
        if not isinstance(label, str) or not label:
            raise ValidationError("classification label must be a non-empty string")
    elif task == "generation":
        if not isinstance(label, str):
            raise ValidationError("generation label must be a string")
    elif task == "tagging":
        token_count = len(tokenize(payload, tokenizer))
        per_class: dict[str, list[Span]] = {}
        for span in label:
            if not (0 <= span.start < span.end <= token_count):
                raise ValidationError(
                    f"span ({span.start},{span.end}) out of bounds for "
                    f"{token_count} tokens"
                )
            per_class.setdefault(span.entity_class, []).append(span)
        for cls, spans in per_class.items():
            spans.sort()
            for prev, cur in zip(spans, spans[1:]):
                if cur.start < prev.end:
                    raise ValidationError(f"overlapping {cls} spans: {prev} and {cur}")
    elif task == "detection":
        for box in label:
            if not (box.x_min < box.x_max and box.y_min < box.y_max):
                raise ValidationError(f"box has non-positive area: {box}")
    elif task == "ctr":
        if label not in (0, 1) or isinstance(label, bool):
            raise ValidationError("ctr label must be exactly 0 or 1")
    else:
        raise ValidationError(f"unknown task: {task!r}")


def _validate_payload(task: str, payload: object) -> None:
    if task == "ctr":
        if not isinstance(payload, dict) or not all(
            isinstance(k, str) and isinstance(v, (int, float)) for k, v in payload.items()
        ):
            raise ValidationError("ctr payload must map feature names to numbers")
    elif not isinstance(payload, str):
        raise ValidationError(f"{task} payload must be a string")


def validate_item(task: str, item: Item, tokenizer: str) -> None:
    if not item.id or not isinstance(item.id, str):
        raise ValidationError("item id must be a non-empty string")
    if item.split not in SPLITS:
        raise ValidationError(f"item {item.id}: bad split {item.split!r}")
    _validate_payload(task, item.payload)
    if not item.label_history:
        raise ValidationError(f"item {item.id}: empty label_history")
    rounds = [entry.round for entry in item.label_history]
    if rounds != sorted(rounds) or len(set(rounds)) != len(rounds):
        raise ValidationError(f"item {item.id}: label_history rounds not increasing")
    for entry in item.label_history:
        if entry.source not in LABEL_SOURCES:
            raise ValidationError(f"item {item.id}: bad label source {entry.source!r}")
        validate_label(task, entry.label, item.payload, tokenizer)
    if item.label != item.label_history[-1].label:
        raise ValidationError(f"item {item.id}: label differs from last history entry")
    validate_label(task, item.label, item.payload, tokenizer)


# ---------------------------------------------------------------------------
# Canonical serialization and hashing


def dumps_canonical(obj: object) -> str:
    """JSON with no insignificant whitespace; dict insertion order is kept."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _payload_to_json(task: str, payload: object) -> object:
    if task == "ctr":
        return {k: payload[k] for k in sorted(payload)}
    return payload


def item_to_json(task: str, item: Item) -> dict:
    return {
        "format": FORMAT_VERSION,
        "id": item.id,
        "payload": _payload_to_json(task, item.payload),
        "label": label_to_json(task, item.label),
        "label_history": [
            {"round": e.round, "source": e.source, "label": label_to_json(task, e.label)}
            for e in item.label_history
        ],
        "split": item.split,
    }


def item_from_json(task: str, obj: dict) -> Item:
    try:
        history = tuple(
            HistoryEntry(int(e["round"]), str(e["source"]), label_from_json(task, e["label"]))
            for e in obj["label_history"]
        )
        payload = obj["payload"]
        if task == "ctr":
            payload = {str(k): float(v) for k, v in payload.items()}
        return Item(
            id=str(obj["id"]),
            payload=payload,
            label=label_from_json(task, obj["label"]),
            label_history=history,
            split=str(obj["split"]),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f"malformed item record: {exc}") from exc


def content_hash(version: DatasetVersion) -> str:
    """SHA-256 hex digest of the canonical item stream of ``version``."""
    return _hash_items(version.task, version.items)


def _hash_items(task: str, items: Sequence[Item]) -> str:
    hasher = hashlib.sha256()
    for item in sorted(items, key=lambda it: it.id):
        line = dumps_canonical(item_to_json(task, item)) + "\n"
        hasher.update(line.encode("utf-8"))
    return hasher.hexdigest()


def make_version(
    version_id: str,
    task: str,
    items: Iterable[Item],
    round: int = 0,
    parent_version: str | None = None,
    tokenizer: str = DEFAULT_TOKENIZER,
) -> DatasetVersion:
    """Validate items and assemble a hashed, immutable DatasetVersion."""
    if task not in TASKS:
        raise ValidationError(f"unknown task: {task!r}")
    if round == 0 and parent_version is not None:
        raise ValidationError("round-0 version cannot have a parent")
    if round > 0 and parent_version is None:
        raise ValidationError(f"round-{round} version requires a parent")
    items = tuple(items)
    seen: set[str] = set()
    for item in items:
        if item.id in seen:
            raise ValidationError(f"duplicate item id: {item.id!r}")
        seen.add(item.id)
        validate_item(task, item, tokenizer)
    return DatasetVersion(
        version_id=version_id,
        parent_version=parent_version,
        task=task,
        items=items,
        content_hash=_hash_items(task, items),
        round=round,
        tokenizer=tokenizer,
    )


# ---------------------------------------------------------------------------
# Storage


def _atomic_write(path: Path, data: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_version(version: DatasetVersion, directory: str | Path) -> Path:
    """Write ``manifest.json`` and ``items.jsonl`` (canonical form) atomically."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        dumps_canonical(item_to_json(version.task, item))
        for item in sorted(version.items, key=lambda it: it.id)
    ]
    manifest = {
        "format": FORMAT_VERSION,
        "version_id": version.version_id,
        "parent_version": version.parent_version,
        "task": version.task,
        "round": version.round,
        "item_count": len(version.items),
        "content_hash": version.content_hash,
        "tokenizer": version.tokenizer,
    }
    _atomic_write(directory / ITEMS_NAME, "".join(line + "\n" for line in lines))
    _atomic_write(directory / MANIFEST_NAME, dumps_canonical(manifest) + "\n")
    return directory


def load_dataset(path: str | Path) -> DatasetVersion:
    """Load and fully validate one version directory.

    The recomputed content hash must equal the manifest hash.
    """
    directory = Path(path)
    manifest_path = directory / MANIFEST_NAME
    items_path = directory / ITEMS_NAME
    if not manifest_path.is_file() or not items_path.is_file():
        raise FormatError(f"{directory}: not a dataset version directory")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    for key in ("version_id", "task", "round", "item_count", "content_hash"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    task = manifest["task"]
    if task not in TASKS:
        raise FormatError(f"{manifest_path}: unknown task {task!r}")
    tokenizer = manifest.get("tokenizer", DEFAULT_TOKENIZER)

    items: list[Item] = []
    with open(items_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{items_path}:{lineno}: invalid JSON: {exc}") from exc
            items.append(item_from_json(task, obj))

    if len(items) != manifest["item_count"]:
        raise FormatError(
            f"{items_path}: item count {len(items)} does not match manifest "
            f"{manifest['item_count']}"
        )
    version = make_version(
        version_id=manifest["version_id"],
        task=task,
        items=items,
        round=manifest["round"],
        parent_version=manifest.get("parent_version"),
        tokenizer=tokenizer,
    )
    if version.content_hash != manifest["content_hash"]:
        raise FormatError(
            f"{directory}: content hash mismatch: recomputed "
            f"{version.content_hash}, manifest has {manifest['content_hash']}"
        )
    return version


# ---------------------------------------------------------------------------
# Derivation and diffing


def derive_version(
    parent: DatasetVersion,
    decisions: Sequence["ReviewDecision"],
    drops: Sequence[str] = (),
) -> DatasetVersion:
    """Produce the child version after applying relabel decisions and drops.

    Every decision must carry a resolved label (``resolved_label``); applying
    one appends a ``human-relabel`` entry to the item's history even when the
    label value is unchanged. Drops are permitted only for the ctr task.
    Dev-split items are frozen and may be neither relabeled nor dropped.
    """
    item_map = parent.item_map()
    by_item: dict[str, object] = {}
    for decision in decisions:
        if decision.item_id not in item_map:
            raise ValidationError(f"decision for unknown item id: {decision.item_id!r}")
        if decision.item_id in by_item:
            raise ValidationError(f"two decisions for item {decision.item_id!r}")
        if decision.resolved_label is None:
            raise ValidationError(f"unresolved decision for item {decision.item_id!r}")
        if item_map[decision.item_id].split == "dev":
            raise ValidationError(f"decision targets frozen dev item {decision.item_id!r}")
        by_item[decision.item_id] = decision.resolved_label

    drop_set = set(drops)
    if drop_set and parent.task != "ctr":
        raise ValidationError(f"drops are only permitted for ctr, not {parent.task}")
    for item_id in drop_set:
        if item_id not in item_map:
            raise ValidationError(f"drop of unknown item id: {item_id!r}")
        if item_map[item_id].split == "dev":
            raise ValidationError(f"drop targets frozen dev item {item_id!r}")
        if item_id in by_item:
            raise ValidationError(f"item {item_id!r} both relabeled and dropped")

    child_round = parent.round + 1
    children: list[Item] = []
    for item in parent.items:
        if item.id in drop_set:
            continue
        if item.id in by_item:
            new_label = by_item[item.id]
            entry = HistoryEntry(round=child_round, source="human-relabel", label=new_label)
            children.append(
                replace(item, label=new_label, label_history=item.label_history + (entry,))
            )
        else:
            children.append(item)
    return make_version(
        version_id=f"v{child_round}",
        task=parent.task,
        items=children,
        round=child_round,
        parent_version=parent.version_id,
        tokenizer=parent.tokenizer,
    )


def diff_versions(a: DatasetVersion, b: DatasetVersion) -> list[DiffEntry]:
    """Changed or dropped items going from ``a`` to ``b``; empty if identical."""
    if a.task != b.task:
        raise ValidationError("cannot diff versions of different tasks")
    a_ids = {item.id for item in a.items}
    b_map = b.item_map()
    if not set(b_map) <= a_ids:
        raise ValidationError("unrelated versions: second version has unknown items")
    diff: list[DiffEntry] = []
    for item in a.items:
        other = b_map.get(item.id)
        if other is None:
            diff.append(DiffEntry(item.id, item.label, None, dropped=True))
        elif other.label != item.label:
            diff.append(DiffEntry(item.id, item.label, other.label))
    return diff
