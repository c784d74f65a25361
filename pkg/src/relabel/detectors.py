"""Per-task noisy-data judgments: model predictions versus human labels.

Each detector compares the current human labels of the train split against
one model prediction per item and emits a NoiseFlag where they disagree
(classification/tagging: exact mismatch; detection: IoU-matched boxes;
generation: token overlap or BLEU; ctr: score-label gap, flagged items are
dropped rather than relabeled). Items missing a prediction are a hard error:
silent skips would corrupt the loop bookkeeping.

Flags are emitted in dataset item order regardless of how items are
processed, so identical inputs always produce identical flag lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .dataset import (
    FORMAT_VERSION,
    Box,
    DatasetVersion,
    FormatError,
    Label,
    Span,
    ValidationError,
    dumps_canonical,
    label_from_json,
    label_to_json,
)
from .metrics import common_token_count, iou, sentence_bleu
from .tokens import tokenize


@dataclass(frozen=True)
class DetectorConfig:
    task: str
    iou_threshold: float = 0.5
    generation_mode: str = "common-token"
    bleu_threshold: float = 0.3
    ctr_threshold: float = 0.9
    entity_class_filter: str | None = None

    def __post_init__(self) -> None:
        for name in ("iou_threshold", "bleu_threshold", "ctr_threshold"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValidationError(f"{name} must be in (0,1), got {value}")
        if self.generation_mode not in ("common-token", "bleu"):
            raise ValidationError(f"unknown generation_mode: {self.generation_mode!r}")
        if self.entity_class_filter is not None and self.task != "tagging":
            raise ValidationError("entity_class_filter is only valid for tagging")

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "iou_threshold": self.iou_threshold,
            "generation_mode": self.generation_mode,
            "bleu_threshold": self.bleu_threshold,
            "ctr_threshold": self.ctr_threshold,
            "entity_class_filter": self.entity_class_filter,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DetectorConfig":
        return cls(**obj)


@dataclass(frozen=True)
class Prediction:
    """One model output for one item for one round."""

    item_id: str
    value: Label
    score: float | None
    model_id: str
    round: int


@dataclass(frozen=True)
class NoiseFlag:
    """A detector's verdict that one item is noisy."""

    item_id: str
    round: int
    reason: dict
    severity: float
    action: str = "relabel"


def _check_task(version: DatasetVersion, expected: str) -> None:
    if version.task != expected:
        raise ValidationError(
            f"detector for {expected} got a {version.task} dataset"
        )


def _prediction_map(
    version: DatasetVersion, preds: Sequence[Prediction]
) -> tuple[dict[str, Prediction], int]:
    """Index predictions by item, enforcing exactly one per train item."""
    by_item: dict[str, Prediction] = {}
    rounds = set()
    for pred in preds:
        if pred.item_id in by_item:
            raise ValidationError(f"duplicate prediction for item {pred.item_id!r}")
        by_item[pred.item_id] = pred
        rounds.add(pred.round)
    for item in version.train_items():
        if item.id not in by_item:
            raise ValidationError(f"missing prediction for item {item.id!r}")
    if len(rounds) > 1:
        raise ValidationError(f"predictions span multiple rounds: {sorted(rounds)}")
    round = rounds.pop() if rounds else version.round + 1
    return by_item, round


def detect_classification(
    version: DatasetVersion, preds: Sequence[Prediction]
) -> list[NoiseFlag]:
    """Flag exactly the train items whose predicted class differs."""
    _check_task(version, "classification")
    by_item, round = _prediction_map(version, preds)
    flags = []
    for item in version.train_items():
        predicted = by_item[item.id].value
        if predicted != item.label:
            flags.append(
                NoiseFlag(
                    item_id=item.id,
                    round=round,
                    reason={
                        "kind": "label-mismatch",
                        "predicted": predicted,
                        "human": item.label,
                    },
                    severity=1.0,
                )
            )
    return flags


def tagging_classes(version: DatasetVersion, preds: Sequence[Prediction]) -> list[str]:
    """Entity classes present in the gold labels or predicted spans."""
    classes = set()
    for item in version.items:
        classes.update(span.entity_class for span in item.label)
    for pred in preds:
        classes.update(span.entity_class for span in pred.value)
    return sorted(classes)


def detect_tagging(
    version: DatasetVersion, preds: Sequence[Prediction], entity_class: str
) -> list[NoiseFlag]:
    """Treat one entity class as a classification problem over span sets."""
    _check_task(version, "tagging")
    by_item, round = _prediction_map(version, preds)
    if entity_class not in tagging_classes(version, preds):
        raise ValidationError(f"unknown entity_class: {entity_class!r}")
    flags = []
    for item in version.train_items():
        gold = {s for s in item.label if s.entity_class == entity_class}
        predicted = {s for s in by_item[item.id].value if s.entity_class == entity_class}
        if gold != predicted:
            flags.append(
                NoiseFlag(
                    item_id=item.id,
                    round=round,
                    reason={
                        "kind": "span-mismatch",
                        "entity_class": entity_class,
                        "missing_spans": _spans_json(gold - predicted),
                        "spurious_spans": _spans_json(predicted - gold),
                    },
                    severity=1.0,
                )
            )
    return flags


def _spans_json(spans: Iterable[Span]) -> list[dict]:
    return [
        {"start": s.start, "end": s.end, "entity_class": s.entity_class}
        for s in sorted(spans)
    ]


def _greedy_match(
    human: Sequence[Box], model: Sequence[Box]
) -> tuple[list[tuple[int, int, float]], list[int], list[int]]:
    """Per-class greedy IoU matching; each box is matched at most once.

    Candidate pairs must overlap (IoU > 0) and share an object class; ties
    break on lower human index, then lower model index.
    """
    pairs = []
    for hi, hb in enumerate(human):
        for mi, mb in enumerate(model):
            if hb.object_class != mb.object_class:
                continue
            overlap = iou(hb, mb)
            if overlap > 0.0:
                pairs.append((overlap, hi, mi))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_h: set[int] = set()
    used_m: set[int] = set()
    matched = []
    for overlap, hi, mi in pairs:
        if hi in used_h or mi in used_m:
            continue
        used_h.add(hi)
        used_m.add(mi)
        matched.append((hi, mi, overlap))
    unmatched_h = [i for i in range(len(human)) if i not in used_h]
    unmatched_m = [i for i in range(len(model)) if i not in used_m]
    return matched, unmatched_h, unmatched_m


def detect_boxes(
    version: DatasetVersion, preds: Sequence[Prediction], cfg: DetectorConfig
) -> list[NoiseFlag]:
    """Flag items whose model boxes are far from the human boxes.

    An item is noisy when any human box has no model counterpart, any model
    box has no human counterpart, or a matched pair falls below the IoU
    threshold. Severity is 1 when a box went unmatched, otherwise one minus
    the worst matched IoU.
    """
    _check_task(version, "detection")
    by_item, round = _prediction_map(version, preds)
    flags = []
    for item in version.train_items():
        model_boxes = by_item[item.id].value
        matched, unmatched_h, unmatched_m = _greedy_match(item.label, model_boxes)
        low_pairs = [(hi, mi, ov) for hi, mi, ov in matched if ov < cfg.iou_threshold]
        if not (unmatched_h or unmatched_m or low_pairs):
            continue
        if unmatched_h or unmatched_m:
            severity = 1.0
        else:
            severity = 1.0 - min(ov for _, _, ov in matched)
        flags.append(
            NoiseFlag(
                item_id=item.id,
                round=round,
                reason={
                    "kind": "box-mismatch",
                    "unmatched_human": unmatched_h,
                    "unmatched_model": unmatched_m,
                    "low_iou_pairs": [[hi, mi, ov] for hi, mi, ov in low_pairs],
                },
                severity=severity,
            )
        )
    return flags


def detect_generation(
    version: DatasetVersion, preds: Sequence[Prediction], cfg: DetectorConfig
) -> list[NoiseFlag]:
    """Flag items whose model output is far from the labeled output sentence.

    Mode ``common-token`` (default) flags only when the two share no token at
    all; mode ``bleu`` flags when sentence BLEU falls below the threshold.
    """
    _check_task(version, "generation")
    by_item, round = _prediction_map(version, preds)
    flags = []
    for item in version.train_items():
        model_tokens = tokenize(by_item[item.id].value, version.tokenizer)
        human_tokens = tokenize(item.label, version.tokenizer)
        if cfg.generation_mode == "common-token":
            noisy = common_token_count(model_tokens, human_tokens) == 0
            similarity = 0.0 if noisy else 1.0
            value = float(common_token_count(model_tokens, human_tokens))
        else:
            if not human_tokens:
                noisy, similarity = True, 0.0
            else:
                similarity = sentence_bleu(model_tokens, human_tokens)
                noisy = similarity < cfg.bleu_threshold
            value = similarity
        if noisy:
            flags.append(
                NoiseFlag(
                    item_id=item.id,
                    round=round,
                    reason={
                        "kind": "generation-mismatch",
                        "metric": cfg.generation_mode,
                        "value": value,
                    },
                    severity=1.0 - similarity,
                )
            )
    return flags


def detect_ctr(
    version: DatasetVersion, preds: Sequence[Prediction], cfg: DetectorConfig
) -> list[NoiseFlag]:
    """Flag train items whose predicted score is far from the 0/1 label.

    Flagged ctr items are dropped from the next version, not relabeled.
    """
    _check_task(version, "ctr")
    by_item, round = _prediction_map(version, preds)
    flags = []
    for item in version.train_items():
        score = by_item[item.id].score
        if score is None:
            raise ValidationError(f"ctr prediction for {item.id!r} has no score")
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"ctr score for {item.id!r} outside [0,1]: {score}")
        gap = abs(score - item.label)
        if gap > cfg.ctr_threshold:
            flags.append(
                NoiseFlag(
                    item_id=item.id,
                    round=round,
                    reason={
                        "kind": "ctr-disagreement",
                        "score": score,
                        "label": item.label,
                        "gap": gap,
                    },
                    severity=gap,
                    action="drop",
                )
            )
    return flags


def detect(
    version: DatasetVersion, preds: Sequence[Prediction], cfg: DetectorConfig
) -> list[NoiseFlag]:
    """Dispatch to the task's detector.

    For tagging without an entity_class_filter, every entity class is scanned
    and the per-class flags are unioned (still in dataset item order).
    """
    if cfg.task != version.task:
        raise ValidationError(
            f"config task {cfg.task!r} does not match dataset task {version.task!r}"
        )
    if version.task == "classification":
        return detect_classification(version, preds)
    if version.task == "tagging":
        if cfg.entity_class_filter is not None:
            return detect_tagging(version, preds, cfg.entity_class_filter)
        flags = []
        for entity_class in tagging_classes(version, preds):
            flags.extend(detect_tagging(version, preds, entity_class))
        order = {item.id: i for i, item in enumerate(version.items)}
        flags.sort(key=lambda f: (order[f.item_id], f.reason["entity_class"]))
        return flags
    if version.task == "detection":
        return detect_boxes(version, preds, cfg)
    if version.task == "generation":
        return detect_generation(version, preds, cfg)
    if version.task == "ctr":
        return detect_ctr(version, preds, cfg)
    raise ValidationError(f"unknown task: {version.task!r}")


# ---------------------------------------------------------------------------
# Wire formats


def flag_to_json(flag: NoiseFlag) -> dict:
    return {
        "format": FORMAT_VERSION,
        "item_id": flag.item_id,
        "round": flag.round,
        "reason": flag.reason,
        "severity": flag.severity,
        "action": flag.action,
    }


def flag_from_json(obj: dict) -> NoiseFlag:
    try:
        return NoiseFlag(
            item_id=str(obj["item_id"]),
            round=int(obj["round"]),
            reason=dict(obj["reason"]),
            severity=float(obj["severity"]),
            action=str(obj["action"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed noise flag: {exc}") from exc


def save_flags(flags: Sequence[NoiseFlag], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for flag in flags:
            fh.write(dumps_canonical(flag_to_json(flag)) + "\n")


def load_flags(path: str | Path) -> list[NoiseFlag]:
    flags = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            flags.append(flag_from_json(obj))
    return flags


def prediction_to_json(task: str, pred: Prediction) -> dict:
    return {
        "format": FORMAT_VERSION,
        "item_id": pred.item_id,
        "prediction": label_to_json(task, pred.value),
        "score": pred.score,
        "model_id": pred.model_id,
        "round": pred.round,
    }


def prediction_from_json(task: str, obj: dict) -> Prediction:
    try:
        score = obj.get("score")
        return Prediction(
            item_id=str(obj["item_id"]),
            value=label_from_json(task, obj["prediction"]),
            score=None if score is None else float(score),
            model_id=str(obj["model_id"]),
            round=int(obj["round"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed prediction record: {exc}") from exc


def save_predictions(task: str, preds: Sequence[Prediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pred in preds:
            fh.write(dumps_canonical(prediction_to_json(task, pred)) + "\n")


def load_predictions(task: str, path: str | Path) -> list[Prediction]:
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            preds.append(prediction_from_json(task, obj))
    return preds
