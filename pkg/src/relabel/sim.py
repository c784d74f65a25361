"""Synthetic datasets, controlled label noise, simulated annotators.

This is the verification engine for the loop: generate a dataset whose true
labels are known, corrupt a controlled fraction of the train split, run the
actual pipeline, and score how well the detectors recover the corrupted
items. Nothing here aims for linguistic or visual realism; only the loop's
mechanics are under test.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .baseline import TrainConfig
from .dataset import (
    Box,
    DatasetVersion,
    HistoryEntry,
    Item,
    Label,
    Span,
    ValidationError,
    make_version,
)
from .detectors import DetectorConfig, NoiseFlag, Prediction
from .loop import LoopEngine
from .metrics import PRF1
from .review import ReviewDecision, ReviewTask

NOISE_KINDS = {
    "classification": "uniform-class-flip",
    "tagging": "span-drop",
    "detection": "box-jitter",
    "generation": "generation-replace",
    "ctr": "ctr-flip",
}


@dataclass(frozen=True)
class NoiseSpec:
    rate: float
    kind: str
    seed: int
    max_shift: float = 40.0  # box-jitter only

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate < 1.0:
            raise ValidationError(f"noise rate must be in [0,1): {self.rate}")
        if self.kind not in NOISE_KINDS.values():
            raise ValidationError(f"unknown noise kind: {self.kind!r}")


class SimAnnotator:
    """Annotator stand-in: with probability ``accuracy`` emits the true label
    (choosing accept_model or new_label as needed), otherwise keeps the
    previous noisy label. Deterministic for a fixed seed."""

    def __init__(self, accuracy: float, seed: int):
        if not 0.0 <= accuracy <= 1.0:
            raise ValidationError(f"accuracy must be in [0,1]: {accuracy}")
        self.accuracy = accuracy
        self.seed = seed
        self._rng = random.Random(seed)
        self._clock = 0

    def decide(self, task: ReviewTask, true_label: Label) -> ReviewDecision:
        self._clock += 1
        if self._rng.random() < self.accuracy:
            if task.model_reference == true_label:
                choice, new_label = "accept_model", None
            elif task.previous_human_label == true_label:
                choice, new_label = "keep_previous", None
            else:
                choice, new_label = "new_label", true_label
        else:
            choice, new_label = "keep_previous", None
        return ReviewDecision(
            item_id=task.item_id,
            round=task.round,
            annotator_id=f"sim-{self.seed}",
            choice=choice,
            new_label=new_label,
            submitted_at=float(self._clock),
        )


def simulate_annotation(
    queue: Sequence[ReviewTask], truth: dict[str, Label], annotator: SimAnnotator
) -> list[ReviewDecision]:
    decisions = []
    for task in queue:
        if task.item_id not in truth:
            raise ValidationError(f"no truth for queued item {task.item_id!r}")
        decisions.append(annotator.decide(task, truth[task.item_id]))
    return decisions


def score_detection(flags: Sequence[NoiseFlag], noise_mask: set[str]) -> PRF1:
    """Precision/recall of the flagged item set against the injected mask."""
    flagged = {flag.item_id for flag in flags}
    tp = len(flagged & noise_mask)
    return PRF1.from_counts(tp=tp, fp=len(flagged - noise_mask), fn=len(noise_mask - flagged))


# ---------------------------------------------------------------------------
# Dataset generation

_FILLERS = [f"fill{i:02d}" for i in range(24)]
_NOISE_VOCAB = [f"zz{i:02d}" for i in range(20)]

CANVAS_W, CANVAS_H = 640.0, 480.0


def _stratified_split(labels_by_index: list, rng: random.Random) -> list[str]:
    """Roughly 80/20 train/dev, taking ~1/5 of each label group for dev but
    always leaving at least one train item per group."""
    groups: dict[object, list[int]] = {}
    for i, key in enumerate(labels_by_index):
        groups.setdefault(key, []).append(i)
    splits = ["train"] * len(labels_by_index)
    for indices in groups.values():
        dev_count = min(len(indices) - 1, len(indices) // 5)
        for i in rng.sample(indices, dev_count):
            splits[i] = "dev"
    return splits


def _item(item_id: str, payload, label, split: str) -> Item:
    return Item(
        id=item_id,
        payload=payload,
        label=label,
        label_history=(HistoryEntry(0, "human", label),),
        split=split,
    )


def generate_dataset(
    task: str, n: int, classes: int, seed: int
) -> tuple[DatasetVersion, dict[str, Label]]:
    """Synthetic dataset with known true labels; labels start clean.

    classification/tagging draw from per-class core vocabularies plus shared
    fillers; detection plants boxes on a virtual canvas; generation derives
    the output sentence from the input; ctr plants a linear scoring rule.
    """
    if n < 10:
        raise ValidationError(f"n must be >= 10, got {n}")
    if classes < 2:
        raise ValidationError(f"classes must be >= 2, got {classes}")
    rng = random.Random(seed)
    builder = {
        "classification": _generate_classification,
        "tagging": _generate_tagging,
        "detection": _generate_detection,
        "generation": _generate_generation,
        "ctr": _generate_ctr,
    }.get(task)
    if builder is None:
        raise ValidationError(f"unknown task: {task!r}")
    items = builder(n, classes, rng)
    version = make_version("v0", task, items)
    truth = {item.id: item.label for item in items}
    return version, truth


def _generate_classification(n: int, classes: int, rng: random.Random) -> list[Item]:
    # Train texts come in groups of exact duplicates with group-disjoint core
    # vocabularies: a corrupted copy cannot be told apart from its clean
    # twins, so the model sides with the group majority and disagrees with
    # the noisy label instead of memorizing it. Dev texts are probe mixes of
    # two same-class groups' tokens; their margins degrade when train noise
    # weakens those groups and recover as the loop cleans it up.
    train_target = round(n * 0.8)
    class_names = [f"class{c}" for c in range(classes)]
    group_tokens: dict[int, list[list[str]]] = {c: [] for c in range(classes)}
    rows: list[tuple[str, str, str]] = []
    group_cap = max(1, train_target // classes)
    proto = 0
    while len(rows) < train_target:
        c = proto % classes
        gi = len(group_tokens[c])
        tokens = [f"c{c}g{gi:03d}t{k}" for k in range(rng.randint(3, 4))]
        group_tokens[c].append(tokens)
        words = tokens + [rng.choice(_FILLERS)]
        rng.shuffle(words)
        text = " ".join(words)
        size = min(rng.randint(10, 14), group_cap, train_target - len(rows))
        for _ in range(size):
            rows.append((text, class_names[c], "train"))
        proto += 1
    probe_classes = [c for c in range(classes) if group_tokens[c]]
    while len(rows) < n:
        c = rng.choice(probe_classes)
        words = []
        for gi in rng.sample(range(len(group_tokens[c])), min(2, len(group_tokens[c]))):
            tokens = group_tokens[c][gi]
            words += rng.sample(tokens, min(len(tokens), rng.randint(1, 2)))
        words.append(rng.choice(_FILLERS))
        rng.shuffle(words)
        rows.append((" ".join(words), class_names[c], "dev"))
    order = list(range(len(rows)))
    rng.shuffle(order)
    return [
        _item(f"item-{i:05d}", rows[j][0], rows[j][1], rows[j][2])
        for i, j in enumerate(order)
    ]


def _generate_tagging(n: int, classes: int, rng: random.Random) -> list[Item]:
    pool = max(30, (n * 3) // (classes * 5))
    entities = {c: [f"e{c}w{i:03d}" for i in range(pool)] for c in range(classes)}
    class_names = [f"ent{c}" for c in range(classes)]
    labels = [i % classes for i in range(n)]
    splits = _stratified_split(labels, rng)
    items = []
    for i in range(n):
        # segments of fillers interleaved with entity mentions; built left to
        # right so spans can never overlap
        mention_classes = [labels[i]] + (
            [rng.randrange(classes)] if rng.random() < 0.4 else []
        )
        words: list[str] = []
        spans: list[Span] = []
        for c in mention_classes:
            words += [rng.choice(_FILLERS) for _ in range(rng.randint(1, 3))]
            length = rng.randint(1, 2)
            start = len(words)
            words += [rng.choice(entities[c]) for _ in range(length)]
            spans.append(Span(start, start + length, class_names[c]))
        words += [rng.choice(_FILLERS) for _ in range(rng.randint(1, 2))]
        label = tuple(sorted(spans))
        items.append(_item(f"item-{i:05d}", " ".join(words), label, splits[i]))
    return items


def _generate_detection(n: int, classes: int, rng: random.Random) -> list[Item]:
    class_names = [f"obj{c}" for c in range(classes)]
    splits = _stratified_split([0] * n, rng)
    items = []
    for i in range(n):
        boxes = []
        for _ in range(rng.randint(1, 3)):
            w, h = rng.uniform(40, 120), rng.uniform(40, 120)
            x = rng.uniform(0, CANVAS_W - w)
            y = rng.uniform(0, CANVAS_H - h)
            boxes.append(
                Box(
                    round(x, 2),
                    round(y, 2),
                    round(x + w, 2),
                    round(y + h, 2),
                    rng.choice(class_names),
                )
            )
        items.append(
            _item(f"item-{i:05d}", f"images/img-{i:05d}.png", tuple(sorted(boxes)), splits[i])
        )
    return items


def _generate_generation(n: int, classes: int, rng: random.Random) -> list[Item]:
    vocab = [f"g{c}w{i:02d}" for c in range(classes) for i in range(30)]
    splits = _stratified_split([0] * n, rng)
    items = []
    for i in range(n):
        source = [rng.choice(vocab) for _ in range(rng.randint(3, 6))]
        output = "reply " + " ".join(reversed(source))
        items.append(_item(f"item-{i:05d}", " ".join(source), output, splits[i]))
    return items


def _generate_ctr(n: int, classes: int, rng: random.Random) -> list[Item]:
    # sharp planted rule: click labels are mostly decided by the linear score,
    # so injected flips dominate the remaining label noise
    dims = 8
    planted = [rng.uniform(-1.0, 1.0) for _ in range(dims)]
    splits = _stratified_split([0] * n, rng)
    items = []
    for i in range(n):
        x = [rng.uniform(-2.0, 2.0) for _ in range(dims)]
        z = sum(w * v for w, v in zip(planted, x))
        p = 1.0 / (1.0 + 2.718281828459045 ** (-6.0 * z))
        label = 1 if rng.random() < p else 0
        payload = {f"f{j}": round(x[j], 6) for j in range(dims)}
        items.append(_item(f"item-{i:05d}", payload, label, splits[i]))
    return items


# ---------------------------------------------------------------------------
# Noise injection


def inject_noise(
    version: DatasetVersion, truth: dict[str, Label], spec: NoiseSpec
) -> tuple[DatasetVersion, set[str]]:
    """Corrupt exactly round(rate * train_count) train items; dev untouched.

    The corrupted labels replace the round-0 human labels (the noise is part
    of the original labeling, not a revision), and every corrupted label
    differs from the true one.
    """
    expected_kind = NOISE_KINDS[version.task]
    if spec.kind != expected_kind:
        raise ValidationError(
            f"noise kind {spec.kind!r} incompatible with task {version.task!r}"
        )
    rng = random.Random(spec.seed)
    train_ids = [item.id for item in version.train_items()]
    count = int(round(spec.rate * len(train_ids)))
    mask = set(rng.sample(train_ids, count))

    corrupt = {
        "uniform-class-flip": _flip_class,
        "span-drop": _drop_span,
        "box-jitter": _jitter_box,
        "generation-replace": _replace_output,
        "ctr-flip": _flip_ctr,
    }[spec.kind]
    class_names = sorted({label for label in truth.values()}) if version.task == "classification" else None

    items = []
    for item in version.items:
        if item.id not in mask:
            items.append(item)
            continue
        noisy = corrupt(item.label, rng, spec, class_names)
        if noisy == truth[item.id]:
            raise ValidationError(f"noise failed to change label of {item.id}")
        items.append(
            Item(
                id=item.id,
                payload=item.payload,
                label=noisy,
                label_history=(HistoryEntry(0, "human", noisy),),
                split=item.split,
            )
        )
    noisy_version = make_version(
        version.version_id,
        version.task,
        items,
        round=version.round,
        tokenizer=version.tokenizer,
    )
    return noisy_version, mask


def _flip_class(label, rng, spec, class_names):
    others = [c for c in class_names if c != label]
    return rng.choice(others)


def _drop_span(label, rng, spec, class_names):
    if not label:
        raise ValidationError("span-drop needs at least one span")
    victim = rng.choice(list(label))
    return tuple(s for s in label if s != victim)


def _jitter_box(label, rng, spec, class_names):
    if not label:
        raise ValidationError("box-jitter needs at least one box")
    index = rng.randrange(len(label))
    boxes = list(label)
    box = boxes[index]
    half = spec.max_shift / 2.0
    dx = rng.uniform(half, spec.max_shift) * rng.choice((-1.0, 1.0))
    dy = rng.uniform(half, spec.max_shift) * rng.choice((-1.0, 1.0))
    boxes[index] = Box(
        round(box.x_min + dx, 2),
        round(box.y_min + dy, 2),
        round(box.x_max + dx, 2),
        round(box.y_max + dy, 2),
        box.object_class,
    )
    return tuple(sorted(boxes))


def _replace_output(label, rng, spec, class_names):
    return " ".join(rng.choice(_NOISE_VOCAB) for _ in range(rng.randint(3, 5)))


def _flip_ctr(label, rng, spec, class_names):
    return 1 - label


# ---------------------------------------------------------------------------
# Full simulated runs

REPORT_COLUMNS = ["round", "flags", "detection_precision", "detection_recall", "dev_metric"]


@dataclass
class SimReport:
    rows: list[dict]
    store: Path
    noise_mask: set[str]

    def dev_metrics(self) -> list[float | None]:
        return [row["dev_metric"] for row in self.rows]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for row in self.rows:
                writer.writerow(
                    ["" if row[col] is None else row[col] for col in REPORT_COLUMNS]
                )

    def csv_text(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        for row in self.rows:
            lines.append(
                ",".join("" if row[col] is None else str(row[col]) for col in REPORT_COLUMNS)
            )
        return "\n".join(lines) + "\n"


def run_simulation(
    store: str | Path,
    task: str = "classification",
    n: int = 2000,
    classes: int = 2,
    noise_rate: float = 0.15,
    annotator_accuracy: float = 0.98,
    rounds: int = 2,
    seed: int = 42,
    detector: DetectorConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> SimReport:
    """Generate, corrupt, then run the real loop for a number of rounds.

    Tasks with a trainable baseline (classification, tagging, ctr) retrain
    each round; generation and detection rounds consume scripted predictions
    equal to the true labels, standing in for an external model.
    """
    version, truth = generate_dataset(task, n, classes, seed)
    noise = NoiseSpec(rate=noise_rate, kind=NOISE_KINDS[task], seed=seed + 1)
    noisy, mask = inject_noise(version, truth, noise)

    engine = LoopEngine.init_store(store, noisy)
    detector = detector or DetectorConfig(task=task)
    train_cfg = train_cfg or TrainConfig(seed=seed + 2)
    annotator = SimAnnotator(accuracy=annotator_accuracy, seed=seed + 3)
    trainable = task in ("classification", "tagging", "ctr")

    rows = []
    for round_no in range(1, rounds + 1):
        current = engine.current_version()
        wrong_now = {
            item.id
            for item in current.train_items()
            if item.label != truth[item.id]
        }
        if trainable:
            flags, queue = engine.run_round(detector, train_cfg=train_cfg)
        else:
            scripted = [
                Prediction(
                    item_id=item.id,
                    value=truth[item.id],
                    score=None,
                    model_id="scripted-truth",
                    round=round_no,
                )
                for item in current.items
            ]
            flags, queue = engine.run_round(detector, predictions=scripted)
        if round_no == 1:
            rows.append(
                {
                    "round": 0,
                    "flags": None,
                    "detection_precision": None,
                    "detection_recall": None,
                    "dev_metric": engine.state.baseline_dev_metric,
                }
            )
        quality = score_detection(flags, wrong_now)
        decisions = simulate_annotation(queue, truth, annotator)
        state = engine.apply_round(decisions)
        record = state.history[-1]
        rows.append(
            {
                "round": round_no,
                "flags": record.flags_emitted,
                "detection_precision": round(quality.precision, 6),
                "detection_recall": round(quality.recall, 6),
                "dev_metric": record.dev_metric,
            }
        )

    report = SimReport(rows=rows, store=Path(store), noise_mask=mask)
    report.write_csv(Path(store) / "report.csv")
    return report
