"""Deterministic desk-scale baseline models that close the loop end-to-end.

A hashed-feature multinomial logistic regression trained by plain SGD covers
classification (token + bigram bag), sequence tagging (per-token windows with
BIO tags) and CTR (raw feature mapping + sigmoid score). There is no
vocabulary to fit: features hash into a fixed 2^18-dimensional signed space,
so training is constant-memory and bit-deterministic for a fixed seed.

Generation and detection have no baseline here; those loops ingest
externally produced prediction files instead.
"""

from __future__ import annotations

import hashlib
import json
import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DatasetVersion, Item, Span, ValidationError
from .detectors import Prediction
from .tokens import tokenize

HASH_DIM = 2**18
TRAINABLE_TASKS = ("classification", "tagging", "ctr")

CHECKPOINT_MAGIC = b"RLBM"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.1
    seed: int = 0
    l2: float = 1e-6

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")


@dataclass(frozen=True)
class LinearModel:
    task: str
    weights: np.ndarray  # (n_classes, HASH_DIM) float64
    class_names: tuple[str, ...]
    hash_seed: int
    training_config: TrainConfig

    @property
    def model_id(self) -> str:
        return f"baseline-{self.task}-seed{self.training_config.seed}"


def _hash_feature(hash_seed: int, parts: tuple) -> tuple[int, float]:
    """Stable (index, sign) for one feature under signed hashing."""
    payload = ("\x1f".join(str(p) for p in parts) + f"\x1f{hash_seed}").encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=9).digest()
    index = int.from_bytes(digest[:8], "big") % HASH_DIM
    sign = 1.0 if digest[8] & 1 else -1.0
    return index, sign


def _features_classification(text: str, tokenizer: str, hash_seed: int):
    tokens = tokenize(text, tokenizer)
    raw = [("t", tok) for tok in tokens]
    raw += [("b", a, b) for a, b in zip(tokens, tokens[1:])]
    raw.append(("bias",))
    return _hash_all(raw, hash_seed)


def _features_token_window(tokens: list[str], position: int, hash_seed: int):
    raw = []
    for offset in range(-2, 3):
        j = position + offset
        tok = tokens[j] if 0 <= j < len(tokens) else f"<pad{offset}>"
        raw.append(("w", offset, tok))
    raw.append(("bias",))
    return _hash_all(raw, hash_seed)


def _features_ctr(payload: dict, hash_seed: int):
    indices = []
    values = []
    for name in sorted(payload):
        index, sign = _hash_feature(hash_seed, ("f", name))
        indices.append(index)
        values.append(sign * float(payload[name]))
    index, sign = _hash_feature(hash_seed, ("bias",))
    indices.append(index)
    values.append(sign)
    return np.array(indices, dtype=np.int64), np.array(values, dtype=np.float64)


def _hash_all(raw: list[tuple], hash_seed: int):
    indices = np.empty(len(raw), dtype=np.int64)
    values = np.empty(len(raw), dtype=np.float64)
    for k, parts in enumerate(raw):
        index, sign = _hash_feature(hash_seed, parts)
        indices[k] = index
        values[k] = sign
    return indices, values


# ---------------------------------------------------------------------------
# BIO tag handling for the tagger


def bio_tags(item: Item, tokenizer: str) -> list[str]:
    """Project the item's spans onto one BIO sequence.

    Spans are applied in sorted order; with cross-class overlaps (legal but
    unusual) the later span in sort order wins.
    """
    tokens = tokenize(item.payload, tokenizer)
    tags = ["O"] * len(tokens)
    for span in sorted(item.label):
        tags[span.start] = f"B-{span.entity_class}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.entity_class}"
    return tags


def decode_bio(tags: Sequence[str]) -> tuple[Span, ...]:
    """Decode a raw tag sequence into valid, non-overlapping spans.

    Repair rule: an I-x without a preceding B-x/I-x of the same class is
    treated as B-x, so every tag sequence decodes.
    """
    spans = []
    start = None
    current = None
    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            if current is not None:
                spans.append(Span(start, i, current))
            start, current = i, tag[2:]
        elif tag.startswith("I-"):
            cls = tag[2:]
            if current != cls:
                if current is not None:
                    spans.append(Span(start, i, current))
                start, current = i, cls
        else:
            if current is not None:
                spans.append(Span(start, i, current))
            start, current = None, None
    if current is not None:
        spans.append(Span(start, len(tags), current))
    return tuple(sorted(spans))


# ---------------------------------------------------------------------------
# Training


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + np.exp(-min(max(z, -30.0), 30.0)))


def _training_examples(version: DatasetVersion, hash_seed: int):
    """(features, class index) pairs plus the ordered class name list."""
    train = version.train_items()
    if version.task == "classification":
        classes = sorted({item.label for item in train})
        class_index = {c: i for i, c in enumerate(classes)}
        examples = [
            (
                _features_classification(item.payload, version.tokenizer, hash_seed),
                class_index[item.label],
            )
            for item in train
        ]
        return examples, classes
    if version.task == "tagging":
        entity_classes = sorted(
            {span.entity_class for item in train for span in item.label}
        )
        classes = ["O"]
        for cls in entity_classes:
            classes += [f"B-{cls}", f"I-{cls}"]
        class_index = {c: i for i, c in enumerate(classes)}
        examples = []
        for item in train:
            tokens = tokenize(item.payload, version.tokenizer)
            tags = bio_tags(item, version.tokenizer)
            for position, tag in enumerate(tags):
                examples.append(
                    (
                        _features_token_window(tokens, position, hash_seed),
                        class_index[tag],
                    )
                )
        return examples, classes
    if version.task == "ctr":
        examples = [
            (_features_ctr(item.payload, hash_seed), item.label) for item in train
        ]
        return examples, ["1"]
    raise ValidationError(f"no baseline model for task {version.task!r}")


def train(version: DatasetVersion, cfg: TrainConfig = TrainConfig()) -> LinearModel:
    """Multinomial (or binary, for ctr) logistic regression by seeded SGD
    with per-feature adaptive steps (AdaGrad-style), so conflicting labels on
    near-identical items settle on the majority instead of oscillating.

    The epoch order is shuffled by the config seed; identical inputs and seed
    reproduce identical weight vectors bit-for-bit.
    """
    if version.task not in TRAINABLE_TASKS:
        raise ValidationError(f"no baseline model for task {version.task!r}")
    if not version.train_items():
        raise ValidationError("train split is empty")
    hash_seed = cfg.seed
    examples, classes = _training_examples(version, hash_seed)
    n_out = 1 if version.task == "ctr" else len(classes)
    weights = np.zeros((n_out, HASH_DIM), dtype=np.float64)
    accum = np.full((n_out, HASH_DIM), 1e-8, dtype=np.float64)
    rng = random.Random(cfg.seed)
    order = list(range(len(examples)))
    lr, l2 = cfg.learning_rate, cfg.l2
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        for k in order:
            (indices, values), target = examples[k]
            local = weights[:, indices]
            if version.task == "ctr":
                p = _sigmoid(float(local[0] @ values))
                grad = np.array([p - target])
            else:
                probs = _softmax(local @ values)
                probs[target] -= 1.0
                grad = probs
            step = np.outer(grad, values) + l2 * local
            local_accum = accum[:, indices] + step * step
            accum[:, indices] = local_accum
            weights[:, indices] = local - lr * step / np.sqrt(local_accum)
    return LinearModel(
        task=version.task,
        weights=weights,
        class_names=tuple(classes),
        hash_seed=hash_seed,
        training_config=cfg,
    )


def logistic_loss(model: LinearModel, version: DatasetVersion) -> float:
    """Mean logistic loss of the model over the train split."""
    examples, classes = _training_examples(version, model.hash_seed)
    if list(classes) != list(model.class_names):
        raise ValidationError("dataset classes do not match the model")
    total = 0.0
    for (indices, values), target in examples:
        local = model.weights[:, indices]
        if model.task == "ctr":
            p = _sigmoid(float(local[0] @ values))
            p = min(max(p, 1e-12), 1.0 - 1e-12)
            total += -(np.log(p) if target == 1 else np.log(1.0 - p))
        else:
            probs = _softmax(local @ values)
            total += -np.log(max(probs[target], 1e-12))
    return total / len(examples)


# ---------------------------------------------------------------------------
# Prediction


def predict(
    model: LinearModel, version: DatasetVersion, round: int | None = None
) -> list[Prediction]:
    """One prediction per item (train and dev), pure in (model, payload)."""
    if model.task != version.task:
        raise ValidationError(
            f"model task {model.task!r} does not match dataset task {version.task!r}"
        )
    if round is None:
        round = version.round + 1
    preds = []
    for item in version.items:
        if model.task == "classification":
            indices, values = _features_classification(
                item.payload, version.tokenizer, model.hash_seed
            )
            logits = model.weights[:, indices] @ values
            value: object = model.class_names[int(np.argmax(logits))]
            score = None
        elif model.task == "tagging":
            tokens = tokenize(item.payload, version.tokenizer)
            tags = []
            for position in range(len(tokens)):
                indices, values = _features_token_window(
                    tokens, position, model.hash_seed
                )
                logits = model.weights[:, indices] @ values
                tags.append(model.class_names[int(np.argmax(logits))])
            value = decode_bio(tags)
            score = None
        else:  # ctr
            indices, values = _features_ctr(item.payload, model.hash_seed)
            score = float(_sigmoid(float(model.weights[0, indices] @ values)))
            value = 1 if score > 0.5 else 0
        preds.append(
            Prediction(
                item_id=item.id,
                value=value,
                score=score,
                model_id=model.model_id,
                round=round,
            )
        )
    return preds


# ---------------------------------------------------------------------------
# Checkpoints: binary header + little-endian weight array, bit-exact


def save_model(model: LinearModel, path: str | Path) -> None:
    meta = {
        "task": model.task,
        "class_names": list(model.class_names),
        "hash_seed": model.hash_seed,
        "dim": HASH_DIM,
        "n_out": model.weights.shape[0],
        "epochs": model.training_config.epochs,
        "learning_rate": model.training_config.learning_rate,
        "seed": model.training_config.seed,
        "l2": model.training_config.l2,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_FORMAT, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path: str | Path) -> LinearModel:
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) != 12:
            raise ValidationError(f"{path}: truncated checkpoint")
        magic, fmt, blob_len = struct.unpack("<4sII", header)
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a model checkpoint")
        if fmt != CHECKPOINT_FORMAT:
            raise ValidationError(f"{path}: unsupported checkpoint format {fmt}")
        meta = json.loads(fh.read(blob_len).decode("utf-8"))
        data = fh.read(meta["n_out"] * meta["dim"] * 8)
    weights = np.frombuffer(data, dtype="<f8").reshape(meta["n_out"], meta["dim"]).copy()
    return LinearModel(
        task=meta["task"],
        weights=weights,
        class_names=tuple(meta["class_names"]),
        hash_seed=meta["hash_seed"],
        training_config=TrainConfig(
            epochs=meta["epochs"],
            learning_rate=meta["learning_rate"],
            seed=meta["seed"],
            l2=meta["l2"],
        ),
    )
