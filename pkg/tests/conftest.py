"""Shared builders for hand-rolled dataset fixtures."""

import pytest

from relabel.dataset import Box, HistoryEntry, Item, Span, make_version
from relabel.detectors import Prediction


def make_item(item_id, payload, label, split="train", source="import"):
    return Item(
        id=item_id,
        payload=payload,
        label=label,
        label_history=(HistoryEntry(0, source, label),),
        split=split,
    )


def make_pred(item_id, value, round=1, score=None, model_id="m1"):
    return Prediction(
        item_id=item_id, value=value, score=score, model_id=model_id, round=round
    )


@pytest.fixture
def builders():
    return make_item, make_pred


def classification_version(rows):
    """rows: (id, text, label[, split]) tuples."""
    items = [make_item(*row) for row in rows]
    return make_version("v0", "classification", items)


def tagging_version(rows):
    items = [make_item(*row) for row in rows]
    return make_version("v0", "tagging", items)


def detection_version(rows):
    items = [make_item(*row) for row in rows]
    return make_version("v0", "detection", items)


def generation_version(rows):
    items = [make_item(*row) for row in rows]
    return make_version("v0", "generation", items)


def ctr_version(rows):
    items = [make_item(*row) for row in rows]
    return make_version("v0", "ctr", items)


__all__ = [
    "make_item",
    "make_pred",
    "classification_version",
    "tagging_version",
    "detection_version",
    "generation_version",
    "ctr_version",
    "Box",
    "Span",
]
