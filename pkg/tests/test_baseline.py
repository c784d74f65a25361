import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_item
from relabel.baseline import (
    LinearModel,
    TrainConfig,
    decode_bio,
    load_model,
    logistic_loss,
    predict,
    save_model,
    train,
)
from relabel.dataset import Span, ValidationError, make_version
from relabel.metrics import auc


def separable_version(n=200, seed=1):
    """Two classes with disjoint core vocabularies plus shared fillers."""
    rng = random.Random(seed)
    fillers = [f"the{i}" for i in range(5)]
    items = []
    for k in range(n):
        cls = "A" if k % 2 == 0 else "B"
        prefix = "a" if cls == "A" else "b"
        words = [f"{prefix}{rng.randint(0, 9)}" for _ in range(3)]
        words += [rng.choice(fillers) for _ in range(2)]
        rng.shuffle(words)
        split = "dev" if k % 10 == 9 else "train"
        items.append(make_item(f"i{k:04d}", " ".join(words), cls, split=split))
    return make_version("v0", "classification", items)


def test_separable_dataset_reaches_perfect_train_accuracy():
    version = separable_version()
    model = train(version, TrainConfig(seed=3))
    preds = {p.item_id: p.value for p in predict(model, version)}
    train_items = version.train_items()
    correct = sum(preds[item.id] == item.label for item in train_items)
    assert correct == len(train_items)


def test_same_seed_gives_identical_weights():
    version = separable_version()
    m1 = train(version, TrainConfig(seed=7))
    m2 = train(version, TrainConfig(seed=7))
    assert np.array_equal(m1.weights, m2.weights)


def test_empty_train_split_rejected():
    version = make_version(
        "v0", "classification", [make_item("a", "text", "A", split="dev")]
    )
    with pytest.raises(ValidationError, match="empty"):
        train(version)


def test_generation_has_no_baseline():
    version = make_version("v0", "generation", [make_item("a", "in", "out")])
    with pytest.raises(ValidationError, match="generation"):
        train(version)


def test_single_token_item_predicts_its_training_class():
    items = [make_item(f"a{i}", f"marker{i} stuff", "A") for i in range(20)]
    items += [make_item(f"b{i}", f"other{i} stuff", "B") for i in range(20)]
    items.append(make_item("probe", "marker3", "B", split="dev"))
    version = make_version("v0", "classification", items)
    model = train(version, TrainConfig(seed=0))
    preds = {p.item_id: p.value for p in predict(model, version)}
    assert preds["probe"] == "A"


def test_three_similar_items_follow_the_majority_label():
    # three near-identical texts labeled A, A, B: the model sides with the
    # majority, so the B item disagrees and gets flagged downstream
    items = [
        make_item("s1", "alpha beta gamma", "A"),
        make_item("s2", "alpha beta gamma", "A"),
        make_item("s3", "alpha beta gamma", "B"),
    ]
    version = make_version("v0", "classification", items)
    model = train(version, TrainConfig(seed=0))
    preds = {p.item_id: p.value for p in predict(model, version)}
    assert preds == {"s1": "A", "s2": "A", "s3": "A"}


def test_prediction_is_deterministic():
    version = separable_version()
    model = train(version, TrainConfig(seed=5))
    assert predict(model, version) == predict(model, version)


def test_training_loss_non_increasing_over_epochs():
    version = separable_version()
    losses = []
    for epochs in range(1, 6):
        model = train(version, TrainConfig(epochs=epochs, seed=11))
        losses.append(logistic_loss(model, version))
    for earlier, later in zip(losses, losses[1:]):
        assert later <= earlier + 1e-12


def test_argmax_invariant_under_positive_scaling():
    version = separable_version()
    model = train(version, TrainConfig(seed=2))
    scaled = LinearModel(
        task=model.task,
        weights=model.weights * 3.5,
        class_names=model.class_names,
        hash_seed=model.hash_seed,
        training_config=model.training_config,
    )
    original = [p.value for p in predict(model, version)]
    rescaled = [p.value for p in predict(scaled, version)]
    assert original == rescaled


# ---------------------------------------------------------------------------
# tagging


def tagging_fixture(n=120, seed=4):
    rng = random.Random(seed)
    fillers = [f"f{i}" for i in range(8)]
    items = []
    for k in range(n):
        words = [rng.choice(fillers) for _ in range(4)]
        cls = "PER" if k % 2 == 0 else "LOC"
        ent = f"{cls.lower()}ent{rng.randint(0, 5)}"
        pos = rng.randint(0, len(words))
        words.insert(pos, ent)
        label = (Span(pos, pos + 1, cls),)
        split = "dev" if k % 10 == 9 else "train"
        items.append(make_item(f"t{k:04d}", " ".join(words), label, split=split))
    return make_version("v0", "tagging", items)


def test_tagger_learns_planted_entities():
    version = tagging_fixture()
    model = train(version, TrainConfig(seed=9))
    preds = {p.item_id: p.value for p in predict(model, version)}
    train_items = version.train_items()
    correct = sum(preds[item.id] == item.label for item in train_items)
    assert correct / len(train_items) >= 0.95


def test_decode_bio_repairs_stray_inside_tags():
    assert decode_bio(["I-PER", "I-PER", "O"]) == (Span(0, 2, "PER"),)
    assert decode_bio(["O", "I-LOC"]) == (Span(1, 2, "LOC"),)
    assert decode_bio(["B-PER", "I-LOC"]) == (Span(0, 1, "PER"), Span(1, 2, "LOC"))


@given(
    st.lists(
        st.sampled_from(["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]),
        min_size=0,
        max_size=12,
    )
)
def test_decode_bio_always_yields_valid_disjoint_spans(tags):
    spans = decode_bio(tags)
    for span in spans:
        assert 0 <= span.start < span.end <= len(tags)
    ordered = sorted(spans)
    for prev, cur in zip(ordered, ordered[1:]):
        assert prev.end <= cur.start


# ---------------------------------------------------------------------------
# ctr


def ctr_fixture(n=400, seed=6):
    rng = random.Random(seed)
    planted = [rng.uniform(-1, 1) for _ in range(6)]
    items = []
    for k in range(n):
        x = [rng.uniform(-2, 2) for _ in range(6)]
        z = sum(w * v for w, v in zip(planted, x))
        label = 1 if z > 0 else 0
        split = "dev" if k % 5 == 4 else "train"
        items.append(
            make_item(f"c{k:04d}", {f"f{j}": x[j] for j in range(6)}, label, split=split)
        )
    return make_version("v0", "ctr", items)


def test_ctr_scorer_recovers_planted_rule():
    version = ctr_fixture()
    model = train(version, TrainConfig(seed=13))
    preds = predict(model, version)
    by_item = {p.item_id: p for p in preds}
    dev = version.dev_items()
    labels = [item.label for item in dev]
    scores = [by_item[item.id].score for item in dev]
    assert all(0.0 <= s <= 1.0 for s in scores)
    assert auc(labels, scores) >= 0.95


def test_ctr_prediction_value_matches_score_threshold():
    version = ctr_fixture(n=60)
    model = train(version, TrainConfig(seed=1))
    for pred in predict(model, version):
        assert pred.value == (1 if pred.score > 0.5 else 0)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path):
    version = separable_version(n=60)
    model = train(version, TrainConfig(seed=21))
    path = tmp_path / "model.bin"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.task == model.task
    assert loaded.class_names == model.class_names
    assert loaded.hash_seed == model.hash_seed
    assert loaded.training_config == model.training_config
    assert np.array_equal(loaded.weights, model.weights)
    # saving again produces identical bytes
    save_model(loaded, tmp_path / "model2.bin")
    assert (tmp_path / "model.bin").read_bytes() == (tmp_path / "model2.bin").read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValidationError, match="checkpoint"):
        load_model(path)
