import random

import pytest

from relabel.dataset import ValidationError
from relabel.detectors import NoiseFlag
from relabel.loop import LoopEngine
from relabel.review import ReviewTask
from relabel.sim import (
    NoiseSpec,
    SimAnnotator,
    generate_dataset,
    inject_noise,
    run_simulation,
    score_detection,
    simulate_annotation,
)


def test_generate_classification_split_and_truth():
    version, truth = generate_dataset("classification", 100, 2, seed=7)
    assert len(version.items) == 100
    assert len(version.dev_items()) == 20
    assert len(version.train_items()) == 80
    for item in version.items:
        assert item.label == truth[item.id]


def test_generate_is_deterministic():
    a, _ = generate_dataset("classification", 50, 2, seed=3)
    b, _ = generate_dataset("classification", 50, 2, seed=3)
    assert a.content_hash == b.content_hash
    c, _ = generate_dataset("classification", 50, 2, seed=4)
    assert c.content_hash != a.content_hash


def test_generate_covers_all_classes_in_train():
    version, _ = generate_dataset("classification", 100, 5, seed=11)
    train_labels = {item.label for item in version.train_items()}
    assert train_labels == {f"class{c}" for c in range(5)}


@pytest.mark.parametrize("task", ["classification", "tagging", "detection", "generation", "ctr"])
def test_generate_valid_for_every_task(task):
    version, truth = generate_dataset(task, 60, 2, seed=5)
    assert version.task == task
    assert len(version.items) == 60
    assert set(truth) == {item.id for item in version.items}


def test_generate_rejects_degenerate_parameters():
    with pytest.raises(ValidationError):
        generate_dataset("classification", 5, 2, seed=1)
    with pytest.raises(ValidationError):
        generate_dataset("classification", 100, 1, seed=1)


def test_inject_noise_zero_rate_is_identity():
    version, truth = generate_dataset("classification", 60, 2, seed=9)
    noisy, mask = inject_noise(version, truth, NoiseSpec(0.0, "uniform-class-flip", 1))
    assert mask == set()
    assert noisy.content_hash == version.content_hash


def test_inject_noise_exact_count_and_dev_untouched():
    version, truth = generate_dataset("classification", 250, 2, seed=9)
    train_count = len(version.train_items())
    noisy, mask = inject_noise(version, truth, NoiseSpec(0.15, "uniform-class-flip", 2))
    assert len(mask) == round(0.15 * train_count)
    noisy_map = noisy.item_map()
    for item in version.items:
        if item.split == "dev":
            assert noisy_map[item.id].label == item.label
    for item_id in mask:
        assert noisy_map[item_id].label != truth[item_id]
        assert noisy_map[item_id].split == "train"


def test_inject_noise_kind_must_match_task():
    version, truth = generate_dataset("classification", 60, 2, seed=9)
    with pytest.raises(ValidationError, match="incompatible"):
        inject_noise(version, truth, NoiseSpec(0.1, "span-drop", 1))


@pytest.mark.parametrize(
    "task,kind",
    [
        ("tagging", "span-drop"),
        ("detection", "box-jitter"),
        ("generation", "generation-replace"),
        ("ctr", "ctr-flip"),
    ],
)
def test_inject_noise_changes_labels_for_every_task(task, kind):
    version, truth = generate_dataset(task, 60, 2, seed=13)
    noisy, mask = inject_noise(version, truth, NoiseSpec(0.2, kind, 3))
    assert mask
    noisy_map = noisy.item_map()
    for item_id in mask:
        assert noisy_map[item_id].label != truth[item_id]


def review_task(item_id, previous, model):
    return ReviewTask(
        item_id=item_id,
        round=1,
        payload="text",
        previous_human_label=previous,
        model_reference=model,
        reason={"kind": "label-mismatch"},
        mode="open",
        queue_position=0,
    )


def test_annotator_accuracy_one_always_emits_truth():
    annotator = SimAnnotator(accuracy=1.0, seed=5)
    queue = [review_task(f"i{k}", "noisy", "truth") for k in range(20)]
    truth = {f"i{k}": "truth" for k in range(20)}
    decisions = simulate_annotation(queue, truth, annotator)
    assert all(d.choice == "accept_model" for d in decisions)
    # model reference wrong too -> open relabel with the true label
    queue = [review_task("j", "noisy", "alsowrong")]
    decisions = simulate_annotation(queue, {"j": "truth"}, SimAnnotator(1.0, 5))
    assert decisions[0].choice == "new_label"
    assert decisions[0].new_label == "truth"


def test_annotator_accuracy_zero_keeps_previous():
    annotator = SimAnnotator(accuracy=0.0, seed=5)
    queue = [review_task(f"i{k}", "noisy", "truth") for k in range(20)]
    truth = {f"i{k}": "truth" for k in range(20)}
    decisions = simulate_annotation(queue, truth, annotator)
    assert all(d.choice == "keep_previous" for d in decisions)


def test_annotator_hit_rate_within_binomial_bounds():
    annotator = SimAnnotator(accuracy=0.9, seed=17)
    queue = [review_task(f"i{k}", "noisy", "truth") for k in range(1000)]
    truth = {f"i{k}": "truth" for k in range(1000)}
    decisions = simulate_annotation(queue, truth, annotator)
    correct = sum(d.choice == "accept_model" for d in decisions)
    # binomial(1000, 0.9) 99% interval
    assert 870 <= correct <= 930


def test_annotator_requires_truth_coverage():
    with pytest.raises(ValidationError, match="truth"):
        simulate_annotation([review_task("x", "a", "b")], {}, SimAnnotator(1.0, 1))


def flag(item_id):
    return NoiseFlag(item_id=item_id, round=1, reason={"kind": "label-mismatch"}, severity=1.0)


def test_score_detection_cases():
    perfect = score_detection([flag("a"), flag("b")], {"a", "b"})
    assert perfect.precision == 1.0 and perfect.recall == 1.0
    empty = score_detection([], {"a"})
    assert empty.recall == 0.0
    mixed = score_detection([flag("a"), flag("c")], {"a", "b"})
    assert mixed.precision == 0.5 and mixed.recall == 0.5


def test_score_detection_invariant_under_id_relabeling():
    rng = random.Random(3)
    ids = [f"i{k}" for k in range(30)]
    flags = [flag(i) for i in rng.sample(ids, 12)]
    mask = set(rng.sample(ids, 9))
    rename = {i: f"renamed-{k}" for k, i in enumerate(ids)}
    renamed_flags = [flag(rename[f.item_id]) for f in flags]
    renamed_mask = {rename[i] for i in mask}
    assert score_detection(flags, mask) == score_detection(renamed_flags, renamed_mask)


def test_run_simulation_deterministic_artifacts(tmp_path):
    kwargs = dict(
        task="classification",
        n=80,
        classes=2,
        noise_rate=0.2,
        annotator_accuracy=1.0,
        rounds=2,
        seed=21,
    )
    first = run_simulation(tmp_path / "one", **kwargs)
    second = run_simulation(tmp_path / "two", **kwargs)
    assert first.rows == second.rows
    e1, e2 = LoopEngine(tmp_path / "one"), LoopEngine(tmp_path / "two")
    for vid in ("v0", "v1", "v2"):
        assert e1.load_version(vid).content_hash == e2.load_version(vid).content_hash
    assert (tmp_path / "one" / "report.csv").read_bytes() == (
        tmp_path / "two" / "report.csv"
    ).read_bytes()


def test_run_simulation_report_shape(tmp_path):
    report = run_simulation(
        tmp_path / "store",
        task="classification",
        n=80,
        classes=2,
        noise_rate=0.2,
        annotator_accuracy=1.0,
        rounds=1,
        seed=33,
    )
    assert [row["round"] for row in report.rows] == [0, 1]
    csv_text = (tmp_path / "store" / "report.csv").read_text()
    header = csv_text.splitlines()[0]
    assert header == "round,flags,detection_precision,detection_recall,dev_metric"


def test_run_simulation_generation_uses_scripted_predictions(tmp_path):
    report = run_simulation(
        tmp_path / "store",
        task="generation",
        n=60,
        classes=2,
        noise_rate=0.2,
        annotator_accuracy=1.0,
        rounds=1,
        seed=8,
    )
    engine = LoopEngine(tmp_path / "store")
    # every corrupted item shares no token with the scripted (true) output,
    # so round 1 flags exactly the mask and the oracle fixes all of it
    assert report.rows[1]["detection_recall"] == 1.0
    version = engine.current_version()
    _, truth = generate_dataset("generation", 60, 2, seed=8)
    for item in version.train_items():
        assert item.label == truth[item.id]
