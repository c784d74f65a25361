import pytest
from fastapi.testclient import TestClient

from conftest import make_item, make_pred
from relabel.dataset import Span, make_version
from relabel.detectors import DetectorConfig
from relabel.loop import LoopEngine
from relabel.service import create_app


class FakeClock:
    def __init__(self, start=1000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def classification_store(tmp_path, n=3):
    rows = [make_item(f"i{k}", f"text {k}", "A") for k in range(n)]
    rows.append(make_item("dev0", "dev text", "B", split="dev"))
    version = make_version("v0", "classification", rows)
    engine = LoopEngine.init_store(tmp_path / "store", version)
    preds = [make_pred(f"i{k}", "B") for k in range(n)]
    preds.append(make_pred("dev0", "A"))
    engine.run_round(DetectorConfig(task="classification"), predictions=preds)
    return engine


def generation_store(tmp_path):
    rows = [
        make_item("g0", "input zero", "origin output zero"),
        make_item("g1", "input one", "origin output one"),
    ]
    version = make_version("v0", "generation", rows)
    engine = LoopEngine.init_store(tmp_path / "store", version)
    preds = [make_pred("g0", "model reply alpha"), make_pred("g1", "origin output one")]
    engine.run_round(DetectorConfig(task="generation"), predictions=preds)
    return engine


def decision_body(item_id, choice, round=1, annotator="a1", at=1.5, new_label=None):
    return {
        "format": 1,
        "item_id": item_id,
        "round": round,
        "annotator_id": annotator,
        "choice": choice,
        "new_label": new_label,
        "submitted_at": at,
    }


@pytest.fixture
def service(tmp_path):
    engine = classification_store(tmp_path)
    clock = FakeClock()
    app = create_app(engine.store, lease_seconds=600, clock=clock)
    return engine, clock, TestClient(app)


def test_lease_returns_lowest_position_task(service):
    _, _, client = service
    response = client.get("/api/v1/queue/next", params={"annotator": "a1"})
    assert response.status_code == 200
    assert response.json()["queue_position"] == 0
    assert response.json()["mode"] == "open"
    assert response.json()["previous_human_label"] == "A"
    assert response.json()["model_reference"] == "B"


def test_concurrent_annotators_get_distinct_tasks(service):
    _, _, client = service
    first = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    second = client.get("/api/v1/queue/next", params={"annotator": "a2"}).json()
    assert first["item_id"] != second["item_id"]


def test_expired_lease_is_reoffered(service):
    _, clock, client = service
    first = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    taken = client.get("/api/v1/queue/next", params={"annotator": "a2"}).json()
    assert taken["item_id"] != first["item_id"]
    clock.advance(601)
    again = client.get("/api/v1/queue/next", params={"annotator": "a3"}).json()
    assert again["item_id"] == first["item_id"]


def test_queue_exhaustion_returns_204(service):
    _, _, client = service
    for k in range(3):
        client.get("/api/v1/queue/next", params={"annotator": f"a{k}"})
    response = client.get("/api/v1/queue/next", params={"annotator": "a9"})
    assert response.status_code == 204


def test_missing_annotator_param_rejected(service):
    _, _, client = service
    assert client.get("/api/v1/queue/next").status_code == 422


def test_submit_accept_model_then_merge_applies_model_label(service):
    engine, _, client = service
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    response = client.post(
        "/api/v1/decision", json=decision_body(task["item_id"], "accept_model")
    )
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "duplicate": False}
    # merge: close round, resolve from the log, apply
    from relabel.service import ReviewStore

    store = ReviewStore(engine.store)
    submissions = store.submissions(1)
    engine.apply_round(submissions)
    assert engine.current_version().item_map()[task["item_id"]].label == "B"


def test_duplicate_submission_is_idempotent(service):
    _, _, client = service
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    body = decision_body(task["item_id"], "accept_model")
    first = client.post("/api/v1/decision", json=body)
    second = client.post("/api/v1/decision", json=body)
    assert first.json()["duplicate"] is False
    assert second.json()["duplicate"] is True


def test_lease_conflict_yields_409(service):
    _, _, client = service
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    response = client.post(
        "/api/v1/decision",
        json=decision_body(task["item_id"], "accept_model", annotator="intruder"),
    )
    assert response.status_code == 409


def test_submission_to_closed_round_rejected(service):
    engine, _, client = service
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    engine.apply_round([])
    response = client.post(
        "/api/v1/decision", json=decision_body(task["item_id"], "accept_model")
    )
    assert response.status_code == 409


def test_unknown_item_rejected(service):
    _, _, client = service
    response = client.post("/api/v1/decision", json=decision_body("nope", "accept_model"))
    assert response.status_code == 422


def test_invalid_new_label_rejected(service):
    _, _, client = service
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    response = client.post(
        "/api/v1/decision",
        json=decision_body(task["item_id"], "new_label", new_label=""),
    )
    assert response.status_code == 422


def test_choice_mode_rejects_new_label(tmp_path):
    engine = generation_store(tmp_path)
    client = TestClient(create_app(engine.store))
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    assert task["mode"] == "choice"
    response = client.post(
        "/api/v1/decision",
        json=decision_body(task["item_id"], "new_label", new_label="free text"),
    )
    assert response.status_code == 422
    accepted = client.post(
        "/api/v1/decision", json=decision_body(task["item_id"], "accept_model")
    )
    assert accepted.status_code == 200


def test_round_stats_consistency(service):
    _, _, client = service
    stats = client.get("/api/v1/rounds/1/stats").json()
    assert stats == {
        "round": 1,
        "queued": 3,
        "decided": 0,
        "leased": 0,
        "remaining": 3,
        "by_reason": {"label-mismatch": {"queued": 3, "decided": 0}},
    }
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    client.post("/api/v1/decision", json=decision_body(task["item_id"], "keep_previous"))
    client.get("/api/v1/queue/next", params={"annotator": "a2"})
    stats = client.get("/api/v1/rounds/1/stats").json()
    assert stats["decided"] == 1
    assert stats["leased"] == 1
    assert stats["remaining"] == 1
    assert stats["queued"] == stats["decided"] + stats["leased"] + stats["remaining"]


def test_stats_unknown_round_404(service):
    _, _, client = service
    assert client.get("/api/v1/rounds/7/stats").status_code == 404


def test_export_requires_closed_round_and_resolves_conflicts(service):
    engine, _, client = service
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    item = task["item_id"]
    # a1 decides (releasing the lease), then a2 overrides later
    client.post("/api/v1/decision", json=decision_body(item, "keep_previous", at=1.0))
    client.post(
        "/api/v1/decision",
        json=decision_body(item, "accept_model", annotator="a2", at=2.0),
    )
    assert client.get("/api/v1/rounds/1/export").status_code == 409
    engine.apply_round([])
    lines = client.get("/api/v1/rounds/1/export").text.strip().splitlines()
    assert len(lines) == 1
    import json

    resolved = json.loads(lines[0])
    assert resolved["choice"] == "accept_model"
    assert resolved["resolved_label"] == "B"


def test_tie_breaks_to_greatest_annotator(service):
    engine, _, client = service
    task = client.get("/api/v1/queue/next", params={"annotator": "zz"}).json()
    item = task["item_id"]
    client.post(
        "/api/v1/decision",
        json=decision_body(item, "keep_previous", annotator="zz", at=5.0),
    )
    client.post(
        "/api/v1/decision",
        json=decision_body(item, "accept_model", annotator="aa", at=5.0),
    )
    engine.apply_round([])
    import json

    lines = client.get("/api/v1/rounds/1/export").text.strip().splitlines()
    resolved = [json.loads(line) for line in lines]
    assert resolved[0]["annotator_id"] == "zz"
    assert resolved[0]["choice"] == "keep_previous"


def test_service_never_serves_dev_items(service):
    _, _, client = service
    seen = set()
    while True:
        response = client.get("/api/v1/queue/next", params={"annotator": "sweep"})
        if response.status_code == 204:
            break
        task = response.json()
        seen.add(task["item_id"])
        client.post("/api/v1/decision", json=decision_body(task["item_id"], "keep_previous", annotator="sweep"))
    assert "dev0" not in seen


def test_state_endpoint(service):
    _, _, client = service
    state = client.get("/api/v1/state").json()
    assert state == {
        "task": "classification",
        "round": 0,
        "open_round": 1,
        "current_version": "v0",
    }


def test_no_open_round_yields_409(tmp_path):
    rows = [make_item("a", "t", "A")]
    version = make_version("v0", "classification", rows)
    engine = LoopEngine.init_store(tmp_path / "store", version)
    client = TestClient(create_app(engine.store))
    assert client.get("/api/v1/queue/next", params={"annotator": "a"}).status_code == 409


def test_tagging_span_label_validated(tmp_path):
    label = (Span(0, 1, "PER"),)
    rows = [make_item("t0", "alpha beta gamma", label)]
    version = make_version("v0", "tagging", rows)
    engine = LoopEngine.init_store(tmp_path / "store", version)
    preds = [make_pred("t0", (Span(1, 2, "PER"),))]
    engine.run_round(DetectorConfig(task="tagging"), predictions=preds)
    client = TestClient(create_app(engine.store))
    task = client.get("/api/v1/queue/next", params={"annotator": "a1"}).json()
    # tagging reviews default to choice mode; keep/accept both work
    response = client.post(
        "/api/v1/decision", json=decision_body(task["item_id"], "accept_model")
    )
    assert response.status_code == 200
