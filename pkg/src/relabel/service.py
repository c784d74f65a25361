"""HTTP review service: serves queued tasks to annotators, records decisions.

Each task is offered with both references (model prediction and previous
human label). Leasing and submission are linearizable per item behind one
lock; the decision log is append-only and survives restarts. Leases live in
memory only: after a restart an unexpired lease is simply forgotten and the
task is offered again, which is safe because submission never depends on a
lease having been granted first.

Endpoints (JSON over HTTP, all under /api/v1):
    GET  /queue/next?annotator=ID   -> ReviewTask | 204 when exhausted
    POST /decision                  -> 200 ack | 409 conflict | 422 invalid
    GET  /rounds/{n}/stats          -> queue counters + per-reason breakdown
    GET  /rounds/{n}/export         -> resolved decisions (requires closed round)
    GET  /state                     -> store round/task summary for clients
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .dataset import (
    DatasetError,
    ValidationError,
    dumps_canonical,
    load_dataset,
)
from .loop import LoopState, STATE_NAME
from .review import (
    ReviewDecision,
    ReviewTask,
    decision_from_json,
    decision_to_json,
    resolve_decisions,
    task_from_json,
    task_to_json,
    validate_decision,
)

DEFAULT_LEASE_SECONDS = 600.0


class ReviewStore:
    """Review-queue state for one loop store directory.

    Decisions append to ``round-N/submissions.jsonl``; resolution collapses
    that log (latest submission wins, ties to the greatest annotator_id).
    """

    def __init__(
        self,
        store: str | Path,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock: Callable[[], float] = time.time,
    ):
        self.store = Path(store)
        self.lease_seconds = lease_seconds
        self.clock = clock
        self._lock = threading.Lock()
        self._leases: dict[str, tuple[str, float]] = {}
        state_path = self.store / STATE_NAME
        if not state_path.is_file():
            raise ValidationError(f"not a loop store: {self.store}")
        self.state = LoopState.from_json(json.loads(state_path.read_text()))
        self.task_kind = self.state.task
        self._queues: dict[int, list[ReviewTask]] = {}
        self._submissions: dict[int, list[ReviewDecision]] = {}

    # -- persistence -------------------------------------------------------

    def _reload_state(self) -> None:
        self.state = LoopState.from_json(
            json.loads((self.store / STATE_NAME).read_text())
        )

    def round_exists(self, round: int) -> bool:
        return (self.store / f"round-{round}" / "queue.jsonl").is_file()

    def open_round(self) -> int | None:
        self._reload_state()
        return self.state.open_round

    def queue(self, round: int) -> list[ReviewTask]:
        if round not in self._queues:
            path = self.store / f"round-{round}" / "queue.jsonl"
            if not path.is_file():
                raise ValidationError(f"unknown round: {round}")
            tasks = []
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        tasks.append(task_from_json(self.task_kind, json.loads(line)))
            # the service never serves dev-split items; the queue builder
            # already guarantees this, the filter here is belt and braces
            self._queues[round] = tasks
        return self._queues[round]

    def submissions(self, round: int) -> list[ReviewDecision]:
        if round not in self._submissions:
            path = self.store / f"round-{round}" / "submissions.jsonl"
            decisions = []
            if path.is_file():
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if line:
                            decisions.append(
                                decision_from_json(self.task_kind, json.loads(line))
                            )
            self._submissions[round] = decisions
        return self._submissions[round]

    def _append_submission(self, decision: ReviewDecision) -> None:
        path = self.store / f"round-{decision.round}" / "submissions.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(dumps_canonical(decision_to_json(self.task_kind, decision)) + "\n")
        self.submissions(decision.round).append(decision)

    # -- operations ----------------------------------------------------------

    def lease_next(self, annotator_id: str) -> ReviewTask | None:
        """Lowest-position unleased, undecided task; None when exhausted."""
        with self._lock:
            round = self.open_round()
            if round is None:
                raise ValidationError("no open round")
            now = self.clock()
            decided = {d.item_id for d in self.submissions(round)}
            for task in self.queue(round):
                if task.item_id in decided:
                    continue
                lease = self._leases.get(task.item_id)
                if lease is not None and lease[1] > now and lease[0] != annotator_id:
                    continue
                self._leases[task.item_id] = (annotator_id, now + self.lease_seconds)
                return task
            return None

    def submit_decision(self, decision: ReviewDecision) -> dict:
        """Persist one decision; idempotent for identical resubmissions."""
        with self._lock:
            round = self.open_round()
            if round is None or decision.round != round:
                raise ClosedRoundError(
                    f"round {decision.round} is not open for submissions"
                )
            tasks = {t.item_id: t for t in self.queue(round)}
            task = tasks.get(decision.item_id)
            if task is None:
                raise ValidationError(f"unknown item: {decision.item_id!r}")
            version = load_dataset(self.store / "versions" / self.state.current_version)
            validate_decision(self.task_kind, decision, task, version.tokenizer)
            now = self.clock()
            lease = self._leases.get(decision.item_id)
            if lease is not None and lease[1] > now and lease[0] != decision.annotator_id:
                raise LeaseConflictError(
                    f"item {decision.item_id!r} is leased to another annotator"
                )
            for existing in self.submissions(round):
                if (
                    existing.item_id == decision.item_id
                    and existing.annotator_id == decision.annotator_id
                    and existing.choice == decision.choice
                    and existing.new_label == decision.new_label
                ):
                    return {"status": "ok", "duplicate": True}
            self._append_submission(decision)
            self._leases.pop(decision.item_id, None)
            return {"status": "ok", "duplicate": False}

    def round_stats(self, round: int) -> dict:
        with self._lock:
            if not self.round_exists(round):
                raise ValidationError(f"unknown round: {round}")
            queue = self.queue(round)
            decided = {d.item_id for d in self.submissions(round)}
            now = self.clock()
            leased = {
                item_id
                for item_id, (_, expiry) in self._leases.items()
                if expiry > now and item_id not in decided
            }
            by_reason: dict[str, dict[str, int]] = {}
            for task in queue:
                kind = task.reason.get("kind", "unknown")
                bucket = by_reason.setdefault(kind, {"queued": 0, "decided": 0})
                bucket["queued"] += 1
                if task.item_id in decided:
                    bucket["decided"] += 1
            queued = len(queue)
            return {
                "round": round,
                "queued": queued,
                "decided": len(decided),
                "leased": len(leased),
                "remaining": queued - len(decided) - len(leased),
                "by_reason": by_reason,
            }

    def resolve(self, round: int) -> list[ReviewDecision]:
        """Collapse the submission log; requires the round to be closed."""
        with self._lock:
            if not self.round_exists(round):
                raise ValidationError(f"unknown round: {round}")
            if self.open_round() == round:
                raise OpenRoundError(f"round {round} is still open")
            return resolve_decisions(self.submissions(round), self.queue(round))


class ClosedRoundError(ValidationError):
    pass


class OpenRoundError(ValidationError):
    pass


class LeaseConflictError(ValidationError):
    pass


# ---------------------------------------------------------------------------
# HTTP layer


def _error(status: int, message: str) -> Response:
    return Response(
        content=dumps_canonical({"error": message}),
        status_code=status,
        media_type="application/json",
    )


def _json(payload: object, status: int = 200) -> Response:
    return Response(
        content=dumps_canonical(payload),
        status_code=status,
        media_type="application/json",
    )


def create_app(
    store: str | Path,
    lease_seconds: float = DEFAULT_LEASE_SECONDS,
    clock: Callable[[], float] = time.time,
) -> FastAPI:
    review = ReviewStore(store, lease_seconds=lease_seconds, clock=clock)
    app = FastAPI(title="relabel review service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.review = review

    @app.get("/api/v1/queue/next")
    def queue_next(annotator: str = "") -> Response:
        if not annotator:
            return _error(422, "annotator query parameter is required")
        try:
            task = review.lease_next(annotator)
        except ValidationError as exc:
            return _error(409, str(exc))
        if task is None:
            return Response(status_code=204)
        return _json(task_to_json(review.task_kind, task))

    @app.post("/api/v1/decision")
    async def post_decision(request: Request) -> Response:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error(422, "request body is not valid JSON")
        try:
            decision = decision_from_json(review.task_kind, body)
        except DatasetError as exc:
            return _error(422, str(exc))
        try:
            ack = review.submit_decision(decision)
        except (ClosedRoundError, LeaseConflictError) as exc:
            return _error(409, str(exc))
        except DatasetError as exc:
            return _error(422, str(exc))
        return _json(ack)

    @app.get("/api/v1/rounds/{round}/stats")
    def get_stats(round: int) -> Response:
        try:
            return _json(review.round_stats(round))
        except ValidationError as exc:
            return _error(404, str(exc))

    @app.get("/api/v1/rounds/{round}/export")
    def export_round(round: int) -> Response:
        try:
            resolved = review.resolve(round)
        except OpenRoundError as exc:
            return _error(409, str(exc))
        except ValidationError as exc:
            return _error(404, str(exc))
        lines = "".join(
            dumps_canonical(decision_to_json(review.task_kind, d)) + "\n"
            for d in resolved
        )
        return Response(content=lines, media_type="application/jsonl")

    @app.get("/api/v1/state")
    def get_state() -> Response:
        review._reload_state()
        state = review.state
        return _json(
            {
                "task": state.task,
                "round": state.round,
                "open_round": state.open_round,
                "current_version": state.current_version,
            }
        )

    return app


def serve(store: str | Path, addr: str = "127.0.0.1:8765") -> None:
    """Run the review service (blocking)."""
    import uvicorn

    host, _, port = addr.rpartition(":")
    if not host:
        raise ValidationError(f"--addr must be HOST:PORT, got {addr!r}")
    uvicorn.run(create_app(store), host=host, port=int(port), log_level="warning")
