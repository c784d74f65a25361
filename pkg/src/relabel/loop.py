"""Round orchestration: predict, detect, queue, merge, repeat.

A loop store is one directory owned by a single engine instance (guarded by a
lock file):

    store/
      state.json              round counter, lineage, metric history
      versions/v0/, v1/, ...  immutable dataset versions (+ model checkpoints)
      round-1/, round-2/, ... flags, queue, predictions, decisions, metrics

``run_round`` opens round N: it obtains predictions (training the built-in
baseline when none are supplied), detects noisy items against the current
version, and writes the sorted review queue. ``apply_round`` closes it: it
merges resolved decisions (and ctr drops) into the next version, recomputes
the dev metric and appends the round record. The dev split is frozen: no
operation here ever touches a dev label.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .baseline import TrainConfig, load_model, predict, save_model, train
from .dataset import (
    FORMAT_VERSION,
    DatasetVersion,
    ValidationError,
    derive_version,
    dumps_canonical,
    load_dataset,
    save_version,
)
from .detectors import (
    DetectorConfig,
    NoiseFlag,
    Prediction,
    detect,
    load_flags,
    save_flags,
    save_predictions,
)
from .metrics import PRF1, accuracy, auc
from .review import (
    ReviewDecision,
    ReviewTask,
    build_queue,
    decision_from_json,
    decision_to_json,
    resolve_decisions,
    task_from_json,
    task_to_json,
)

STATE_NAME = "state.json"
LOCK_NAME = ".lock"


class StoreLockedError(ValidationError):
    """Another loop instance owns this store directory."""


@dataclass(frozen=True)
class RoundRecord:
    round: int
    flags_emitted: int
    decisions_applied: int
    items_dropped: int
    dev_metric: float | None
    detector_config: dict

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "flags_emitted": self.flags_emitted,
            "decisions_applied": self.decisions_applied,
            "items_dropped": self.items_dropped,
            "dev_metric": self.dev_metric,
            "detector_config": self.detector_config,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RoundRecord":
        return cls(
            round=obj["round"],
            flags_emitted=obj["flags_emitted"],
            decisions_applied=obj["decisions_applied"],
            items_dropped=obj["items_dropped"],
            dev_metric=obj["dev_metric"],
            detector_config=obj["detector_config"],
        )


@dataclass
class LoopState:
    task: str
    round: int
    current_version: str
    model_ref: str | None
    history: list[RoundRecord]
    open_round: int | None = None
    baseline_dev_metric: float | None = None
    last_pred_dev_metric: float | None = None
    last_round_source: str | None = None
    train_config: dict | None = None

    def to_json(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "task": self.task,
            "round": self.round,
            "current_version": self.current_version,
            "model_ref": self.model_ref,
            "open_round": self.open_round,
            "baseline_dev_metric": self.baseline_dev_metric,
            "last_pred_dev_metric": self.last_pred_dev_metric,
            "last_round_source": self.last_round_source,
            "train_config": self.train_config,
            "history": [record.to_json() for record in self.history],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LoopState":
        return cls(
            task=obj["task"],
            round=obj["round"],
            current_version=obj["current_version"],
            model_ref=obj.get("model_ref"),
            history=[RoundRecord.from_json(r) for r in obj.get("history", [])],
            open_round=obj.get("open_round"),
            baseline_dev_metric=obj.get("baseline_dev_metric"),
            last_pred_dev_metric=obj.get("last_pred_dev_metric"),
            last_round_source=obj.get("last_round_source"),
            train_config=obj.get("train_config"),
        )


def dev_metric(version: DatasetVersion, preds: Sequence[Prediction]) -> float | None:
    """Task metric over the frozen dev split: accuracy, span micro-F1 or AUC.

    Returns None when the task has no dev metric (generation, detection) or
    when the predictions do not cover the dev split.
    """
    dev = version.dev_items()
    by_item = {p.item_id: p for p in preds}
    if not dev or any(item.id not in by_item for item in dev):
        return None
    if version.task == "classification":
        return accuracy(
            [item.label for item in dev], [by_item[item.id].value for item in dev]
        )
    if version.task == "tagging":
        tp = fp = fn = 0
        for item in dev:
            gold = set(item.label)
            predicted = set(by_item[item.id].value)
            tp += len(gold & predicted)
            fp += len(predicted - gold)
            fn += len(gold - predicted)
        return PRF1.from_counts(tp, fp, fn).f1
    if version.task == "ctr":
        labels = [item.label for item in dev]
        if len(set(labels)) < 2:
            return None
        return auc(labels, [by_item[item.id].score for item in dev])
    return None


class store_lock:
    """Exclusive ownership of a store directory via an O_EXCL lock file."""

    def __init__(self, store: str | Path):
        self.path = Path(store) / LOCK_NAME
        self._fd = None

    def __enter__(self) -> "store_lock":
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLockedError(f"store is locked by another instance: {self.path}")
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
            self.path.unlink(missing_ok=True)


class LoopEngine:
    """Owns one store directory and advances it round by round."""

    def __init__(self, store: str | Path):
        self.store = Path(store)
        self.state = self._load_state()

    # -- store plumbing ----------------------------------------------------

    @classmethod
    def init_store(cls, store: str | Path, version: DatasetVersion) -> "LoopEngine":
        store = Path(store)
        if (store / STATE_NAME).exists():
            raise ValidationError(f"store already initialized: {store}")
        if version.round != 0:
            raise ValidationError("stores are initialized from a round-0 version")
        store.mkdir(parents=True, exist_ok=True)
        save_version(version, store / "versions" / version.version_id)
        state = LoopState(
            task=version.task,
            round=0,
            current_version=version.version_id,
            model_ref=None,
            history=[],
        )
        (store / STATE_NAME).write_text(
            dumps_canonical(state.to_json()) + "\n", encoding="utf-8"
        )
        return cls(store)

    def _load_state(self) -> LoopState:
        path = self.store / STATE_NAME
        if not path.is_file():
            raise ValidationError(f"not a loop store (no {STATE_NAME}): {self.store}")
        return LoopState.from_json(json.loads(path.read_text(encoding="utf-8")))

    def _save_state(self) -> None:
        (self.store / STATE_NAME).write_text(
            dumps_canonical(self.state.to_json()) + "\n", encoding="utf-8"
        )

    def version_dir(self, version_id: str) -> Path:
        return self.store / "versions" / version_id

    def round_dir(self, round: int) -> Path:
        return self.store / f"round-{round}"

    def current_version(self) -> DatasetVersion:
        return load_dataset(self.version_dir(self.state.current_version))

    def load_version(self, version_id: str) -> DatasetVersion:
        return load_dataset(self.version_dir(version_id))

    # -- model handling ----------------------------------------------------

    def _train_config(self, cfg: TrainConfig | None) -> TrainConfig:
        if cfg is not None:
            self.state.train_config = {
                "epochs": cfg.epochs,
                "learning_rate": cfg.learning_rate,
                "seed": cfg.seed,
                "l2": cfg.l2,
            }
            return cfg
        if self.state.train_config is not None:
            return TrainConfig(**self.state.train_config)
        cfg = TrainConfig()
        self.state.train_config = {
            "epochs": cfg.epochs,
            "learning_rate": cfg.learning_rate,
            "seed": cfg.seed,
            "l2": cfg.l2,
        }
        return cfg

    def model_for_version(self, version: DatasetVersion, cfg: TrainConfig):
        """Train (or reuse the cached checkpoint of) the baseline for a version."""
        path = self.version_dir(version.version_id) / "model.bin"
        if path.is_file():
            return load_model(path), path
        model = train(version, cfg)
        save_model(model, path)
        return model, path

    def train_baseline(self, cfg: TrainConfig | None = None):
        """Train the baseline on the current version and record the checkpoint."""
        tcfg = self._train_config(cfg)
        model, path = self.model_for_version(self.current_version(), tcfg)
        self.state.model_ref = str(path)
        self._save_state()
        return model, path

    # -- round lifecycle ----------------------------------------------------

    def run_round(
        self,
        cfg: DetectorConfig,
        predictions: Sequence[Prediction] | None = None,
        train_cfg: TrainConfig | None = None,
        queue_seed: int = 0,
    ) -> tuple[list[NoiseFlag], list[ReviewTask]]:
        """Open round N: flag noisy train items and build the review queue.

        Re-running for the already-open round is permitted and, being
        deterministic, overwrites the round files identically.
        """
        if cfg.task != self.state.task:
            raise ValidationError(
                f"detector task {cfg.task!r} does not match store task {self.state.task!r}"
            )
        round = self.state.round + 1
        version = self.current_version()

        with store_lock(self.store):
            if predictions is None:
                tcfg = self._train_config(train_cfg)
                model, path = self.model_for_version(version, tcfg)
                predictions = predict(model, version, round=round)
                self.state.model_ref = str(path)
                self.state.last_round_source = "baseline"
            else:
                rounds = {p.round for p in predictions}
                if rounds and rounds != {round}:
                    raise ValidationError(
                        f"predictions are for round {sorted(rounds)}, expected {round}"
                    )
                model_ids = {p.model_id for p in predictions}
                self.state.model_ref = sorted(model_ids)[0] if model_ids else None
                self.state.last_round_source = "external"

            self.state.last_pred_dev_metric = dev_metric(version, predictions)
            if round == 1:
                self.state.baseline_dev_metric = self.state.last_pred_dev_metric

            flags = detect(version, predictions, cfg)
            by_item = {p.item_id: p.value for p in predictions}
            queue = build_queue(version, flags, by_item, round, seed=queue_seed)
            drops = sorted(f.item_id for f in flags if f.action == "drop")

            rdir = self.round_dir(round)
            rdir.mkdir(parents=True, exist_ok=True)
            save_flags(flags, rdir / f"flags-round-{round}.jsonl")
            save_predictions(version.task, predictions, rdir / "preds.jsonl")
            with open(rdir / "queue.jsonl", "w", encoding="utf-8") as fh:
                for task in queue:
                    fh.write(dumps_canonical(task_to_json(version.task, task)) + "\n")
            (rdir / "drops.json").write_text(dumps_canonical(drops) + "\n")
            (rdir / "config.json").write_text(dumps_canonical(cfg.to_json()) + "\n")

            self.state.open_round = round
            self._save_state()
        return flags, queue

    def load_queue(self, round: int) -> list[ReviewTask]:
        path = self.round_dir(round) / "queue.jsonl"
        if not path.is_file():
            raise ValidationError(f"no queue for round {round}")
        queue = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    queue.append(task_from_json(self.state.task, json.loads(line)))
        return queue

    def apply_round(self, decisions: Sequence[ReviewDecision]) -> LoopState:
        """Close the open round: merge decisions and drops, record metrics.

        The recorded dev metric is the retrained baseline's performance on the
        new version; when predictions came from an external model it is the
        dev performance of the predictions consumed this round instead.
        """
        round = self.state.open_round
        if round is None:
            raise ValidationError("no open round to apply")
        for decision in decisions:
            if decision.round != round:
                raise ValidationError(
                    f"decision for round {decision.round}, open round is {round}"
                )

        with store_lock(self.store):
            version = self.current_version()
            rdir = self.round_dir(round)
            queue = self.load_queue(round)
            flags = load_flags(rdir / f"flags-round-{round}.jsonl")
            drops = json.loads((rdir / "drops.json").read_text())

            resolved = resolve_decisions(decisions, queue)
            child = derive_version(version, resolved, drops)
            save_version(child, self.version_dir(child.version_id))
            with open(rdir / "decisions.jsonl", "w", encoding="utf-8") as fh:
                for decision in resolved:
                    fh.write(
                        dumps_canonical(decision_to_json(self.state.task, decision)) + "\n"
                    )

            baseline_mode = self.state.last_round_source == "baseline"
            if baseline_mode and child.task in ("classification", "tagging", "ctr"):
                tcfg = self._train_config(None)
                model, path = self.model_for_version(child, tcfg)
                metric = dev_metric(child, predict(model, child, round=round + 1))
                self.state.model_ref = str(path)
            else:
                metric = self.state.last_pred_dev_metric

            record = RoundRecord(
                round=round,
                flags_emitted=len(flags),
                decisions_applied=len(resolved),
                items_dropped=len(drops),
                dev_metric=metric,
                detector_config=json.loads((rdir / "config.json").read_text()),
            )
            (rdir / "metrics.json").write_text(
                dumps_canonical(record.to_json()) + "\n"
            )
            self.state.history.append(record)
            self.state.round = round
            self.state.current_version = child.version_id
            self.state.open_round = None
            self._save_state()
        return self.state

    def should_stop(self, epsilon: float = 0.01, max_rounds: int = 5) -> bool:
        """True when the last round flagged fewer than epsilon of train items
        or the round budget is exhausted."""
        if not self.state.history:
            raise ValidationError("no completed round yet")
        if self.state.round >= max_rounds:
            return True
        last = self.state.history[-1]
        scanned = self.load_version(f"v{last.round - 1}")
        train_count = len(scanned.train_items())
        if train_count == 0:
            return True
        return last.flags_emitted / train_count < epsilon

    # -- replay ---------------------------------------------------------------

    def replay(self) -> DatasetVersion:
        """Re-derive the current version from v0 plus the recorded decisions.

        Returns the replayed version; raises if any recomputed version hash
        differs from the stored one.
        """
        version = self.load_version("v0")
        for record in self.state.history:
            rdir = self.round_dir(record.round)
            decisions = []
            path = rdir / "decisions.jsonl"
            if path.is_file():
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if line:
                            decisions.append(
                                decision_from_json(self.state.task, json.loads(line))
                            )
            drops = json.loads((rdir / "drops.json").read_text())
            version = derive_version(version, decisions, drops)
            stored = self.load_version(version.version_id)
            if stored.content_hash != version.content_hash:
                raise ValidationError(
                    f"replay diverged at {version.version_id}: "
                    f"{version.content_hash} != {stored.content_hash}"
                )
        return version
