"""Command-line entry point wiring the whole pipeline.

Exit codes: 0 success, 1 validation error (bad arguments or data that
violates an invariant), 2 I/O or format error (unreadable files, hash
mismatches). Read commands accept ``--format {human,json}``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .baseline import TrainConfig, load_model, predict
from .dataset import (
    FormatError,
    HistoryEntry,
    Item,
    ValidationError,
    diff_versions,
    dumps_canonical,
    item_from_json,
    label_from_json,
    load_dataset,
    make_version,
)
from .detectors import DetectorConfig, load_predictions, save_predictions
from .loop import LoopEngine
from .review import decision_from_json
from .sim import run_simulation
from .tokens import DEFAULT_TOKENIZER


class _Parser(argparse.ArgumentParser):
    # spec'd exit contract: usage problems are validation errors (1), not 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_store(parser):
    parser.add_argument(
        "--store",
        default=os.environ.get("RELABEL_STORE"),
        help="loop store directory (default: $RELABEL_STORE)",
    )


def _store_path(args) -> Path:
    if not args.store:
        raise ValidationError("--store is required (or set RELABEL_STORE)")
    return Path(args.store)


def _add_format(parser):
    parser.add_argument("--format", choices=("human", "json"), default="human")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relabel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", parents=[], help="create a store from an items file")
    _add_store(p)
    p.add_argument("--task", required=True)
    p.add_argument("--input", required=True, help="items JSONL file")
    p.add_argument("--tokenizer", default=DEFAULT_TOKENIZER)

    p = sub.add_parser("train-baseline", help="train the built-in model on the current version")
    _add_store(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-6)

    p = sub.add_parser("predict", help="write predictions for the current version")
    _add_store(p)
    p.add_argument("--model", help="checkpoint path (default: the store's model)")
    p.add_argument("--out", help="output preds.jsonl (default: inside the store)")

    p = sub.add_parser("detect", help="flag noisy items and build the review queue")
    _add_store(p)
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--predictions", help="external preds.jsonl (default: train baseline)")
    p.add_argument("--seed", type=int, default=0, help="training/queue-ordering seed")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--generation-mode", choices=("common-token", "bleu"), default="common-token")
    p.add_argument("--bleu-threshold", type=float, default=0.3)
    p.add_argument("--ctr-threshold", type=float, default=0.9)
    p.add_argument("--entity-class", default=None)

    p = sub.add_parser("queue", help="show the review queue of a round")
    _add_store(p)
    _add_format(p)
    p.add_argument("--round", type=int, required=True)

    p = sub.add_parser("serve", help="run the review HTTP service")
    _add_store(p)
    p.add_argument("--addr", default="127.0.0.1:8765", help="HOST:PORT")
    p.add_argument("--lease-seconds", type=float, default=600.0)

    p = sub.add_parser("merge", help="close the open round and derive the next version")
    _add_store(p)
    p.add_argument("--round", type=int, required=True)
    p.add_argument(
        "--decisions",
        help="decisions JSONL (default: the round's submission log)",
    )

    p = sub.add_parser("simulate", help="synthetic end-to-end run with a simulated annotator")
    _add_store(p)
    _add_format(p)
    p.add_argument("--task", default="classification")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--annotator-accuracy", type=float, default=0.98)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("metrics", help="show per-round metric history")
    _add_store(p)
    _add_format(p)

    p = sub.add_parser("diff", help="diff two dataset versions")
    _add_store(p)
    _add_format(p)
    p.add_argument("--from", dest="from_version", required=True)
    p.add_argument("--to", dest="to_version", required=True)

    return parser


# ---------------------------------------------------------------------------
# subcommand implementations


def _read_items(path: Path, task: str):
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "label_history" in obj:
                items.append(item_from_json(task, obj))
            else:
                label = label_from_json(task, obj["label"])
                items.append(
                    Item(
                        id=str(obj["id"]),
                        payload=obj["payload"],
                        label=label,
                        label_history=(HistoryEntry(0, "import", label),),
                        split=str(obj.get("split", "train")),
                    )
                )
    return items


def cmd_init(args) -> int:
    store = _store_path(args)
    items = _read_items(Path(args.input), args.task)
    version = make_version("v0", args.task, items, tokenizer=args.tokenizer)
    LoopEngine.init_store(store, version)
    print(f"initialized store {store} with {len(items)} items (version v0, round 0)")
    return 0


def cmd_train_baseline(args) -> int:
    engine = LoopEngine(_store_path(args))
    cfg = TrainConfig(
        epochs=args.epochs, learning_rate=args.learning_rate, seed=args.seed, l2=args.l2
    )
    model, path = engine.train_baseline(cfg)
    print(f"trained {model.model_id} -> {path}")
    return 0


def cmd_predict(args) -> int:
    engine = LoopEngine(_store_path(args))
    version = engine.current_version()
    model_path = args.model or engine.state.model_ref
    if not model_path or not Path(model_path).is_file():
        raise ValidationError("no model checkpoint; run train-baseline or pass --model")
    model = load_model(model_path)
    preds = predict(model, version)
    out = Path(args.out) if args.out else engine.store / f"preds-round-{version.round + 1}.jsonl"
    save_predictions(version.task, preds, out)
    print(f"wrote {len(preds)} predictions -> {out}")
    return 0


def cmd_detect(args) -> int:
    engine = LoopEngine(_store_path(args))
    expected = engine.state.round + 1
    if args.round != expected:
        raise ValidationError(f"stale round {args.round}; the next round is {expected}")
    cfg = DetectorConfig(
        task=engine.state.task,
        iou_threshold=args.iou_threshold,
        generation_mode=args.generation_mode,
        bleu_threshold=args.bleu_threshold,
        ctr_threshold=args.ctr_threshold,
        entity_class_filter=args.entity_class,
    )
    predictions = None
    if args.predictions:
        predictions = load_predictions(engine.state.task, args.predictions)
    flags, queue = engine.run_round(
        cfg,
        predictions=predictions,
        train_cfg=TrainConfig(seed=args.seed),
        queue_seed=args.seed,
    )
    print(
        f"round {args.round}: {len(flags)} flags, {len(queue)} queued "
        f"-> {engine.round_dir(args.round)}"
    )
    return 0


def cmd_queue(args) -> int:
    engine = LoopEngine(_store_path(args))
    queue = engine.load_queue(args.round)
    if args.format == "json":
        from .review import task_to_json

        for task in queue:
            print(dumps_canonical(task_to_json(engine.state.task, task)))
    else:
        for task in queue:
            print(
                f"[{task.queue_position}] {task.item_id} "
                f"reason={task.reason.get('kind')} mode={task.mode}"
            )
        print(f"{len(queue)} queued tasks in round {args.round}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(_store_path(args), addr=args.addr)
    return 0


def cmd_merge(args) -> int:
    engine = LoopEngine(_store_path(args))
    if engine.state.open_round != args.round:
        raise ValidationError(
            f"round {args.round} is not open (open round: {engine.state.open_round})"
        )
    decisions_path = (
        Path(args.decisions)
        if args.decisions
        else engine.round_dir(args.round) / "submissions.jsonl"
    )
    decisions = []
    if decisions_path.is_file():
        with open(decisions_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    decisions.append(
                        decision_from_json(engine.state.task, json.loads(line))
                    )
    state = engine.apply_round(decisions)
    record = state.history[-1]
    print(
        f"merged round {args.round}: {record.decisions_applied} decisions, "
        f"{record.items_dropped} drops -> version {state.current_version} "
        f"(dev metric: {record.dev_metric})"
    )
    return 0


def cmd_simulate(args) -> int:
    store = _store_path(args)
    report = run_simulation(
        store,
        task=args.task,
        n=args.n,
        classes=args.classes,
        noise_rate=args.noise,
        annotator_accuracy=args.annotator_accuracy,
        rounds=args.rounds,
        seed=args.seed,
    )
    if args.format == "json":
        print(dumps_canonical(report.rows))
    else:
        print(report.csv_text(), end="")
    return 0


def cmd_metrics(args) -> int:
    engine = LoopEngine(_store_path(args))
    state = engine.state
    if args.format == "json":
        payload = {
            "task": state.task,
            "round": state.round,
            "current_version": state.current_version,
            "baseline_dev_metric": state.baseline_dev_metric,
            "history": [record.to_json() for record in state.history],
        }
        print(dumps_canonical(payload))
    else:
        print(f"task={state.task} round={state.round} version={state.current_version}")
        print(f"baseline dev metric: {state.baseline_dev_metric}")
        for record in state.history:
            print(
                f"round {record.round}: flags={record.flags_emitted} "
                f"decisions={record.decisions_applied} dropped={record.items_dropped} "
                f"dev={record.dev_metric}"
            )
    return 0


def cmd_diff(args) -> int:
    store = _store_path(args)
    a = load_dataset(store / "versions" / args.from_version)
    b = load_dataset(store / "versions" / args.to_version)
    entries = diff_versions(a, b)
    if args.format == "json":
        from .dataset import label_to_json

        for entry in entries:
            print(
                dumps_canonical(
                    {
                        "item_id": entry.item_id,
                        "old_label": label_to_json(a.task, entry.old_label),
                        "new_label": None
                        if entry.new_label is None
                        else label_to_json(a.task, entry.new_label),
                        "dropped": entry.dropped,
                    }
                )
            )
    else:
        for entry in entries:
            if entry.dropped:
                print(f"{entry.item_id}: {entry.old_label!r} -> dropped")
            else:
                print(f"{entry.item_id}: {entry.old_label!r} -> {entry.new_label!r}")
        print(f"{len(entries)} changed items")
    return 0


_COMMANDS = {
    "init": cmd_init,
    "train-baseline": cmd_train_baseline,
    "predict": cmd_predict,
    "detect": cmd_detect,
    "queue": cmd_queue,
    "serve": cmd_serve,
    "merge": cmd_merge,
    "simulate": cmd_simulate,
    "metrics": cmd_metrics,
    "diff": cmd_diff,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
