"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 a check ran but failed (``gradcheck`` above tolerance).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import Sentence, TagScheme, TaskKind
from .data import (Dataset, Record, RECORD_KEY, convert, dataset_diff, dataset_stats,
                   read_dataset, write_dataset)
from .encoder import load_external_embeddings
from .errors import DataError, EasqeError, ParseError
from .evaluation import evaluate, mean_reports
from .pipeline import predict
from .tagger import Mode, TaggerModel
from .training import DEFAULT_SCHEMES, TrainConfig, gradient_check, random_gradcheck_case, train

log = logging.getLogger("easqe")

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _default_seed() -> int:
    raw = os.environ.get("EASQE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"EASQE_SEED must be an integer, got {raw!r}") from None


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--mode", choices=[m.value for m in Mode])
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--epochs", dest="max_epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--max-len", dest="max_len", type=int)
    g.add_argument("--emb-dim", dest="emb_dim", type=int)
    g.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    g.add_argument("--embeddings", help="external embedding file (replaces the built-in encoder)")
    g.add_argument("--stage2-scheme", dest="stage2_scheme",
                   choices=["STAGE2_EASQE", "STAGE2_ASPECT"],
                   help="override the stage-two tag scheme (e.g. quad-trained ASTE)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="easqe", description="Two-stage opinion quadruple extraction.")
    parser.add_argument("--config", help="JSON file of option defaults; flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--task", choices=[t.value for t in TaskKind])
    p.add_argument("--stage", type=int, choices=[1, 2])
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--out")
    _add_train_flags(p)

    p = sub.add_parser("predict", help="run both stages over a file")
    p.add_argument("--task", choices=[t.value for t in TaskKind])
    p.add_argument("--model1")
    p.add_argument("--model2")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--embeddings")

    p = sub.add_parser("eval", help="score models, or train and score --runs seeds")
    p.add_argument("--task", choices=[t.value for t in TaskKind])
    p.add_argument("--data", help="gold test file")
    p.add_argument("--model1")
    p.add_argument("--model2")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--runs", type=int)
    p.add_argument("--out")
    _add_train_flags(p)

    p = sub.add_parser("convert", help="project annotations to a coarser task")
    p.add_argument("--from", dest="src", choices=["easqe", "aste"])
    p.add_argument("--to", dest="dst", choices=["aste", "ope"])
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--legacy", action="store_true", help="input is a legacy triplet file")

    p = sub.add_parser("stats", help="corpus statistics of an EASQE file")
    p.add_argument("--data")
    p.add_argument("--out")

    p = sub.add_parser("diff", help="percentage of annotations in --new absent from --old")
    p.add_argument("--new")
    p.add_argument("--old")
    p.add_argument("--old-legacy", dest="old_legacy", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--length", type=int)
    p.add_argument("--out")
    return parser


DEFAULTS = {"runs": 1, "epsilon": 1e-5, "length": 5}


def _merge_config(args: argparse.Namespace) -> None:
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"{args.config}: {e}") from None
        if not isinstance(cfg, dict):
            raise DataError(f"{args.config}: config must be a JSON object")
        for key, value in cfg.items():
            if not hasattr(args, key):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if getattr(args, key) is None:
                setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    if hasattr(args, "seed") and args.seed is None:
        args.seed = _default_seed()


def _require(args, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command}: missing " + ", ".join("--" + m for m in missing))


def _train_config(args) -> TrainConfig:
    fields = ("mode", "lr", "batch_size", "max_epochs", "patience", "seed", "max_len",
              "emb_dim", "hidden_dim")
    kwargs = {f: getattr(args, f) for f in fields if getattr(args, f, None) is not None}
    try:
        return TrainConfig(**kwargs)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _store(args):
    return load_external_embeddings(args.embeddings) if getattr(args, "embeddings", None) else None


def detect_task(path) -> TaskKind:
    """Task of a JSONL file, from the annotation key of its first record."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ParseError(lineno, str(e)) from None
                for task, key in RECORD_KEY.items():
                    if isinstance(obj, dict) and key in obj:
                        return task
                raise ParseError(lineno, "no quads/triples/pairs key")
    return TaskKind.EASQE


def read_any(path, task: Optional[TaskKind] = None, legacy: bool = False) -> Dataset:
    if legacy:
        return read_dataset(path, TaskKind.ASTE, legacy=True)
    return read_dataset(path, task or detect_task(path))


def read_sentences(path) -> list[Sentence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(Sentence(obj["id"], obj["tokens"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(lineno, str(e)) from None
    return out


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _scheme(args, task: TaskKind, stage: int) -> TagScheme:
    if stage == 2 and getattr(args, "stage2_scheme", None):
        return TagScheme[args.stage2_scheme]
    return DEFAULT_SCHEMES[task][stage - 1]


def _load_train_dev(args, task: TaskKind):
    train_set = convert(read_any(args.train), task)
    dev_set = convert(read_any(args.dev), task)
    if _scheme(args, task, 2) is TagScheme.STAGE2_EASQE and task is not TaskKind.EASQE:
        # quad-trained stage two needs the quadruple annotations
        return train_set, dev_set, read_any(args.train, TaskKind.EASQE), \
            read_any(args.dev, TaskKind.EASQE)
    return train_set, dev_set, train_set, dev_set


def cmd_train(args) -> int:
    _require(args, "task", "stage", "train", "dev", "out")
    task = TaskKind(args.task)
    config = _train_config(args)
    tr, dv, tr2, dv2 = _load_train_dev(args, task)
    if args.stage == 2:
        tr, dv = tr2, dv2
    history: list = []
    model = train(tr, dv, args.stage, task, config, scheme=_scheme(args, task, args.stage),
                  store=_store(args), history=history)
    model.save(args.out)
    best = max(h["dev_f1"] for h in history)
    print(f"trained stage {args.stage} {model.scheme.name} ({config.mode.value}) "
          f"for {len(history)} epochs, best dev span F1 {best:.4f} -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    _require(args, "task", "model1", "model2", "data", "out")
    task = TaskKind(args.task)
    store = _store(args)
    m1 = TaggerModel.load(args.model1, store)
    m2 = TaggerModel.load(args.model2, store)
    sentences = read_sentences(args.data)
    records = [Record(s, frozenset(predict(m1, m2, s, task))) for s in sentences]
    out = Dataset(task, records, name="predictions")
    write_dataset(out, args.out)
    print(f"{len(records)} sentences, {out.annotation_count()} {RECORD_KEY[task]} -> {args.out}")
    return 0


def _train_pair(args, task: TaskKind, seed: int):
    config = TrainConfig(**{**_train_config(args).to_dict(), "seed": seed})
    tr, dv, tr2, dv2 = _load_train_dev(args, task)
    store = _store(args)
    m1 = train(tr, dv, 1, task, config, scheme=_scheme(args, task, 1), store=store)
    m2 = train(tr2, dv2, 2, task, config, scheme=_scheme(args, task, 2), store=store)
    return m1, m2


def cmd_eval(args) -> int:
    _require(args, "task", "data")
    task = TaskKind(args.task)
    gold = read_any(args.data)
    if args.model1 or args.model2:
        _require(args, "model1", "model2")
        store = _store(args)
        report = evaluate(TaggerModel.load(args.model1, store),
                          TaggerModel.load(args.model2, store), gold, task)
        print(report.table())
        if args.out:
            _write_json(args.out, report.to_json())
        return 0
    _require(args, "train", "dev")
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    reports = []
    for run in range(args.runs):
        seed = args.seed + run
        m1, m2 = _train_pair(args, task, seed)
        rep = evaluate(m1, m2, gold, task)
        reports.append(rep)
        main_row = rep.rows[next(iter(rep.rows))]
        print(f"run {run + 1}/{args.runs} seed {seed}: P {main_row.precision:.4f} "
              f"R {main_row.recall:.4f} F1 {main_row.f1:.4f}")
    mean = mean_reports(reports)
    print(f"mean over {args.runs} runs")
    for name, row in mean.items():
        print(f"  {name:<14} P {row['precision']:.4f} R {row['recall']:.4f} F1 {row['f1']:.4f}")
    if args.out:
        _write_json(args.out, {"task": task.value,
                               "seeds": [args.seed + i for i in range(args.runs)],
                               "runs": [r.to_json() for r in reports], "mean": mean})
    return 0


def cmd_convert(args) -> int:
    _require(args, "dst", "data", "out")
    src = read_any(args.data, legacy=args.legacy)
    if args.src and src.task is not TaskKind(args.src):
        raise DataError(f"{args.data} holds {src.task.value} annotations, not {args.src}")
    out = convert(src, args.dst)
    write_dataset(out, args.out)
    print(f"{len(out)} sentences, {out.annotation_count()} {RECORD_KEY[out.task]} -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    _require(args, "data")
    st = dataset_stats(read_any(args.data, TaskKind.EASQE))
    print(f"#S {st.sentence_count}  #Q {st.quad_count}  co-occurrence {st.co_occurrence_pct:.2f}%")
    if args.out:
        _write_json(args.out, {"sentences": st.sentence_count, "quads": st.quad_count,
                               "co_occurrence_pct": st.co_occurrence_pct})
    return 0


def cmd_diff(args) -> int:
    _require(args, "new", "old")
    pct = dataset_diff(read_any(args.new), read_any(args.old, legacy=args.old_legacy))
    print(f"newly supplemented: {pct:.2f}%")
    if args.out:
        _write_json(args.out, {"supplement_pct": pct})
    return 0


def cmd_gradcheck(args) -> int:
    results = {}
    for scheme in TagScheme:
        for mode in Mode:
            model, inst = random_gradcheck_case(args.seed, scheme, mode, length=args.length)
            results[f"{scheme.name}/{mode.value}"] = gradient_check(model, inst, args.epsilon)
    worst = max(results.values())
    for name, err in results.items():
        print(f"{name:<22} max relative error {err:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    if args.out:
        _write_json(args.out, {"seed": args.seed, "epsilon": args.epsilon,
                               "errors": results, "max": worst})
    return 0 if worst < GRADCHECK_TOL else 3


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
            "convert": cmd_convert, "stats": cmd_stats, "diff": cmd_diff,
            "gradcheck": cmd_gradcheck}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _merge_config(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (EasqeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
