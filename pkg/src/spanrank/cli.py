"""Command-line entry point: ``spanrank <command> [options]``.

Hyperparameters use the dotted keys of the pipeline config (``--reader.epochs
3``). A ``--config`` JSON file supplies the same keys; explicit flags win.
Every command logs its resolved configuration, and a failing stage exits
nonzero with the stage name in the message.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from .data import load_predictions, load_questions
from .metrics import format_rows, report_json

log = logging.getLogger("spanrank")

SECTIONS = {
    "synth-gen": ("synth",),
    "train-reader": ("reader",),
    "train-reranker": ("reranker",),
    "pipeline": ("synth", "reader", "reranker", "vocab", "eval"),
}
_TOP_LEVEL = {"pipeline": ("work_dir", "data_dir")}


def _add_config_flags(p: argparse.ArgumentParser, command: str) -> None:
    sections = SECTIONS[command]
    keys = ["seed", *_TOP_LEVEL.get(command, ())]
    keys += [k for k in pipeline.DEFAULTS if k.split(".")[0] in sections]
    if command != "pipeline" and "reranker.init" in keys:
        keys.remove("reranker.init")  # train-reranker takes --init-checkpoint instead
    p.add_argument("--config", help="JSON file of dotted config keys")
    for key in keys:
        default = pipeline.DEFAULTS[key]
        flag = "--" + key.replace("_", "-") if "." not in key else "--" + key
        if isinstance(default, list):
            p.add_argument(flag, dest=key, type=int, nargs="+", default=None)
        elif default is None or isinstance(default, str):
            p.add_argument(flag, dest=key, default=None)
        else:
            p.add_argument(flag, dest=key, type=type(default), default=None)
    p.set_defaults(_config_keys=keys)


def _resolved(args) -> dict:
    file_cfg = pipeline.load_config_file(args.config) if args.config else {}
    keys = set(args._config_keys)
    if args.command != "pipeline":
        file_cfg = {k: v for k, v in file_cfg.items() if k in keys}
    cfg = pipeline.resolve_config(file_cfg, {k: getattr(args, k) for k in keys})
    if args.command == "pipeline":
        return cfg  # run_pipeline echoes and saves it
    cfg = {k: v for k, v in cfg.items() if k in keys}
    log.info("resolved config: %s", pipeline.echo_config(cfg))
    return cfg


def _echo(args, **values) -> None:
    log.info("resolved config: %s", json.dumps(values, sort_keys=True, default=str))


def cmd_synth_gen(args) -> int:
    cfg = _resolved(args)
    spec = pipeline.synth_spec(cfg)
    paths = pipeline.synth_gen(spec, args.out)
    for name, path in sorted(paths.items()):
        print(f"{name}\t{path}")
    return 0


def cmd_build_vocab(args) -> int:
    _echo(args, corpus=args.corpus, questions=args.questions, max_size=args.max_size, out=args.out)
    vocab = pipeline.build_vocab_files(args.corpus, args.questions or [], args.max_size, args.out)
    print(f"vocab size {vocab.size}, hash {vocab.hash()[:12]}")
    return 0


def cmd_train_reader(args) -> int:
    cfg = _resolved(args)
    res = pipeline.train_reader_files(
        args.questions, args.corpus, args.retrieval, args.vocab, pipeline.reader_config(cfg), args.out
    )
    print(f"trained on {res.n_trainable} questions ({len(res.skipped)} skipped); loss per epoch "
          + " ".join(f"{x:.4f}" for x in res.loss_history))
    return 0


def cmd_predict(args) -> int:
    _echo(args, checkpoint=args.checkpoint, questions=args.questions, n=args.n, out=args.out)
    preds = pipeline.predict_files(args.checkpoint, args.vocab, args.questions, args.corpus, args.retrieval, args.n, args.out)
    print(f"wrote {len(preds)} prediction sets to {args.out}")
    return 0


def cmd_train_reranker(args) -> int:
    cfg = _resolved(args)
    res = pipeline.train_reranker_files(
        args.questions, args.predictions, args.vocab, pipeline.rerank_config(cfg), args.out, args.init_checkpoint
    )
    print(f"trained on {res.n_trainable} questions ({res.n_skipped} skipped); loss per epoch "
          + " ".join(f"{x:.4f}" for x in res.loss_history))
    return 0


def cmd_rerank(args) -> int:
    _echo(args, checkpoint=args.checkpoint, predictions=args.predictions, k_test=args.k_test, out=args.out)
    results = pipeline.rerank_files(args.checkpoint, args.vocab, args.questions, args.predictions, args.k_test, args.out)
    print(f"re-ranked {len(results)} questions into {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    _echo(args, predictions=args.predictions, questions=args.questions, ks=args.ks)
    result = pipeline.evaluate_files(args.predictions, args.questions, args.ks, args.label)
    if args.json:
        print(json.dumps({
            "em@1": round(result["em@1"], 4),
            "top_k": result["row"].to_json(4),
            "unresolved": result["unresolved"],
            "missing": result["missing"],
        }, indent=2))
    else:
        print(pipeline.format_evaluation(result))
    return 0


@pipeline.stage("oracle")
def _oracle_rows(questions_path, prediction_paths, labels, ks):
    questions = load_questions(questions_path)
    rows = []
    for path, label in zip(prediction_paths, labels):
        res = pipeline.evaluate(load_predictions(path), questions, ks, label)
        rows.append(res["row"])
    return rows


def cmd_oracle(args) -> int:
    labels = args.labels or args.predictions
    if len(labels) != len(args.predictions):
        raise SystemExit("error: --labels must match --predictions one to one")
    _echo(args, predictions=args.predictions, questions=args.questions, ks=args.ks)
    rows = _oracle_rows(args.questions, args.predictions, labels, args.ks)
    print(report_json(rows) if args.json else format_rows(rows))
    return 0


def cmd_pipeline(args) -> int:
    cfg = _resolved(args)
    report = pipeline.run_pipeline(cfg)
    print(report["text"])
    print(f"\nartifacts in {cfg['work_dir']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spanrank", description="Span-focused answer re-ranking toolkit")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic corpus with close false positives")
    p.add_argument("--out", required=True)
    _add_config_flags(p, "synth-gen")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("build-vocab", help="build the vocabulary from a corpus and question files")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", nargs="*")
    p.add_argument("--max-size", type=int, default=pipeline.DEFAULTS["vocab.max_size"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train-reader", help="train the baseline reader")
    for name in ("questions", "corpus", "vocab", "out"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--retrieval", help="retrieved passage ids per question; without it the whole corpus is searched")
    _add_config_flags(p, "train-reader")
    p.set_defaults(func=cmd_train_reader)

    p = sub.add_parser("predict", help="write the reader's top-N span predictions")
    for name in ("checkpoint", "vocab", "questions", "corpus", "retrieval", "out"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--n", type=int, default=pipeline.DEFAULTS["reranker.k_train"])
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("train-reranker", help="train the span-focused re-ranker on reader predictions")
    for name in ("questions", "predictions", "vocab", "out"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--init-checkpoint", help="start from this checkpoint's encoder (e.g. the reader)")
    _add_config_flags(p, "train-reranker")
    p.set_defaults(func=cmd_train_reranker)

    p = sub.add_parser("rerank", help="re-rank the top K_test candidates of a prediction file")
    for name in ("checkpoint", "vocab", "questions", "predictions", "out"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--k-test", type=int, default=pipeline.DEFAULTS["reranker.k_test"])
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("evaluate", help="EM@1 and top-k accuracy of a prediction file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--ks", type=int, nargs="+", default=[1, 5, 10, 25])
    p.add_argument("--label", default="")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="top-k table for one or more prediction files")
    p.add_argument("--questions", required=True)
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--ks", type=int, nargs="+", default=[1, 5, 10, 25])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("pipeline", help="synth-gen (optional), build-vocab, train, predict, re-rank, evaluate")
    _add_config_flags(p, "pipeline")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except pipeline.StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (KeyError, ValueError, OSError) as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
