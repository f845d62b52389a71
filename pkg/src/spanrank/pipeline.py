"""Stage functions and the end-to-end run behind the command-line tool.

Configuration is a flat dict with dotted keys (``reader.epochs``,
``reranker.k_test``...). Every stage reads and writes files on disk so any
stage can be rerun or inspected on its own; ``run_pipeline`` chains them.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import metrics, reader, reranker, synth
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .data import ensure_dir, load_corpus, load_predictions, load_questions, load_retrieval, write_jsonl
from .encoder import EncoderConfig
from .tokenizer import Vocab, build_vocab

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _section(prefix: str, cls, skip=("seed",)) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        v = f.default
        out[f"{prefix}.{f.name}"] = list(v) if isinstance(v, tuple) else v
    return out


DEFAULTS: dict = {
    "seed": 0,
    "work_dir": "runs/default",
    "data_dir": None,
    "vocab.max_size": 50000,
    "eval.ks": [1, 5, 10, 25],
    "reranker.init": "reader",
    **_section("synth", synth.SynthSpec),
    **_section("reader", reader.ReaderConfig),
    **_section("reranker", reranker.RerankConfig),
}


def resolve_config(file_config: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then explicit overrides. Unknown keys are errors."""
    cfg = dict(DEFAULTS)
    for source in (file_config or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        unknown = sorted(set(source) - set(DEFAULTS))
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(source)
    return cfg


def _pick(cfg: dict, prefix: str, cls):
    kwargs = {}
    for f in fields(cls):
        key = f"{prefix}.{f.name}"
        if f.name == "seed":
            kwargs["seed"] = int(cfg["seed"])
        elif key in cfg:
            v = cfg[key]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


def synth_spec(cfg: dict) -> synth.SynthSpec:
    return _pick(cfg, "synth", synth.SynthSpec)


def reader_config(cfg: dict) -> reader.ReaderConfig:
    return _pick(cfg, "reader", reader.ReaderConfig)


def rerank_config(cfg: dict) -> reranker.RerankConfig:
    return _pick(cfg, "reranker", reranker.RerankConfig)


def echo_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True)


def stage(name: str):
    """Re-raise any failure inside the wrapped call as a StageError naming the stage."""

    def wrap(fn):
        def run(*args, **kwargs):
            t0 = time.time()
            try:
                out = fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as e:
                raise StageError(name, e) from e
            log.info("%s done in %.1fs", name, time.time() - t0)
            return out

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


@stage("synth-gen")
def synth_gen(spec: synth.SynthSpec, out_dir) -> dict[str, Path]:
    return synth.write(synth.generate(spec), out_dir, spec)


@stage("build-vocab")
def build_vocab_files(corpus_path, question_paths, max_size: int, out_path) -> Vocab:
    texts = [p.text for p in load_corpus(corpus_path).values()]
    for path in question_paths:
        texts += [q.text for q in load_questions(path)]
    vocab = build_vocab(texts, max_size)
    vocab.save(out_path)
    return vocab


def _load_model(path, vocab: Vocab, kind: str):
    header = read_header(path)
    if header["extra"].get("kind") != kind:
        raise ValueError(f"{path} holds a {header['extra'].get('kind')!r} model, expected {kind!r}")
    params, header = load_checkpoint(path, expected_vocab_hash=vocab.hash())
    return params, header["extra"]


@stage("train-reader")
def train_reader_files(questions_path, corpus_path, retrieval_path, vocab_path, config: reader.ReaderConfig, out_path):
    vocab = Vocab.load(vocab_path)
    retrieval = load_retrieval(retrieval_path) if retrieval_path else None
    res = reader.train_reader(load_questions(questions_path), load_corpus(corpus_path), config, vocab, retrieval)
    extra = {"kind": "reader", "config": asdict(config), "loss_history": res.loss_history}
    save_checkpoint(out_path, res.params, vocab.hash(), extra)
    return res


@stage("predict")
def predict_files(checkpoint_path, vocab_path, questions_path, corpus_path, retrieval_path, n: int, out_path):
    vocab = Vocab.load(vocab_path)
    params, extra = _load_model(checkpoint_path, vocab, "reader")
    max_span_len = extra["config"]["max_span_len"]
    preds = reader.predict_all(
        params, vocab, load_questions(questions_path), load_corpus(corpus_path), load_retrieval(retrieval_path), n, max_span_len
    )
    write_jsonl(out_path, preds)
    return preds


@stage("train-reranker")
def train_reranker_files(
    questions_path, predictions_path, vocab_path, config: reranker.RerankConfig, out_path, init_path=None
):
    """Train the re-ranker; ``init_path`` names a checkpoint (normally the
    reader) whose encoder weights are the starting point."""
    vocab = Vocab.load(vocab_path)
    init = None
    if init_path is not None:
        source, _ = load_checkpoint(init_path, expected_vocab_hash=vocab.hash())
        init = reranker.warm_start(source, config.encoder_config(vocab.size), config.seed)
    res = reranker.train(load_questions(questions_path), load_predictions(predictions_path), vocab, config, init)
    extra = {
        "kind": "reranker",
        "config": asdict(config),
        "init": Path(init_path).name if init_path is not None else "random",
        "loss_history": res.loss_history,
        "n_trainable": res.n_trainable,
        "n_skipped": res.n_skipped,
    }
    save_checkpoint(out_path, res.params, vocab.hash(), extra)
    return res


@stage("rerank")
def rerank_files(checkpoint_path, vocab_path, questions_path, predictions_path, k_test: int, out_path):
    vocab = Vocab.load(vocab_path)
    params, _ = _load_model(checkpoint_path, vocab, "reranker")
    results = reranker.rerank_all(params, vocab, load_questions(questions_path), load_predictions(predictions_path), k_test)
    write_jsonl(out_path, (r.to_prediction_set() for r in results))
    return results


def evaluate(predictions, questions, ks=(1, 5, 10, 25), label: str = "") -> dict:
    """EM@1 and the top-k row. Predictions for unknown questions are listed and
    ignored; questions without predictions are listed and count as misses."""
    known = {q.id for q in questions}
    unresolved = sorted({p.question_id for p in predictions if p.question_id not in known})
    kept = [p for p in predictions if p.question_id in known]
    have = {p.question_id for p in kept if p.candidates}
    missing = [q.id for q in questions if q.id not in have]
    row = metrics.oracle_table(kept, questions, ks, label)
    em1 = metrics.top_k_accuracy(kept, questions, 1) if questions else 0.0
    return {"label": label, "em@1": em1, "row": row, "unresolved": unresolved, "missing": missing}


@stage("evaluate")
def evaluate_files(predictions_path, questions_path, ks=(1, 5, 10, 25), label: str = "") -> dict:
    return evaluate(load_predictions(predictions_path), load_questions(questions_path), ks, label)


def format_evaluation(result: dict) -> str:
    lines = [f"EM@1 {result['em@1']:.1f}", metrics.format_rows([result["row"]])]
    if result["unresolved"]:
        lines.append(f"unknown question ids ({len(result['unresolved'])}): {' '.join(result['unresolved'])}")
    if result["missing"]:
        lines.append(f"questions without predictions, counted as misses ({len(result['missing'])}): {' '.join(result['missing'])}")
    return "\n".join(lines)


def run_pipeline(cfg: dict) -> dict:
    """build-vocab, train-reader, predict, train-reranker, rerank, evaluate.

    Without ``data_dir`` a synthetic corpus is generated first. Returns the
    report (also written to ``report.json``) with artifact paths under
    ``"paths"``.
    """
    cfg = resolve_config(cfg)
    work = ensure_dir(cfg["work_dir"])
    (work / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    log.info("resolved config: %s", echo_config(cfg))
    t0 = time.time()

    if cfg["data_dir"] is None:
        data = work / "data"
        synth_gen(synth_spec(cfg), data)
    else:
        data = Path(cfg["data_dir"])
    q = {s: data / f"{s}.questions.jsonl" for s in SPLITS}
    r = {s: data / f"{s}.retrieval.jsonl" for s in SPLITS}
    corpus = data / "corpus.jsonl"
    for path in [corpus, q["train"], q["test"], r["train"], r["test"]]:
        if not path.exists():
            raise StageError("load-data", FileNotFoundError(str(path)))
    splits = [s for s in SPLITS if q[s].exists() and r[s].exists()]

    paths = {
        "vocab": work / "vocab.json",
        "reader": work / "reader.ckpt",
        "reranker": work / "reranker.ckpt",
        "reranked": work / "test.reranked.jsonl",
        **{f"{s}.predictions": work / f"{s}.predictions.jsonl" for s in splits},
    }
    vocab = build_vocab_files(corpus, [q["train"]], cfg["vocab.max_size"], paths["vocab"])
    rcfg, kcfg = reader_config(cfg), rerank_config(cfg)
    kcfg.validate()
    reader_res = train_reader_files(q["train"], corpus, r["train"], paths["vocab"], rcfg, paths["reader"])
    for s in splits:
        predict_files(paths["reader"], paths["vocab"], q[s], corpus, r[s], kcfg.k_train, paths[f"{s}.predictions"])
    if cfg["reranker.init"] not in ("reader", "random"):
        raise StageError("train-reranker", ValueError(f"reranker.init must be 'reader' or 'random', got {cfg['reranker.init']!r}"))
    init_path = paths["reader"] if cfg["reranker.init"] == "reader" else None
    rerank_res = train_reranker_files(
        q["train"], paths["train.predictions"], paths["vocab"], kcfg, paths["reranker"], init_path
    )
    rerank_files(paths["reranker"], paths["vocab"], q["test"], paths["test.predictions"], kcfg.k_test, paths["reranked"])

    ks = cfg["eval.ks"]
    rows = [evaluate_files(paths[f"{s}.predictions"], q[s], ks, f"reader {s}")["row"] for s in splits]
    before = evaluate_files(paths["test.predictions"], q["test"], ks, "test before rerank")
    after = evaluate_files(paths["reranked"], q["test"], ks, "test after rerank")
    report = {
        "config": cfg,
        "vocab_size": vocab.size,
        "reader_loss": reader_res.loss_history,
        "reranker_loss": rerank_res.loss_history,
        "reranker_trainable": rerank_res.n_trainable,
        "reranker_skipped": rerank_res.n_skipped,
        "oracle": {row.dataset_label: row.to_json(4) for row in rows},
        "before": before["row"].to_json(4),
        "after": after["row"].to_json(4),
    }
    (work / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    log.info("pipeline finished in %.1fs", time.time() - t0)
    report["paths"] = {k: str(v) for k, v in paths.items()}
    report["text"] = "\n\n".join(
        ["Oracle (reader top-k)", metrics.format_rows(rows), "Re-ranking", metrics.format_rows([before["row"], after["row"]])]
    )
    return report


def load_config_file(path) -> dict:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data


def encoder_config_of(path) -> EncoderConfig:
    return EncoderConfig(**read_header(path)["config"])
