"""Command-line entry points: ``coveforge <command> [options]``.

Exit codes: 0 success, 2 validation failure (gradcheck), 3 input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .bcn import BCNConfig
from .checkpoint import CheckpointError
from .config import RunConfig, load_config
from .cove import extract_cove, save_cove
from .data import TokenBatch, encode_parallel, label_index, read_parallel, read_tokenized, read_tsv
from .embeddings import (CharNGramEmbedder, EmbeddingTable, FormatError, Vocabulary,
                         char_table_for_vocab, load_pretrained_text)
from .pipeline import (LAYER_CHECKS, load_bcn, load_cove_encoder, load_mt, run_gradcheck, save_bcn,
                       save_mt)
from .seq2seq import EncoderDecoderModel
from .synthetic import write_synthetic
from .training import (Featurizer, MetricsLog, build_bcn, evaluate, exact_match_rate,
                       make_optimizer, train_classifier, train_mt)

logger = logging.getLogger("coveforge")

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT = 0, 2, 3

ABLATIONS = {
    # mode: (cove block, char block)
    "glove": ("zero", False),
    "cove": ("on", False),
    "char": ("zero", True),
    "cove+char": ("on", True),
}


class InputError(Exception):
    pass


def _require(paths: dict[str, str]) -> None:
    missing = [f"{key}={value or '<unset>'}" for key, value in paths.items()
               if not value or not Path(value).is_file()]
    if missing:
        raise InputError("missing input file(s): " + ", ".join(missing))


def _setup(args) -> tuple[RunConfig, Path]:
    cfg = load_config(getattr(args, "config", None), getattr(args, "set", None) or [])
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.precision is not None:
        cfg.run.precision = args.precision
    if args.out_dir is not None:
        cfg.run.out_dir = args.out_dir
    T.set_precision(cfg.run.precision)
    T.set_checked(cfg.run.checked)
    out = Path(cfg.run.out_dir)
    return cfg, out


def _finish_setup(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "resolved_config.ini")


# ---------------------------------------------------------------- commands


def cmd_gen_synthetic(args) -> int:
    cfg, out = _setup(args)
    paths = write_synthetic(args.kind, args.size, cfg.run.seed, out, vocab_size=args.vocab_size,
                            min_len=args.min_len, max_len=args.max_len,
                            valid_size=args.valid_size, vectors_dim=args.vectors_dim)
    cfg.data.vectors = paths["vectors"]
    cfg.data.vectors_dim = args.vectors_dim
    for key in ("src_train", "tgt_train", "src_valid", "tgt_valid", "train_tsv", "valid_tsv"):
        if key in paths:
            setattr(cfg.data, key, paths[key])
    cfg.write(out / "data_config.ini")
    for key, value in sorted(paths.items()):
        print(f"{key}\t{value}")
    return EXIT_OK


def cmd_train_mt(args) -> int:
    cfg, out = _setup(args)
    d = cfg.data
    _require({"data.vectors": d.vectors, "data.src_train": d.src_train, "data.tgt_train": d.tgt_train,
              "data.src_valid": d.src_valid, "data.tgt_valid": d.tgt_valid})
    train_text = read_parallel(d.src_train, d.tgt_train)
    valid_text = read_parallel(d.src_valid, d.tgt_valid)
    if not train_text or not valid_text:
        raise InputError("empty training or validation corpus")
    src_vocab = Vocabulary.build(s for s, _ in train_text)
    tgt_vocab = Vocabulary.build(t for _, t in train_text)
    glove = load_pretrained_text(d.vectors, src_vocab, d.vectors_dim or _vector_dim(d.vectors))
    _finish_setup(cfg, out)

    m = cfg.mt
    rng = np.random.default_rng(cfg.run.seed)
    model = EncoderDecoderModel(glove, len(tgt_vocab), hidden=m.hidden, tgt_dim=m.tgt_dim,
                                dropout=m.dropout, depth=m.depth, rng=rng)
    model.astype(T.get_dtype())
    train_pairs = encode_parallel(train_text, src_vocab, tgt_vocab)
    valid_pairs = encode_parallel(valid_text, src_vocab, tgt_vocab)
    opt = make_optimizer(m.optimizer, m.lr, m.one_shot_halving)
    log = MetricsLog(out / "metrics.jsonl")
    result = train_mt(model, train_pairs, valid_pairs, epochs=m.epochs, batch_size=m.batch_size,
                      rng=rng, optimizer=opt, clip=m.clip, patience=m.patience,
                      bucketing=m.bucketing, max_len=d.max_len,
                      target_accuracy=m.target_accuracy, log=log)
    model.load_state_dict(result.best_state)
    save_mt(out / "mt.ckpt", model, src_vocab, tgt_vocab, opt, cfg.to_dict())
    summary = {"best_epoch": result.best_epoch, "epochs_run": result.epochs_run,
               "valid_perplexity": evaluate(model, valid_pairs, "perplexity"),
               "valid_token_accuracy": evaluate(model, valid_pairs, "token_accuracy"),
               "valid_exact_match": exact_match_rate(model, valid_pairs, d.max_len),
               "coverage": list(glove.coverage or (0, 0))}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def _vector_dim(path: str) -> int:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().split()
    if len(first) < 2:
        raise InputError(f"{path}: cannot infer vector dimension")
    return len(first) - 1


def cmd_eval_mt(args) -> int:
    cfg, out = _setup(args)
    _require({"--checkpoint": args.checkpoint, "--src": args.src, "--tgt": args.tgt})
    model, src_vocab, tgt_vocab, _ = load_mt(args.checkpoint)
    pairs = encode_parallel(read_parallel(args.src, args.tgt), src_vocab, tgt_vocab)
    result = {"perplexity": evaluate(model, pairs, "perplexity"),
              "token_accuracy": evaluate(model, pairs, "token_accuracy"),
              "exact_match": exact_match_rate(model, pairs, args.max_len)}
    _finish_setup(cfg, out)
    (out / "eval_mt.json").write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result))
    return EXIT_OK


def cmd_extract_cove(args) -> int:
    cfg, out = _setup(args)
    _require({"--checkpoint": args.checkpoint, "--input": args.input})
    enc, vocab, _ = load_cove_encoder(args.checkpoint)
    sents = [s for s in read_tokenized(args.input)]
    records = []
    for start in range(0, len(sents), 64):
        chunk = sents[start:start + 64]
        nonempty = [s for s in chunk if s]
        vecs = iter([])
        if nonempty:
            tb = TokenBatch.from_sequences([vocab.encode(s) for s in nonempty])
            arr = extract_cove(enc, tb)
            vecs = iter(arr[b, :n] for b, n in enumerate(tb.lengths))
        for s in chunk:
            records.append(next(vecs) if s else np.zeros((0, enc.width)))
    output = Path(args.output) if args.output else out / "cove.bin"
    output.parent.mkdir(parents=True, exist_ok=True)
    save_cove(output, records, enc.width)
    print(f"wrote {len(records)} record(s) of width {enc.width} to {output}")
    return EXIT_OK


def _classification_inputs(cfg: RunConfig, checkpoint: str | None):
    d = cfg.data
    needs = {"data.train_tsv": d.train_tsv, "data.valid_tsv": d.valid_tsv}
    if checkpoint:
        needs["--checkpoint"] = checkpoint
    else:
        needs["data.vectors"] = d.vectors
    _require(needs)
    train_rows, valid_rows = read_tsv(d.train_tsv), read_tsv(d.valid_tsv)
    if not train_rows or not valid_rows:
        raise InputError("empty classification split")
    if checkpoint:
        cove, vocab, _ = load_cove_encoder(checkpoint)
        glove = cove.src_table
    else:
        cove = None
        vocab = Vocabulary.build(ex.text + (ex.text2 or []) for ex in train_rows)
        glove = load_pretrained_text(d.vectors, vocab, d.vectors_dim or _vector_dim(d.vectors))
    return train_rows, valid_rows, vocab, glove, cove


def _encode_rows(rows, vocab: Vocabulary, labels: list[str]):
    warned = False
    ids = []
    for ex in rows:
        if ex.label in labels:
            ids.append(labels.index(ex.label))
        else:
            if not warned:
                logger.warning("unknown label %r at evaluation; scored as incorrect", ex.label)
                warned = True
            ids.append(-1)
    x = [vocab.encode(ex.text) for ex in rows]
    pair = any(ex.text2 is not None for ex in rows)
    y = [vocab.encode(ex.text2 or ex.text) for ex in rows] if pair else None
    return x, ids, y


def cmd_train_classify(args) -> int:
    cfg, out = _setup(args)
    checkpoint = args.checkpoint or cfg.cove.checkpoint or None
    b = cfg.bcn
    modes = list(args.ablation.split(",")) if args.ablation else list(b.ablation) or [b.features]
    unknown = [m for m in modes if m not in ABLATIONS]
    if unknown:
        raise InputError(f"unknown feature mode(s) {unknown}; choose from {sorted(ABLATIONS)}")
    if checkpoint is None and any(ABLATIONS[m][0] == "on" for m in modes):
        raise InputError("CoVe feature modes need --checkpoint (or cove.checkpoint)")
    train_rows, valid_rows, vocab, glove, cove = _classification_inputs(cfg, checkpoint)
    _finish_setup(cfg, out)

    labels = label_index(train_rows)
    x_tr, y_lab_tr, y_tr = _encode_rows(train_rows, vocab, labels)
    x_va, y_lab_va, y_va = _encode_rows(valid_rows, vocab, labels)
    char_table = None
    if any(ABLATIONS[m][1] for m in modes):
        char = CharNGramEmbedder.create(b.char_dim, b.char_buckets, seed=cfg.run.seed)
        char_table = char_table_for_vocab(char, vocab)

    frozen_before = _frozen_checksums(glove, cove)
    summary = []
    for mode in modes:
        cove_mode, use_char = ABLATIONS[mode]
        if cove is None:
            cove_mode = "off"
        feat = Featurizer(glove, cove, char_table if use_char else None, cove_mode)
        train_set = feat.featurize(x_tr, y_lab_tr, y_tr)
        valid_set = feat.featurize(x_va, y_lab_va, y_va)
        bcfg = BCNConfig(input_dim=train_set.width, classes=len(labels), f_dim=b.f_dim,
                         hidden=b.hidden, integ_hidden=b.integ_hidden, f_depth=b.f_depth,
                         activation=b.activation, channels=b.channels,
                         reductions=tuple(b.reductions), dropout=b.dropout)
        model = build_bcn(bcfg, cfg.run.seed).astype(T.get_dtype())
        log = MetricsLog(out / f"metrics_{mode}.jsonl")
        result = train_classifier(model, train_set, valid_set, epochs=b.epochs,
                                  batch_size=b.batch_size, rng=np.random.default_rng(cfg.run.seed + 1),
                                  lr=b.lr, patience=b.patience, log=log)
        model.load_state_dict(result.best_state)
        save_bcn(out / f"bcn_{mode}.ckpt", model, vocab, labels, glove, cove,
                 char_table if use_char else None, cove_mode, cfg.to_dict())
        summary.append((mode, result.best_value, result.best_epoch))
    if _frozen_checksums(glove, cove) != frozen_before:
        print("error: frozen embeddings or MT-LSTM changed during classifier training", file=sys.stderr)
        return EXIT_VALIDATION
    lines = ["mode\tbest_valid_accuracy\tbest_epoch"]
    lines += [f"{m}\t{acc:.4f}\t{ep}" for m, acc, ep in summary]
    (out / "ablation_summary.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _frozen_checksums(glove: EmbeddingTable, cove) -> tuple[str, str | None]:
    return glove.checksum(), None if cove is None else cove.checksum()


def cmd_eval_classify(args) -> int:
    cfg, out = _setup(args)
    _require({"--checkpoint": args.checkpoint, "--tsv": args.tsv})
    model, vocab, labels, glove, cove, char, cove_mode = load_bcn(args.checkpoint)
    rows = read_tsv(args.tsv)
    x, y_lab, y = _encode_rows(rows, vocab, labels)
    feats = Featurizer(glove, cove, char, cove_mode).featurize(x, y_lab, y)
    acc = evaluate(model, feats, "accuracy")
    _finish_setup(cfg, out)
    (out / "eval_classify.json").write_text(json.dumps({"accuracy": acc}) + "\n")
    print(json.dumps({"accuracy": acc}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    target = args.target
    if target not in ("mt", "bcn") and not (
            target.startswith("layer:") and target[6:] in LAYER_CHECKS):
        raise InputError(f"unknown target {target!r}; use mt, bcn or layer:<{'|'.join(LAYER_CHECKS)}>")
    max_entries = None if args.max_entries <= 0 else args.max_entries
    report = run_gradcheck(target, seed=args.seed or 0, eps=args.eps, tol=args.tol,
                           max_entries=max_entries)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_VALIDATION


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coveforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config: bool = True):
        if config:
            p.add_argument("--config", help="INI file with [run]/[data]/[mt]/[bcn]/[cove] sections")
            p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                           help="override a config value (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--precision", choices=["f32", "f64"])
        p.add_argument("--out-dir")
        return p

    p = common(sub.add_parser("gen-synthetic", help="write a synthetic corpus"), config=False)
    p.add_argument("--kind", required=True, choices=["copy_mt", "reverse_mt", "context_cls"])
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--valid-size", type=int)
    p.add_argument("--vocab-size", type=int, default=12)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--vectors-dim", type=int, default=16)
    p.set_defaults(func=cmd_gen_synthetic)

    p = common(sub.add_parser("train-mt", help="train the attentional translation model"))
    p.set_defaults(func=cmd_train_mt)

    p = common(sub.add_parser("eval-mt", help="score a translation checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--max-len", type=int, default=50)
    p.set_defaults(func=cmd_eval_mt)

    p = common(sub.add_parser("extract-cove", help="write context vectors for tokenized lines"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_extract_cove)

    p = common(sub.add_parser("train-classify", help="train the biattentive classifier"))
    p.add_argument("--checkpoint", help="translation checkpoint supplying the frozen MT-LSTM")
    p.add_argument("--ablation", help="comma list of feature modes: " + ",".join(ABLATIONS))
    p.set_defaults(func=cmd_train_classify)

    p = common(sub.add_parser("eval-classify", help="score a classifier checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tsv", required=True)
    p.set_defaults(func=cmd_eval_classify)

    p = common(sub.add_parser("gradcheck", help="finite-difference gradient check"), config=False)
    p.add_argument("target", help="mt | bcn | layer:<name>")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=40,
                   help="coordinates probed per parameter (<= 0 probes all)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, FormatError, CheckpointError, FileNotFoundError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
