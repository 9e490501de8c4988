"""Desk-scale experiments shared by ``scripts/`` and the acceptance tests."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bcn import BCNConfig, BCNModel
from .cove import CoveEncoder
from .data import encode_parallel
from .embeddings import EmbeddingTable, Vocabulary
from .seq2seq import EncoderDecoderModel
from .synthetic import (bag_of_words_baseline, gen_context_cls, gen_copy_mt, gen_reverse_mt,
                        gen_vectors, make_tokens)
from .training import (Featurizer, MetricsLog, evaluate, exact_match_rate, make_optimizer,
                       train_classifier, train_mt)


def shared_vocab(vocab_size: int, dim: int = 16, seed: int = 1) -> tuple[Vocabulary, EmbeddingTable]:
    """Vocabulary over the synthetic tokens and a fixed random table for it."""
    tokens = make_tokens(vocab_size)
    vocab = Vocabulary(tokens)
    vectors = gen_vectors(tokens, dim, np.random.default_rng(seed))
    matrix = np.zeros((len(vocab), dim))
    for tok in tokens:
        matrix[vocab.id(tok)] = vectors[tok]
    return vocab, EmbeddingTable(matrix)


@dataclass
class MTRun:
    kind: str
    epochs_run: int
    token_accuracy: float
    exact_match: float
    seconds: float
    model: EncoderDecoderModel
    vocab: Vocabulary
    table: EmbeddingTable
    log: MetricsLog


def run_mt_task(kind: str = "copy_mt", size: int = 200, vocab_size: int = 12, max_len: int = 8,
                epochs: int = 50, seed: int = 0, hidden: int = 32, batch_size: int = 10,
                lr: float = 0.01, dropout: float = 0.2, score_pairs: int | None = None) -> MTRun:
    """Train on a synthetic copy/reverse corpus and score on its own training pairs.

    Validation (used for early stopping) is the training set itself, since the
    question is whether the model can fit the task. ``score_pairs`` limits how
    many pairs are scored each epoch.
    """
    gen = {"copy_mt": gen_copy_mt, "reverse_mt": gen_reverse_mt}[kind]
    rng = np.random.default_rng(seed)
    src, tgt = gen(size, vocab_size, 1, max_len, rng)
    vocab, table = shared_vocab(vocab_size)
    pairs = encode_parallel(list(zip(src, tgt)), vocab, vocab)
    model = EncoderDecoderModel(table, len(vocab), hidden=hidden, tgt_dim=16, dropout=dropout, rng=rng)
    log = MetricsLog()
    start = time.perf_counter()
    result = train_mt(model, pairs, pairs[:score_pairs] if score_pairs else pairs, epochs=epochs,
                      batch_size=batch_size, rng=rng, optimizer=make_optimizer("adam", lr),
                      patience=epochs, bucketing=False, target_accuracy=0.999, log=log)
    model.load_state_dict(result.best_state)
    acc = evaluate(model, pairs, "token_accuracy")
    exact = exact_match_rate(model, pairs, max_len=max_len + 2)
    return MTRun(kind, result.epochs_run, acc, exact, time.perf_counter() - start, model, vocab,
                 table, log)


@dataclass
class TransferResult:
    mt: MTRun
    bow_accuracy: float
    # seed -> {"cove": acc, "zero": acc}
    per_seed: dict[int, dict[str, float]] = field(default_factory=dict)
    checksums_stable: bool = True
    seconds: float = 0.0

    def wins(self, margin: float = 0.02) -> int:
        return sum(r["cove"] - r["zero"] >= margin for r in self.per_seed.values())


def run_transfer(seeds=range(5), vocab_size: int = 12, mt_size: int = 1000, train_size: int = 2000,
                 valid_size: int = 500, epochs: int = 12, hidden: int = 16,
                 batch_size: int = 32) -> TransferResult:
    """Reverse-MT encoder as frozen CoVe vs. the same BCN with the CoVe block zeroed."""
    start = time.perf_counter()
    mt = run_mt_task("reverse_mt", size=mt_size, vocab_size=vocab_size, epochs=100, score_pairs=200)
    enc = CoveEncoder.from_model(mt.model)
    vocab, glove = mt.vocab, mt.table
    train_rows = gen_context_cls(train_size, vocab_size, 5, 8, np.random.default_rng(5))
    valid_rows = gen_context_cls(valid_size, vocab_size, 5, 8, np.random.default_rng(6))
    out = TransferResult(mt, bag_of_words_baseline(train_rows, valid_rows))
    labels = sorted({lab for lab, _ in train_rows})
    before = (glove.checksum(), enc.checksum())

    def featurize(mode: str, rows):
        feat = Featurizer(glove, enc, cove_mode=mode)
        return feat.featurize([vocab.encode(t) for _, t in rows], [labels.index(l) for l, _ in rows])

    sets = {mode: (featurize(mode, train_rows), featurize(mode, valid_rows)) for mode in ("on", "zero")}
    for seed in seeds:
        scores = {}
        for mode, name in (("on", "cove"), ("zero", "zero")):
            ftr, fva = sets[mode]
            cfg = BCNConfig(input_dim=ftr.width, classes=len(labels), f_dim=hidden, hidden=hidden,
                            integ_hidden=hidden, dropout=0.2)
            model = BCNModel(cfg, np.random.default_rng(seed))
            res = train_classifier(model, ftr, fva, epochs=epochs, batch_size=batch_size,
                                   rng=np.random.default_rng(seed + 100), patience=epochs)
            scores[name] = res.best_value
        out.per_seed[seed] = scores
    out.checksums_stable = (glove.checksum(), enc.checksum()) == before
    out.seconds = time.perf_counter() - start
    return out
