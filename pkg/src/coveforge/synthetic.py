"""Desk-scale synthetic corpora: copy/reverse translation and a context-dependent classifier task."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .embeddings import write_vectors

_SYLLABLES = ["ka", "lo", "mi", "tu", "re", "sa", "no", "vi", "pe", "zu", "da", "fo", "gi", "hu"]


def make_tokens(n: int) -> list[str]:
    """``n`` distinct pseudo-words (two syllables each, then three)."""
    out = []
    k = len(_SYLLABLES)
    i = 0
    while len(out) < n:
        if i < k * k:
            out.append(_SYLLABLES[i // k] + _SYLLABLES[i % k])
        else:
            j = i - k * k
            out.append(_SYLLABLES[j // (k * k) % k] + _SYLLABLES[j // k % k] + _SYLLABLES[j % k])
        i += 1
    return out


def random_sentences(size: int, tokens: list[str], min_len: int, max_len: int,
                     rng: np.random.Generator) -> list[list[str]]:
    lengths = rng.integers(min_len, max_len + 1, size=size)
    return [[tokens[j] for j in rng.integers(0, len(tokens), size=n)] for n in lengths]


def gen_copy_mt(size: int, vocab_size: int = 12, min_len: int = 1, max_len: int = 8,
                rng: np.random.Generator | None = None):
    rng = rng or np.random.default_rng(0)
    src = random_sentences(size, make_tokens(vocab_size), min_len, max_len, rng)
    return src, [list(s) for s in src]


def gen_reverse_mt(size: int, vocab_size: int = 12, min_len: int = 1, max_len: int = 8,
                   rng: np.random.Generator | None = None):
    rng = rng or np.random.default_rng(0)
    src = random_sentences(size, make_tokens(vocab_size), min_len, max_len, rng)
    return src, [s[::-1] for s in src]


def context_roles(vocab_size: int) -> dict[str, list[str]]:
    """Split the shared vocabulary into the ambiguous token, two cue sets, and fillers."""
    if vocab_size < 6:
        raise ValueError("context_cls needs at least 6 tokens")
    tokens = make_tokens(vocab_size)
    k = max(1, (vocab_size - 1) // 4)
    return {"ambiguous": [tokens[0]], "cue_a": tokens[1:1 + k], "cue_b": tokens[1 + k:1 + 2 * k],
            "filler": tokens[1 + 2 * k:]}


def gen_context_cls(size: int, vocab_size: int = 12, min_len: int = 5, max_len: int = 8,
                    rng: np.random.Generator | None = None) -> list[tuple[str, list[str]]]:
    """Label = which cue set sits immediately left of the ambiguous token.

    One cue from each set occurs in every sentence, so word counts carry no
    label information; only the ambiguous token's left neighbor does.
    """
    rng = rng or np.random.default_rng(0)
    roles = context_roles(vocab_size)
    q = roles["ambiguous"][0]
    rows = []
    for _ in range(size):
        n = int(rng.integers(max(min_len, 3), max_len + 1))
        label = "A" if rng.random() < 0.5 else "B"
        near, far = ("cue_a", "cue_b") if label == "A" else ("cue_b", "cue_a")
        sent = [roles["filler"][j] for j in rng.integers(0, len(roles["filler"]), size=n)]
        p = int(rng.integers(1, n))
        sent[p] = q
        sent[p - 1] = roles[near][int(rng.integers(len(roles[near])))]
        other = [i for i in range(n) if i not in (p, p - 1)]
        sent[other[int(rng.integers(len(other)))]] = roles[far][int(rng.integers(len(roles[far])))]
        rows.append((label, sent))
    return rows


def gen_vectors(tokens: list[str], dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Stand-in for pretrained vectors: fixed random unit-scale rows."""
    return {t: rng.normal(0.0, 1.0 / np.sqrt(dim), size=dim) for t in tokens}


def bag_of_words_baseline(train_rows, test_rows, seed: int = 0) -> float:
    """Test accuracy of a logistic-regression classifier on token counts."""
    from sklearn.feature_extraction.text import CountVectorizer
    from sklearn.linear_model import LogisticRegression

    vec = CountVectorizer(tokenizer=str.split, lowercase=False, token_pattern=None)
    xtr = vec.fit_transform([" ".join(t) for _, t in train_rows])
    xte = vec.transform([" ".join(t) for _, t in test_rows])
    clf = LogisticRegression(max_iter=1000, random_state=seed)
    clf.fit(xtr, [lab for lab, _ in train_rows])
    return float(clf.score(xte, [lab for lab, _ in test_rows]))


def write_lines(path: Path, sents) -> None:
    path.write_text("".join(" ".join(s) + "\n" for s in sents), encoding="utf-8")


def write_synthetic(kind: str, size: int, seed: int, out_dir: str | Path, vocab_size: int = 12,
                    min_len: int = 1, max_len: int = 8, valid_size: int | None = None,
                    vectors_dim: int = 16) -> dict[str, str]:
    """Write train/valid files plus a vectors file for the vocabulary; returns paths."""
    if size < 1:
        raise ValueError("size must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    valid_size = valid_size if valid_size is not None else max(1, size // 4)
    paths: dict[str, str] = {}
    if kind in ("copy_mt", "reverse_mt"):
        gen = gen_copy_mt if kind == "copy_mt" else gen_reverse_mt
        for split, n in (("train", size), ("valid", valid_size)):
            src, tgt = gen(n, vocab_size, min_len, max_len, rng)
            write_lines(out / f"{split}.src", src)
            write_lines(out / f"{split}.tgt", tgt)
            paths[f"src_{split}"] = str(out / f"{split}.src")
            paths[f"tgt_{split}"] = str(out / f"{split}.tgt")
    elif kind == "context_cls":
        for split, n in (("train", size), ("valid", valid_size)):
            rows = gen_context_cls(n, vocab_size, max(min_len, 3), max_len, rng)
            (out / f"{split}.tsv").write_text(
                "".join(f"{lab}\t{' '.join(t)}\n" for lab, t in rows), encoding="utf-8")
            paths[f"{split}_tsv"] = str(out / f"{split}.tsv")
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    # vectors derive from their own seed so every corpus over a vocabulary shares them
    vectors = gen_vectors(make_tokens(vocab_size), vectors_dim, np.random.default_rng(10_000 + vocab_size))
    write_vectors(out / "vectors.txt", vectors)
    paths["vectors"] = str(out / "vectors.txt")
    return paths
