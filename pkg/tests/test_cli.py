import json
import logging

import pytest

from coveforge import cli
from coveforge.cli import main
from coveforge.cove import load_cove

SMALL_MT = ["--set", "mt.hidden=4", "--set", "mt.tgt_dim=4", "--set", "mt.epochs=2",
            "--set", "mt.batch_size=8", "--set", "mt.optimizer=adam", "--set", "mt.lr=0.01"]
SMALL_BCN = ["--set", "bcn.f_dim=4", "--set", "bcn.hidden=3", "--set", "bcn.integ_hidden=2",
             "--set", "bcn.epochs=2", "--set", "bcn.char_dim=4", "--set", "bcn.char_buckets=97"]


def mt_data_flags(d):
    return ["--set", f"data.vectors={d}/vectors.txt",
            "--set", f"data.src_train={d}/train.src", "--set", f"data.tgt_train={d}/train.tgt",
            "--set", f"data.src_valid={d}/valid.src", "--set", f"data.tgt_valid={d}/valid.tgt"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-synthetic", "--kind", "reverse_mt", "--size", "24", "--seed", "1",
                 "--out-dir", str(root / "mt_data")]) == 0
    assert main(["gen-synthetic", "--kind", "context_cls", "--size", "20", "--valid-size", "8",
                 "--seed", "2", "--out-dir", str(root / "cls_data")]) == 0
    assert main(["train-mt", "--precision", "f64", "--out-dir", str(root / "mt"), *SMALL_MT,
                 *mt_data_flags(root / "mt_data")]) == 0
    return root


def test_train_mt_outputs(workdir):
    out = workdir / "mt"
    for name in ("mt.ckpt", "metrics.jsonl", "resolved_config.ini", "summary.json"):
        assert (out / name).is_file()
    records = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    assert {r["metric"] for r in records} == {"loss", "perplexity", "token_accuracy"}
    assert all(set(r) == {"epoch", "split", "metric", "value", "lr"} for r in records)
    assert "hidden = 4" in (out / "resolved_config.ini").read_text()


def test_same_seed_same_metrics(workdir):
    again = workdir / "mt_again"
    assert main(["train-mt", "--precision", "f64", "--out-dir", str(again), *SMALL_MT,
                 *mt_data_flags(workdir / "mt_data")]) == 0
    assert (again / "metrics.jsonl").read_bytes() == (workdir / "mt" / "metrics.jsonl").read_bytes()


def test_missing_inputs_fail_before_work(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train-mt", "--out-dir", str(out), "--set", "data.src_train=/nope"]) == 3
    assert "data.src_train=/nope" in capsys.readouterr().err
    assert not out.exists()


def test_eval_mt(workdir, capsys):
    d = workdir / "mt_data"
    assert main(["eval-mt", "--checkpoint", str(workdir / "mt" / "mt.ckpt"), "--src", f"{d}/valid.src",
                 "--tgt", f"{d}/valid.tgt", "--out-dir", str(workdir / "eval")]) == 0
    assert {"perplexity", "token_accuracy", "exact_match"} <= set(json.loads(capsys.readouterr().out))


def test_extract_cove_one_record_per_line(workdir):
    src = workdir / "mt_data" / "valid.src"
    out = workdir / "cove.bin"
    assert main(["extract-cove", "--checkpoint", str(workdir / "mt" / "mt.ckpt"), "--input", str(src),
                 "--output", str(out), "--out-dir", str(workdir / "x")]) == 0
    lines = src.read_text().splitlines()
    recs = load_cove(out)
    assert [r.shape for r in recs] == [(len(l.split()), 8) for l in lines]


def test_extract_cove_rejects_non_checkpoint(workdir, tmp_path):
    bogus = tmp_path / "bad.ckpt"
    bogus.write_text("hello\n")
    assert main(["extract-cove", "--checkpoint", str(bogus), "--input",
                 str(workdir / "mt_data" / "valid.src"), "--out-dir", str(tmp_path)]) == 3


def test_classify_ablation_and_eval(workdir, caplog):
    d = workdir / "cls_data"
    out = workdir / "cls"
    assert main(["train-classify", "--checkpoint", str(workdir / "mt" / "mt.ckpt"), "--out-dir", str(out),
                 "--ablation", "glove,cove,char,cove+char", "--set", f"data.train_tsv={d}/train.tsv",
                 "--set", f"data.valid_tsv={d}/valid.tsv", *SMALL_BCN]) == 0
    rows = (out / "ablation_summary.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in rows] == ["mode", "glove", "cove", "char", "cove+char"]
    for mode in ("glove", "cove", "char", "cove+char"):
        assert (out / f"bcn_{mode}.ckpt").is_file()

    odd = workdir / "odd.tsv"
    lines = (d / "valid.tsv").read_text().splitlines()
    odd.write_text("\n".join(["Z\t" + lines[0].split("\t")[1]] * 2 + lines) + "\n")
    with caplog.at_level(logging.WARNING):
        assert main(["eval-classify", "--checkpoint", str(out / "bcn_cove.ckpt"), "--tsv", str(odd),
                     "--out-dir", str(workdir / "ec")]) == 0
    assert sum("unknown label" in r.message for r in caplog.records) == 1
    acc = json.loads((workdir / "ec" / "eval_classify.json").read_text())["accuracy"]
    assert acc <= len(lines) / (len(lines) + 2)


def test_cove_mode_needs_checkpoint(workdir):
    d = workdir / "cls_data"
    assert main(["train-classify", "--out-dir", str(workdir / "nc"), "--ablation", "cove",
                 "--set", f"data.train_tsv={d}/train.tsv", "--set", f"data.valid_tsv={d}/valid.tsv"]) == 3


def test_changed_frozen_weights_is_validation_failure(workdir, monkeypatch, capsys):
    calls = iter([("a", "b"), ("a", "changed")])
    monkeypatch.setattr(cli, "_frozen_checksums", lambda glove, cove: next(calls))
    d = workdir / "cls_data"
    assert main(["train-classify", "--checkpoint", str(workdir / "mt" / "mt.ckpt"),
                 "--out-dir", str(workdir / "drift"), "--ablation", "glove",
                 "--set", f"data.train_tsv={d}/train.tsv", "--set", f"data.valid_tsv={d}/valid.tsv",
                 *SMALL_BCN]) == 2
    assert "changed during classifier training" in capsys.readouterr().err


def test_unknown_ablation_mode(workdir):
    assert main(["train-classify", "--out-dir", str(workdir / "u"), "--ablation", "elmo"]) == 3


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "layer:affine"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["gradcheck", "layer:affine", "--tol", "1e-30"]) == 2
    assert "FAIL" in capsys.readouterr().out
    assert main(["gradcheck", "layer:nothing"]) == 3
