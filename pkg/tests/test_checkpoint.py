import numpy as np
import pytest

from coveforge import tensor as T
from coveforge.bcn import BCNConfig, BCNModel, classify_forward
from coveforge.checkpoint import (CheckpointError, load_checkpoint, load_into, save_checkpoint,
                                  subset)
from coveforge.cove import CoveEncoder, concat_inputs, extract_cove
from coveforge.data import TokenBatch
from coveforge.embeddings import EmbeddingTable, Vocabulary
from coveforge.optim import Adam
from coveforge.pipeline import load_bcn, load_cove_encoder, load_mt, save_bcn, save_mt
from coveforge.seq2seq import EncoderDecoderModel, encode, teacher_forced_loss


def mt_model(rng, precision="f32"):
    with T.precision(precision):
        table = EmbeddingTable(rng.normal(size=(9, 3)))
        model = EncoderDecoderModel(table, 8, hidden=2, tgt_dim=3, dropout=0.1, rng=rng)
        return model.astype(T.get_dtype())


SRC = TokenBatch.from_sequences([[4, 5, 6], [7]])
TGT = TokenBatch.from_sequences([[2, 4, 3], [2, 5, 6, 3]])


def test_raw_round_trip(tmp_path, rng):
    params = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=4).astype(np.float32),
              "s": np.array(1.5)}
    save_checkpoint(tmp_path / "c", params, {"k": 1})
    back, meta = load_checkpoint(tmp_path / "c")
    assert meta == {"k": 1}
    for k in params:
        assert back[k].dtype == params[k].dtype
        np.testing.assert_array_equal(back[k], params[k])


def test_edited_manifest_shape_is_named(tmp_path, rng):
    save_checkpoint(tmp_path / "c", {"enc.W": rng.normal(size=(2, 3))})
    data = (tmp_path / "c").read_bytes().replace(b"enc.W f64 2,3", b"enc.W f64 3,2")
    (tmp_path / "c").write_bytes(data)
    with pytest.raises(CheckpointError, match="enc.W"):
        load_checkpoint(tmp_path / "c", expected_shapes={"enc.W": (2, 3)})


def test_shape_mismatch_on_load_into(tmp_path, rng):
    model = mt_model(rng)
    state = model.state_dict()
    state["out_proj.W"] = np.zeros((3, 3), dtype=np.float32)
    with pytest.raises(CheckpointError, match="out_proj.W"):
        load_into(model, state)


def test_truncated_and_trailing(tmp_path, rng):
    save_checkpoint(tmp_path / "c", {"w": rng.normal(size=10)})
    raw = (tmp_path / "c").read_bytes()
    (tmp_path / "c").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "c")
    (tmp_path / "c").write_bytes(raw + b"x")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "c")


def test_bad_magic_and_version(tmp_path):
    (tmp_path / "c").write_bytes(b"NOPE\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c")
    (tmp_path / "c").write_bytes(b"COVEFORGE1\nversion 9\n")
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(tmp_path / "c")


def test_meta_mismatch(tmp_path):
    save_checkpoint(tmp_path / "c", {}, {"hidden": 4})
    with pytest.raises(CheckpointError, match="hidden"):
        load_checkpoint(tmp_path / "c", expected_meta={"hidden": 8})


def test_subset_strips_prefix():
    params = {"encoder.a": 1, "encoder.b": 2, "decoder.a": 3}
    assert subset(params, "encoder.") == {"a": 1, "b": 2}


@pytest.mark.parametrize("precision", ["f32", "f64"])
def test_mt_round_trip_forward_is_bitwise(tmp_path, rng, precision):
    model = mt_model(rng, precision)
    opt = Adam(lr=0.01)
    loss = teacher_forced_loss(model, SRC, TGT)
    loss.backward()
    opt.step(model.trainable_parameters())
    model.eval()
    vocab = Vocabulary(["t%d" % i for i in range(5)])
    save_mt(tmp_path / "mt.ckpt", model, vocab, Vocabulary(["u%d" % i for i in range(4)]), opt, {"x": 1})
    again, src_vocab, tgt_vocab, meta = load_mt(tmp_path / "mt.ckpt")
    again.eval()
    assert src_vocab.itos == vocab.itos and meta["optimizer"]["t"] == 1
    with T.precision(precision):
        assert teacher_forced_loss(again, SRC, TGT).data.tobytes() == \
            teacher_forced_loss(model, SRC, TGT).data.tobytes()
    params, _ = load_checkpoint(tmp_path / "mt.ckpt")
    np.testing.assert_array_equal(params["optim.m.out_proj.W"], opt.m["out_proj.W"])


def test_encoder_subset_loads_into_cove_encoder(tmp_path, rng):
    model = mt_model(rng, "f64")
    save_mt(tmp_path / "mt.ckpt", model, Vocabulary(), Vocabulary())
    enc, _, _ = load_cove_encoder(tmp_path / "mt.ckpt")
    model.eval()
    expected = encode(model, SRC).H.data * SRC.mask[..., None]
    assert np.max(np.abs(extract_cove(enc, SRC) - expected)) <= 1e-6


def test_bcn_round_trip(tmp_path, rng):
    glove = EmbeddingTable(rng.normal(size=(9, 3)))
    enc = CoveEncoder.from_model(mt_model(rng))
    model = BCNModel(BCNConfig(input_dim=7, classes=2, f_dim=4, hidden=3, integ_hidden=2), rng).eval()
    save_bcn(tmp_path / "b.ckpt", model, Vocabulary(["a"]), ["x", "y"], glove, enc, None, "on")
    again, vocab, labels, glove2, enc2, char, mode = load_bcn(tmp_path / "b.ckpt")
    again.eval()
    seq = concat_inputs(rng.normal(size=(2, 3, 7)), None)
    assert classify_forward(again, seq).data.tobytes() == classify_forward(model, seq).data.tobytes()
    assert labels == ["x", "y"] and mode == "on" and char is None
    assert enc2.checksum() == enc.checksum() and glove2.checksum() == glove.checksum()
