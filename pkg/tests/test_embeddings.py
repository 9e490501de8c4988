import numpy as np
import pytest

from coveforge import tensor as T
from coveforge.embeddings import (BOS, EOS, PAD, UNK, CharNGramEmbedder, EmbeddingTable,
                                  FormatError, Vocabulary, char_ngram_embed, char_ngrams,
                                  char_table_for_vocab, fnv1a, load_pretrained_text, lookup_sequence,
                                  read_vectors)


def test_reserved_ids():
    v = Vocabulary(["x"])
    assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)
    assert v.itos[:4] == ["<pad>", "<unk>", "<bos>", "<eos>"]
    assert v.id("x") == 4 and v.id("never") == UNK


def test_encode_decode_and_brackets():
    v = Vocabulary.build([["b", "a"], ["a", "c"]])
    assert v.content_tokens() == ["b", "a", "c"]
    ids = v.encode(["a", "zzz"], bos=True, eos=True)
    assert ids == [BOS, v.id("a"), UNK, EOS]
    assert v.decode(ids[1:2]) == ["a"]


def test_vocab_save_load(tmp_path):
    v = Vocabulary(["one", "two"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt").itos == v.itos


def test_two_line_vector_file(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text("a 1.0 2.0\nb 3.0 4.0\n")
    table = load_pretrained_text(p, Vocabulary(["a", "b"]), 2)
    np.testing.assert_array_equal(table.matrix.data[4:], [[1, 2], [3, 4]])
    assert table.coverage == (2, 2)


def test_missing_token_gets_zero_and_is_counted(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text("a 1.0 2.0\n")
    table = load_pretrained_text(p, Vocabulary(["a", "q"]), 2)
    np.testing.assert_array_equal(table.matrix.data[5], [0, 0])
    assert table.coverage == (1, 2)


def test_lowercase_lookup_first(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text("cat 1.0\nCat 2.0\nDog 3.0\n")
    table = load_pretrained_text(p, Vocabulary(["Cat", "Dog"]), 1)
    assert table.matrix.data[4, 0] == 1.0
    assert table.matrix.data[5, 0] == 3.0


def test_short_line_names_line(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text("a 1.0 2.0\nb 3.0\n")
    with pytest.raises(FormatError, match=":2:"):
        read_vectors(p, 2)


def test_unparseable_value(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text("a 1.0 oops\n")
    with pytest.raises(FormatError, match=":1:"):
        read_vectors(p)


def test_pretrained_table_is_frozen(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text("a 1.0\n")
    table = load_pretrained_text(p, Vocabulary(["a"]), 1)
    assert not table.trainable and table.trainable_parameters() == {}


def test_pad_lookup_is_zero(rng):
    table = EmbeddingTable(rng.normal(size=(6, 3)))
    np.testing.assert_array_equal(lookup_sequence(table, [0]).data, np.zeros((1, 3)))


def test_identity_table_gather():
    table = EmbeddingTable(np.eye(3))
    np.testing.assert_array_equal(lookup_sequence(table, [2]).data, [[0, 0, 1]])


def test_batch_gather_matches_loop(rng):
    table = EmbeddingTable(rng.normal(size=(10, 4)))
    ids = rng.integers(1, 10, size=(3, 5))
    got = lookup_sequence(table, ids).data
    for b in range(3):
        for t in range(5):
            np.testing.assert_array_equal(got[b, t], table.matrix.data[ids[b, t]])


def test_out_of_range_id():
    with pytest.raises(T.ContractError):
        lookup_sequence(EmbeddingTable(np.eye(3)), [3])


def test_trainable_table_receives_gradient(rng, f64):
    table = EmbeddingTable(rng.normal(size=(5, 2)), trainable=True)
    T.tsum(lookup_sequence(table, [1, 1, 4])).backward()
    np.testing.assert_array_equal(table.matrix.grad[:, 0], [0, 2, 0, 0, 1])


def test_checksum_changes_with_content(rng):
    table = EmbeddingTable(rng.normal(size=(4, 2)))
    before = table.checksum()
    table.matrix.data[1, 1] += 1e-3
    assert table.checksum() != before


# ---------------------------------------------------------------- char n-grams


def test_fnv1a_reference_values():
    # published 32-bit FNV-1a test vectors
    assert fnv1a(b"") == 0x811C9DC5
    assert fnv1a(b"a") == 0xE40C292C
    assert fnv1a(b"foobar") == 0xBF9CF968


def test_ngram_enumeration():
    assert char_ngrams("ab", 2, 2) == ["#a", "ab", "b#"]
    assert char_ngrams("ab", 2, 3) == ["#a", "ab", "b#", "#ab", "ab#"]


def test_ab_embedding_is_mean_of_its_bucket_rows():
    e = CharNGramEmbedder.create(dim=5, buckets=97, n_range=(2, 2), seed=3)
    rows = [e.table[fnv1a(g.encode(), 3) % 97] for g in ("#a", "ab", "b#")]
    np.testing.assert_allclose(char_ngram_embed(e, "ab"), np.mean(rows, axis=0), rtol=1e-15)


def test_char_embedding_is_deterministic():
    e = CharNGramEmbedder.create(dim=8, buckets=101)
    assert np.array_equal(e("cat"), e("cat"))


def test_zero_table_gives_zero():
    e = CharNGramEmbedder(np.zeros((50, 4)))
    np.testing.assert_array_equal(e("anything"), 0)


def test_char_table_rows_follow_vocab():
    e = CharNGramEmbedder.create(dim=4, buckets=53)
    v = Vocabulary(["ab", "cd"])
    table = char_table_for_vocab(e, v)
    np.testing.assert_array_equal(table.matrix.data[:4], 0)
    np.testing.assert_array_equal(table.matrix.data[5], e("cd").astype(np.float32))


def test_empty_token_rejected():
    with pytest.raises(T.ContractError):
        char_ngram_embed(CharNGramEmbedder.create(dim=2, buckets=5), "")
