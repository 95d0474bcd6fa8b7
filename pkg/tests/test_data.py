import os

import numpy as np
import pytest

from restyle import data as D
from restyle.data import (DataError, StyledCorpus, SyntheticSpec, build_vocab,
                          gen_synthetic, load_corpus, load_embeddings,
                          write_corpus, write_embeddings)


def make_corpus_dir(tmp_path, train0, train1, dev=("x",), test=("y",),
                    refs=None):
    d = tmp_path / "corpus"
    d.mkdir()
    files = {
        "train.0": train0, "train.1": train1,
        "dev.0": dev, "dev.1": dev, "test.0": test, "test.1": test,
    }
    if refs is not None:
        files["refs.0"] = refs
        files["refs.1"] = refs
    for name, lines in files.items():
        (d / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(d)


def test_load_corpus_counts(tmp_path):
    d = make_corpus_dir(tmp_path, ["a b", "c d", "e f"], ["g h", "i j", "k l"])
    corpus = load_corpus(d)
    assert corpus.counts()["train"] == (3, 3)
    assert corpus.train[0][0] == ["a", "b"]


def test_load_corpus_lowercases_and_splits(tmp_path):
    d = make_corpus_dir(tmp_path, ["The  Movie\tWAS bad"], ["ok"])
    corpus = load_corpus(d)
    assert corpus.train[0][0] == ["the", "movie", "was", "bad"]


def test_blank_lines_skipped_and_counted(tmp_path):
    d = make_corpus_dir(tmp_path, ["a b", "", "c d", "  ", ""], ["x"])
    corpus = load_corpus(d)
    assert len(corpus.train[0]) == 2
    assert corpus.skipped_blank >= 3


def test_missing_split_names_file(tmp_path):
    d = make_corpus_dir(tmp_path, ["a"], ["b"])
    os.remove(os.path.join(d, "dev.1"))
    with pytest.raises(DataError, match="dev.1"):
        load_corpus(d)


def test_refs_alignment(tmp_path):
    d = make_corpus_dir(tmp_path, ["a"], ["b"], test=("t one", "t two"),
                        refs=("r one", "r two"))
    corpus = load_corpus(d)
    assert corpus.refs is not None
    assert len(corpus.refs[0]) == 2
    # misaligned refs: rewrite refs.0 with wrong count
    (tmp_path / "corpus" / "refs.0").write_text("just one\n", encoding="utf-8")
    with pytest.raises(DataError, match="refs.0"):
        load_corpus(d)


def test_corpus_roundtrip(tmp_path):
    d = make_corpus_dir(tmp_path, ["a b"], ["c d"])
    corpus = load_corpus(d)
    out = tmp_path / "copy"
    write_corpus(corpus, str(out))
    again = load_corpus(str(out))
    assert again.train == corpus.train and again.test == corpus.test


# ---------------------------------------------------------------------------
# vocabulary


def _corpus_of(sentences0, sentences1=()):
    empty = ([], [])
    return StyledCorpus((list(sentences0), list(sentences1)), empty, empty)


def test_vocab_single_token():
    corpus = _corpus_of([["hello"], ["hello"], ["hello"]])
    vocab = build_vocab(corpus)
    assert len(vocab) == len(D.SPECIAL_TOKENS) + 1
    assert vocab.encode(["hello"]) == [len(D.SPECIAL_TOKENS)]


def test_vocab_tie_breaks_lexicographically():
    corpus = _corpus_of([["zebra", "apple"], ["zebra", "apple"]])
    vocab = build_vocab(corpus)
    assert vocab.encode(["apple"])[0] < vocab.encode(["zebra"])[0]


def test_vocab_oov_roundtrip():
    corpus = _corpus_of([["a", "b", "c", "a", "b", "a"]])
    vocab = build_vocab(corpus, max_size=len(D.SPECIAL_TOKENS) + 2)
    ids = vocab.encode(["a", "b", "c"])
    assert ids[2] == D.UNK
    assert vocab.decode(ids) == ["a", "b", "<unk>"]
    # in-vocab sentences round-trip exactly
    assert vocab.decode(vocab.encode(["a", "b"])) == ["a", "b"]


def test_vocab_max_size_guard():
    with pytest.raises(DataError):
        build_vocab(_corpus_of([["a"]]), max_size=3)


# ---------------------------------------------------------------------------
# synthetic corpus


def test_gen_synthetic_counts():
    spec = SyntheticSpec(sizes=(50, 10, 5), seed=3)
    corpus, table = gen_synthetic(spec)
    assert corpus.counts() == {"train": (50, 50), "dev": (10, 10),
                               "test": (5, 5)}
    assert table  # embedding table emitted


def test_gen_synthetic_deterministic():
    spec = SyntheticSpec(sizes=(30, 5, 5), seed=11)
    c1, t1 = gen_synthetic(spec)
    c2, t2 = gen_synthetic(SyntheticSpec(sizes=(30, 5, 5), seed=11))
    assert c1.train == c2.train and c1.dev == c2.dev and c1.test == c2.test
    assert set(t1) == set(t2)
    assert all(np.array_equal(t1[k], t2[k]) for k in t1)


def test_gen_synthetic_planted_skew_concentration():
    spec = SyntheticSpec(sizes=(5000, 10, 10), seed=5, skew_token="game",
                         skew_class=0, skew_p=0.99)
    corpus, _ = gen_synthetic(spec)
    counts = [0, 0]
    for style in (0, 1):
        for sent in corpus.train[style]:
            counts[style] += sent.count("game")
    share = counts[0] / (counts[0] + counts[1])
    assert 0.97 <= share <= 1.0


def test_gen_synthetic_validates():
    with pytest.raises(DataError):
        gen_synthetic(SyntheticSpec(skew_token="game", skew_p=1.2))
    with pytest.raises(DataError):
        gen_synthetic(SyntheticSpec(skew_token="not-a-noun"))
    with pytest.raises(DataError):
        gen_synthetic(SyntheticSpec(lexicons=(["same"], ["same"])))


def test_lexicon_words_only_in_their_class():
    spec = SyntheticSpec(sizes=(200, 10, 10), seed=9)
    corpus, _ = gen_synthetic(spec)
    lex1 = set(spec.lexicons[1])
    for sent in corpus.train[0]:
        assert not (set(sent) & lex1)


# ---------------------------------------------------------------------------
# embedding file IO


def test_embeddings_roundtrip(tmp_path):
    table = {"good": np.array([1.0, 2.0]), "bad": np.array([-1.0, 0.5]),
             "g": np.array([0.0, 0.25])}
    path = str(tmp_path / "emb.txt")
    write_embeddings(path, table)
    model = load_embeddings(path)
    assert model.dim == 2
    assert np.array_equal(model.table["good"], [1.0, 2.0])
    assert len(model.table) == 3


def test_embeddings_dimension_mismatch(tmp_path):
    path = str(tmp_path / "emb.txt")
    path_obj = tmp_path / "emb.txt"
    path_obj.write_text("2 4\na 1 2 3 4\nb 1 2 3\n", encoding="utf-8")
    with pytest.raises(DataError, match=":3"):
        load_embeddings(path)


def test_embeddings_bad_header(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("not a header\n", encoding="utf-8")
    with pytest.raises(DataError, match=":1"):
        load_embeddings(str(p))


def test_embeddings_duplicate_last_wins(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("2 2\nx 1 1\nx 2 2\n", encoding="utf-8")
    model = load_embeddings(str(p))
    assert np.array_equal(model.table["x"], [2.0, 2.0])
    assert model.duplicate_units == 1


def test_embeddings_nonnumeric(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("1 2\nx 1 foo\n", encoding="utf-8")
    with pytest.raises(DataError, match="non-numeric"):
        load_embeddings(str(p))


def test_toy_embeddings_geometry():
    spec = SyntheticSpec(sizes=(10, 2, 2), seed=4)
    _, table = gen_synthetic(spec)

    def cos(a, b):
        return float(np.dot(table[a], table[b]) /
                     (np.linalg.norm(table[a]) * np.linalg.norm(table[b])))

    # synonyms within a lexicon are near-identical
    assert cos("good", "great") > 0.99
    assert cos("bad", "terrible") > 0.99
    # cross-polarity words are far apart
    assert abs(cos("good", "bad")) < 0.2
    # topic nouns are orthogonal to both polarity directions
    assert abs(cos("game", "good")) < 0.2 and abs(cos("game", "bad")) < 0.2
    # backoff characters exist
    assert "g" in table
