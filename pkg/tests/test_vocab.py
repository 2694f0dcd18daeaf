import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multicourse.errors import InputError
from multicourse.vocab import (
    CLS_ID, MASK_ID, PAD_ID, UNK_ID, Vocab, build_vocab, tokenize,
)


def write_corpus(tmp_path, lines):
    path = tmp_path / "corpus.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_reserved_ids_are_fixed():
    assert (PAD_ID, MASK_ID, CLS_ID, UNK_ID) == (0, 1, 2, 3)


def test_frequency_ranking(tmp_path):
    vocab = build_vocab(write_corpus(tmp_path, ["a a b"]), 10)
    assert "a" in vocab.token_to_id and "b" in vocab.token_to_id
    assert vocab.token_to_id["a"] < vocab.token_to_id["b"]
    assert vocab.token_to_id["a"] == 4  # first slot after reserved + UNK


def test_max_size_truncates_to_reserved_plus_unk(tmp_path):
    vocab = build_vocab(write_corpus(tmp_path, ["a a b c"]), 4)
    assert len(vocab) == 4
    assert vocab.encode("a b c") == [UNK_ID, UNK_ID, UNK_ID]


def test_empty_corpus_rejected(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("\n\n", encoding="utf-8")
    with pytest.raises(InputError):
        build_vocab(path, 100)


def test_round_trip_for_in_vocab_text(tmp_path):
    vocab = build_vocab(write_corpus(tmp_path, ["the quick fox .", "the slow fox ?"]), 100)
    ids = vocab.encode("the quick fox ? .")
    assert vocab.encode(vocab.decode(ids)) == ids


def test_punctuation_splits():
    assert tokenize("don't stop, now.") == ["don't", "stop", ",", "now", "."]


def test_reserved_surface_forms_never_collide(tmp_path):
    vocab = build_vocab(write_corpus(tmp_path, ["x <mask> <pad> y"]), 100)
    ids = vocab.encode("<mask>")
    assert MASK_ID not in ids and PAD_ID not in ids


def test_tie_break_is_lexicographic(tmp_path):
    vocab = build_vocab(write_corpus(tmp_path, ["zeta alpha"]), 10)
    assert vocab.token_to_id["alpha"] < vocab.token_to_id["zeta"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from("abc xyz qq r".split()), min_size=1, max_size=12))
def test_encode_decode_round_trip_property(tokens):
    vocab = Vocab(["<pad>", "<mask>", "<cls>", "<unk>"] + sorted(set("abc xyz qq r".split())))
    ids = vocab.encode(" ".join(tokens))
    assert vocab.encode(vocab.decode(ids)) == ids


def test_duplicate_tokens_rejected():
    with pytest.raises(InputError):
        Vocab(["<pad>", "<mask>", "<cls>", "<unk>", "a", "a"])
