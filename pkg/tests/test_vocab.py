"""Vocabulary, detokenization, and greedy tokenization."""

import json

import pytest
from hypothesis import given, strategies as st

from abe.errors import InvalidTokenError
from abe.vocab import (
    BYTE_FALLBACK,
    EOS,
    NORMAL,
    Piece,
    Vocabulary,
    build_vocabulary,
    vocabulary_from_dict,
    vocabulary_to_dict,
)

from conftest import MARKER, vocab_from_surfaces


def ids_for(vocab, *surfaces):
    table = {p.surface: p.id for p in vocab.pieces}
    return [table[s.encode("utf-8") if isinstance(s, str) else s] for s in surfaces]


class TestDetokenize:
    def test_marker_pieces_spell_string(self):
        vocab = vocab_from_surfaces(["▁token", "iz", "ation"], marker=MARKER)
        ids = ids_for(vocab, "▁token", "iz", "ation")
        assert vocab.detokenize(ids) == b" tokenization"

    def test_byte_fallback_pieces_contribute_raw_bytes(self):
        vocab = build_vocabulary(["a"], byte_fallback=True)
        table = {p.surface: p.id for p in vocab.pieces}
        ids = [table[b"<0xE2>"], table[b"<0x82>"], table[b"<0xAC>"]]
        assert vocab.detokenize(ids) == b"\xe2\x82\xac"
        assert vocab.detokenize(ids).decode("utf-8") == "€"

    def test_empty_sequence(self):
        vocab = vocab_from_surfaces(["a"])
        assert vocab.detokenize([]) == b""

    def test_eos_and_control_contribute_nothing(self):
        pieces = [
            Piece(0, b"hi", NORMAL),
            Piece(1, b"<pad>", "control"),
            Piece(2, b"</s>", EOS),
        ]
        vocab = Vocabulary(pieces)
        assert vocab.detokenize([0, 1, 2]) == b"hi"

    def test_leading_space_is_retained(self):
        vocab = vocab_from_surfaces([" a"])
        assert vocab.detokenize([0]) == b" a"

    def test_out_of_range_id(self):
        vocab = vocab_from_surfaces(["a"])
        with pytest.raises(InvalidTokenError):
            vocab.detokenize([99])
        with pytest.raises(InvalidTokenError):
            vocab.detokenize([-1])


class TestTokenizeGreedy:
    def test_longest_match_wins(self):
        vocab = vocab_from_surfaces(
            ["▁token", "iz", "ation", "▁tokeniz"], marker=MARKER
        )
        got = vocab.tokenize_greedy(b" tokenization")
        assert got == ids_for(vocab, "▁tokeniz", "ation")

    def test_empty_string(self):
        vocab = vocab_from_surfaces(["a"])
        assert vocab.tokenize_greedy(b"") == []

    def test_fallback_for_unknown_bytes(self):
        # " é" with only ASCII normal pieces: the space may ride a normal
        # piece or the 0x20 fallback; the accent must use byte fallback.
        vocab = build_vocabulary(["a", "b", " "], byte_fallback=True)
        text = " é".encode("utf-8")
        ids = vocab.tokenize_greedy(text)
        assert vocab.detokenize(ids) == text
        kinds = [vocab.pieces[i].kind for i in ids]
        assert kinds[-2:] == [BYTE_FALLBACK, BYTE_FALLBACK]

    def test_greedy_result_is_a_valid_segmentation(self):
        # Independent check: enumerate every segmentation by brute force.
        vocab = build_vocabulary(["ab", "a", "b", "ba"], byte_fallback=True)
        text = b"abab"

        def all_segmentations(t):
            if not t:
                return [[]]
            out = []
            for piece in vocab.pieces:
                b = vocab.piece_bytes(piece.id)
                if b and t.startswith(b):
                    for rest in all_segmentations(t[len(b):]):
                        out.append([piece.id] + rest)
            return out

        valid = all_segmentations(text)
        assert all(vocab.detokenize(s) == text for s in valid)
        assert vocab.tokenize_greedy(text) in valid

    def test_unrepresentable_byte_errors_without_fallback(self):
        vocab = vocab_from_surfaces(["a"])
        with pytest.raises(ValueError):
            vocab.tokenize_greedy(b"z")


ALPHABET = st.sampled_from([b"a", b"b", b" ", b"\xc3", b"\xa9", b"\x00"])


@given(st.lists(ALPHABET, max_size=16))
def test_round_trip_over_byte_strings(chunks):
    vocab = build_vocabulary(
        ["ab", "a", "▁a", "b▁", "é"], marker=MARKER, byte_fallback=True
    )
    text = b"".join(chunks)
    assert vocab.detokenize(vocab.tokenize_greedy(text)) == text


@given(st.lists(st.integers(0, 4), max_size=8), st.lists(st.integers(0, 4), max_size=8))
def test_detokenize_is_a_homomorphism(a, b):
    vocab = build_vocabulary(["ab", "▁x", "y"], marker=MARKER)
    # ids 0..4 cover the three normal pieces, eos, and a fallback-free range
    a = [i % vocab.size for i in a]
    b = [i % vocab.size for i in b]
    assert vocab.detokenize(a + b) == vocab.detokenize(a) + vocab.detokenize(b)


def test_every_single_byte_tokenizes_on_an_open_vocabulary():
    vocab = build_vocabulary(["ab"], byte_fallback=True)
    assert vocab.covers_all_bytes()
    for value in range(256):
        text = bytes([value])
        assert vocab.detokenize(vocab.tokenize_greedy(text)) == text


def test_small_vocabulary_is_not_open():
    assert not vocab_from_surfaces(["a", "b"]).covers_all_bytes()


class TestInvariants:
    def test_exactly_one_eos(self):
        with pytest.raises(ValueError):
            Vocabulary([Piece(0, b"a", NORMAL)])
        with pytest.raises(ValueError):
            Vocabulary([Piece(0, b"</s>", EOS), Piece(1, b"<eos2>", EOS)])

    def test_dense_ids(self):
        with pytest.raises(ValueError):
            Vocabulary([Piece(1, b"a", NORMAL), Piece(0, b"</s>", EOS)])

    def test_byte_fallback_surface_shape(self):
        with pytest.raises(ValueError):
            Piece(0, b"<0xZZ>", BYTE_FALLBACK)
        assert Piece(0, b"<0x00>", BYTE_FALLBACK).surface == b"<0x00>"

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Piece(0, b"a", "weird")


class TestFileSchema:
    def test_round_trip(self, tmp_path):
        vocab = build_vocabulary(
            ["▁hi", "there"], marker=MARKER, byte_fallback=True,
            control_surfaces=["<pad>"],
        )
        doc = vocabulary_to_dict(vocab)
        json.dumps(doc)  # serializable
        again = vocabulary_from_dict(doc)
        assert again == vocab
        assert again.marker == MARKER
        assert again.eos_id == vocab.eos_id

    def test_ids_implied_by_order(self):
        doc = {
            "marker": None,
            "pieces": [
                {"surface": "x", "kind": "normal"},
                {"surface": "</s>", "kind": "eos"},
            ],
        }
        vocab = vocabulary_from_dict(doc)
        assert [p.id for p in vocab.pieces] == [0, 1]
