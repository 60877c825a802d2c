import random
import string
import warnings

import pytest

from trajlens.errors import ConfigurationError, DataError
from trajlens.tokenizer import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    SPECIALS,
    UNK,
    TokenSequence,
    Vocabulary,
    count_pieces,
    decode,
    encode,
    pretokenize,
    tokenize_text,
    train_vocab,
)


def oracle_greedy_pieces(word, vocab_set):
    """Independent longest-match-first segmentation over a plain token set."""
    pieces = []
    start = 0
    while start < len(word):
        match = None
        for end in range(len(word), start, -1):
            candidate = word[start:end]
            if start > 0:
                candidate = "##" + candidate
            if candidate in vocab_set:
                match = candidate
                break
        if match is None:
            return [UNK]
        pieces.append(match)
        start += len(match) - 2 if match.startswith("##") else len(match)
    return pieces


class TestPretokenize:
    def test_lowercases_and_splits_punctuation(self):
        assert pretokenize("Type 2 diabetes w/o complications") == [
            "type", "2", "diabetes", "w", "/", "o", "complications",
        ]

    def test_empty(self):
        assert pretokenize("  ") == []


class TestTrainVocab:
    def test_only_productive_merge(self):
        vocab = train_vocab(["aa aa aa"], 8)
        assert "aa" in vocab
        assert len(vocab) == 8

    def test_empty_corpus_errors(self):
        with pytest.raises(DataError):
            train_vocab([], 100)

    def test_target_below_alphabet_errors(self):
        with pytest.raises(ConfigurationError):
            train_vocab(["abcdefgh"], 6)

    def test_unreachable_target_warns_and_returns_smaller(self):
        with pytest.warns(UserWarning, match="exhausted"):
            vocab = train_vocab(["ab ab"], 500)
        assert len(vocab) < 500
        assert "ab" in vocab

    def test_corpus_order_independence(self):
        docs = [f"term{i:02d} shared suffix{i % 4}" for i in range(40)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = train_vocab(docs, 200)
            shuffled = list(docs)
            random.Random(3).shuffle(shuffled)
            b = train_vocab(shuffled, 200)
        assert a.tokens == b.tokens

    def test_specials_lead_the_vocab(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vocab = train_vocab(["alpha beta gamma"], 40)
        assert tuple(vocab.tokens[:5]) == SPECIALS


@pytest.fixture(scope="module")
def encode_vocab():
    corpus = [
        "asthma", "metformin", "chronic sinusitis", "acute dermatitis",
        "heart failure", "renal failure", "blood pressure monitoring",
    ] * 3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return train_vocab(corpus, 150)


@pytest.fixture(scope="module")
def decode_vocab():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return train_vocab(["metformin insulin aspirin chronic dermatitis"] * 2, 160)


class TestEncode:
    @pytest.fixture
    def vocab(self, encode_vocab):
        return encode_vocab

    def test_known_word_single_piece(self, vocab):
        seq = encode("asthma", vocab, 16)
        assert seq.ids[0] == CLS_ID
        assert vocab.tokens[seq.ids[1]] == "asthma"
        assert seq.ids[2] == SEP_ID
        assert all(i == PAD_ID for i in seq.ids[3:])
        assert len(seq.ids) == 16

    def test_unsegmentable_word_becomes_unk(self, vocab):
        seq = encode("Δζ", vocab, 8)
        assert vocab.tokens[seq.ids[1]] == UNK

    def test_greedy_matches_oracle_on_random_strings(self, vocab):
        vocab_set = set(vocab.tokens)
        rng = random.Random(17)
        alphabet = string.ascii_lowercase[:8]
        for _ in range(500):
            word = "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 14)))
            assert tokenize_text(word, vocab) == oracle_greedy_pieces(word, vocab_set)

    def test_count_matches_oracle(self, vocab):
        vocab_set = set(vocab.tokens)
        rng = random.Random(23)
        for _ in range(200):
            words = [
                "".join(rng.choice("abcdefgh") for _ in range(rng.randrange(1, 10)))
                for _ in range(rng.randrange(1, 6))
            ]
            text = " ".join(words)
            expected = sum(len(oracle_greedy_pieces(w, vocab_set)) for w in words)
            assert count_pieces(text, vocab) == expected

    def test_sequence_cap_enforced(self, vocab):
        with pytest.raises(DataError):
            encode(" ".join(["asthma"] * 30), vocab, 16)

    def test_ids_below_vocab_size_and_starts_with_cls(self, vocab):
        rng = random.Random(5)
        for _ in range(100):
            text = " ".join(
                "".join(rng.choice("abcdefmnrst") for _ in range(rng.randrange(1, 9)))
                for _ in range(rng.randrange(1, 5))
            )
            seq = encode(text, vocab, 64)
            assert seq.ids[0] == CLS_ID
            assert len(seq.ids) == 64
            assert all(0 <= i < len(vocab) for i in seq.ids)

    def test_determinism(self, vocab):
        assert encode("chronic sinusitis", vocab, 32) == encode("chronic sinusitis", vocab, 32)


class TestDecode:
    @pytest.fixture
    def vocab(self, decode_vocab):
        return decode_vocab

    def test_roundtrip_in_vocab(self, vocab):
        assert decode(encode("metformin", vocab, 16), vocab) == "metformin"

    def test_all_pad_decodes_empty(self, vocab):
        seq = TokenSequence(ids=(PAD_ID,) * 8, length=0)
        assert decode(seq, vocab) == ""

    def test_roundtrip_property_over_in_vocab_corpus(self, vocab):
        words = ["metformin", "insulin", "aspirin", "chronic", "dermatitis"]
        rng = random.Random(31)
        for _ in range(1000):
            text = " ".join(rng.choice(words) for _ in range(rng.randrange(1, 8)))
            assert decode(encode(text, vocab, 64), vocab) == text

    def test_unknown_id_errors(self, vocab):
        seq = TokenSequence(ids=(CLS_ID, len(vocab) + 5, SEP_ID), length=3)
        with pytest.raises(DataError):
            decode(seq, vocab)


def test_vocab_file_roundtrip(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vocab = train_vocab(["alpha beta gamma delta"] * 2, 60)
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.tokens == vocab.tokens
    assert loaded.id_of("alpha") == vocab.id_of("alpha")
