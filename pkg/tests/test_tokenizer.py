from __future__ import annotations

import hashlib

import pytest
from hypothesis import given, settings, strategies as st

from dqda import corpus as C
from dqda import synthetic as syn
from dqda.tokenizer import (
    SPECIAL_TOKENS,
    Tokenizer,
    Vocab,
    pack_pair,
    pack_single,
    pre_tokenize,
    train_vocab,
    truncate_pair,
)


def _vocab(*tokens):
    return Vocab([*SPECIAL_TOKENS, *tokens])


class TestTrainVocab:
    def test_only_possible_merge(self):
        # specials + {"a", "##a"} + one merge
        v = train_vocab(["aa aa aa"], len(SPECIAL_TOKENS) + 2 + 1, 1)
        assert "aa" in v and len(v) == 8 and not v.undersized

    def test_empty_corpus(self):
        v = train_vocab([], 100)
        assert v.tokens == list(SPECIAL_TOKENS) and v.undersized

    def test_small_corpus_is_undersized(self):
        v = train_vocab(["ab ab"], 500, 2)
        assert v.undersized and len(v) < 500

    def test_exact_size(self, domain):
        texts = [C.question_paragraph(q) for q in domain.questions.values()]
        assert len(train_vocab(texts, 300, 2)) == 300

    def test_special_ids_fixed(self, tokenizer):
        assert tokenizer.vocab.special_ids == {"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3, "[MASK]": 4}

    def test_case_preserved(self):
        v = train_vocab(["Apple apple Apple apple"], 30, 1)
        assert "A" in v and "a" in v

    def test_tie_break_lexicographic(self):
        # "ab" and "cd" both occur twice; with room for one merge the smaller pair wins
        v = train_vocab(["ab cd ab cd"], len(SPECIAL_TOKENS) + 8 + 1, 1)
        assert "ab" in v and "cd" not in v

    def test_golden(self):
        # fixed-order run recorded once as the reference
        d = syn.populate(
            syn.make_domain("golden", 3, n_groups=40, n_synonyms=4, letters="bcdfghjklmnpqrstvwxz"), 100, 4800, 3, body_sentences=1
        )
        sentences = [s for q in d.questions.values() for s in (q.title, q.body)]
        assert len(sentences) == 10_000
        v = train_vocab(sentences, 1000, 2)
        digest = hashlib.sha256("\n".join(v.tokens).encode()).hexdigest()
        assert len(v) == 1000
        assert digest == GOLDEN_VOCAB_SHA

    def test_save_load(self, tmp_path, tokenizer):
        tokenizer.vocab.save(tmp_path / "v.txt")
        assert Vocab.load(tmp_path / "v.txt").tokens == tokenizer.vocab.tokens

    def test_load_rejects_version(self, tmp_path):
        (tmp_path / "v.txt").write_text("#!version 9\n" + "\n".join(SPECIAL_TOKENS) + "\n")
        with pytest.raises(ValueError):
            Vocab.load(tmp_path / "v.txt")

    def test_repeated_tokens_rejected(self):
        with pytest.raises(ValueError):
            _vocab("a", "a")


GOLDEN_VOCAB_SHA = "b0366fcf87285ba1e4579c364798f2dc8cd77c04a2f2f294fa81fd0752b26e63"


class TestEncodeDecode:
    def test_greedy_longest_match(self):
        tok = Tokenizer(_vocab("u", "n", "a", "b", "l", "e", "##n", "##a", "##b", "##l", "##e", "un", "##able"))
        ids = tok.encode("unable")
        assert [tok.vocab.tokens[i] for i in ids] == ["un", "##able"]
        assert tok.decode(ids) == "unable"

    def test_empty(self, tokenizer):
        assert tokenizer.encode("") == [] and tokenizer.decode([]) == ""

    def test_unknown_character(self):
        tok = Tokenizer(_vocab("a"))
        assert tok.encode("a é") == [tok.vocab.ids["a"], tok.vocab.unk_id]

    def test_unknown_id(self, tokenizer):
        with pytest.raises(ValueError):
            tokenizer.decode([len(tokenizer)])

    def test_punctuation_split(self):
        assert pre_tokenize("Why? it's") == ["Why", "?", "it", "'", "s"]

    def test_specials_not_produced_from_text(self, tokenizer):
        special = set(tokenizer.vocab.special_ids.values()) - {tokenizer.vocab.unk_id}
        assert not special & set(tokenizer.encode("[CLS] [SEP] [MASK] [PAD]"))

    def test_round_trip_fixture(self, tokenizer, domain):
        for q in list(domain.questions.values())[:30]:
            ids = tokenizer.encode(q.title + " " + q.body)
            assert tokenizer.encode(tokenizer.decode(ids)) == ids

    @settings(max_examples=200)
    @given(st.text(max_size=40))
    def test_round_trip_stabilizes(self, text):
        tok = _TOK
        once = tok.encode(tok.decode(tok.encode(text)))
        assert tok.encode(tok.decode(once)) == once


_TOK = Tokenizer(train_vocab(["the cat sat on the mat. Why? it's fine, isn't it"] * 3, 60, 1))


class TestPacking:
    def test_one_and_one(self, tokenizer):
        v = tokenizer.vocab
        seq = pack_pair([10], [11], 8, v)
        assert seq.ids == [v.cls_id, 10, v.sep_id, 11, v.sep_id, 0, 0, 0]
        assert seq.segment_ids == [0, 0, 0, 1, 1, 0, 0, 0]
        assert seq.attention_mask == [1] * 5 + [0] * 3 and seq.length == 5

    def test_long_a_truncated(self, tokenizer):
        seq = pack_pair(list(range(10, 110)), [5, 6], 16, tokenizer.vocab)
        assert seq.ids[1:12] == list(range(10, 21)) and seq.ids[12] == tokenizer.vocab.sep_id

    def test_equal_length_overflow(self):
        a, b = truncate_pair(list(range(6)), list(range(10, 16)), 7)
        assert (a, b) == _reference_truncate(list(range(6)), list(range(10, 16)), 7)
        assert (len(a), len(b)) == (4, 3)

    @given(st.integers(0, 40), st.integers(0, 40), st.integers(5, 40))
    def test_truncation_matches_reference(self, na, nb, max_len):
        a, b = list(range(na)), list(range(100, 100 + nb))
        assert truncate_pair(a, b, max_len - 3) == _reference_truncate(a, b, max_len - 3)

    @given(st.integers(0, 30), st.integers(0, 30), st.integers(5, 32))
    def test_layout_invariants(self, na, nb, max_len):
        v = _TOK.vocab
        seq = pack_pair([10] * na, [11] * nb, max_len, v)
        live = seq.ids[: seq.length]
        assert len(seq.ids) == max_len
        assert live.count(v.cls_id) == 1 and live.count(v.sep_id) == 2
        segs = seq.segment_ids[: seq.length]
        assert sum(1 for x, y in zip(segs, segs[1:]) if x != y) == 1

    def test_degenerate_body(self, tokenizer):
        v = tokenizer.vocab
        seq = pack_pair([], [], 8, v)
        assert seq.ids[:3] == [v.cls_id, v.sep_id, v.sep_id] and seq.length == 3

    def test_single(self, tokenizer):
        v = tokenizer.vocab
        seq = pack_single([7, 8, 9], 4, v)
        assert seq.ids == [v.cls_id, 7, 8, v.sep_id] and seq.segment_ids == [0, 0, 0, 0]


def _reference_truncate(a, b, budget):
    # drop from the longer side one token at a time; ties drop from b
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(b) >= len(a):
            b = b[:-1]
        else:
            a = a[:-1]
    return a, b
