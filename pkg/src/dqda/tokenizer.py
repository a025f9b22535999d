"""Merge-trained subword vocabulary with WordPiece-style ``##`` pieces."""

from __future__ import annotations

import heapq
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONT = "##"
VOCAB_FORMAT_VERSION = 1

_PRETOKEN = re.compile(r"\w+|[^\w\s]")


def pre_tokenize(text: str) -> list[str]:
    """Whitespace split with every punctuation character as its own word."""
    return _PRETOKEN.findall(unicodedata.normalize("NFC", text))


@dataclass
class TokenSequence:
    ids: list[int]
    segment_ids: list[int]
    attention_mask: list[int]
    length: int


@dataclass
class Vocab:
    tokens: list[str]
    undersized: bool = False
    ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValueError("vocabulary contains repeated tokens")
        missing = [t for t in SPECIAL_TOKENS if t not in self.ids]
        if missing:
            raise ValueError(f"vocabulary lacks special tokens {missing}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    @property
    def special_ids(self) -> dict[str, int]:
        return {t: self.ids[t] for t in SPECIAL_TOKENS}

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    @property
    def unk_id(self) -> int:
        return self.ids[UNK]

    @property
    def cls_id(self) -> int:
        return self.ids[CLS]

    @property
    def sep_id(self) -> int:
        return self.ids[SEP]

    @property
    def mask_id(self) -> int:
        return self.ids[MASK]

    def save(self, path) -> None:
        lines = [f"#!version {VOCAB_FORMAT_VERSION}", "#!specials " + " ".join(SPECIAL_TOKENS)]
        lines.extend(self.tokens)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        tokens = []
        for line in Path(path).read_text(encoding="utf-8").split("\n"):
            if line.startswith("#!"):
                key, _, value = line[2:].partition(" ")
                if key == "version" and int(value) != VOCAB_FORMAT_VERSION:
                    raise ValueError(f"unsupported vocab version {value}")
                continue
            if line:
                tokens.append(line)
        return cls(tokens)


def _word_symbols(word: str) -> tuple[str, ...]:
    return (word[0],) + tuple(CONT + c for c in word[1:])


def _merge_symbols(a: str, b: str) -> str:
    return a + b[len(CONT):]


def train_vocab(corpus: Iterable[str], vocab_size: int = 8000, min_frequency: int = 2) -> Vocab:
    """Learn a subword vocabulary by greedy pair merging.

    The vocabulary is the special tokens, then the base symbols (every seen
    character in word-initial and ``##`` continuation form) in sorted order, then
    merged pieces in merge order. At each step the most frequent adjacent
    pair wins, ties going to the lexicographically smallest pair. Training
    stops early (``undersized=True``) when no pair reaches ``min_frequency``.
    """
    word_counts: Counter[str] = Counter()
    for text in corpus:
        word_counts.update(pre_tokenize(text))

    words = [list(_word_symbols(w)) for w in sorted(word_counts)]
    freqs = [word_counts[w] for w in sorted(word_counts)]
    # both forms of every character, so any seen character can start or continue a word
    chars = {c for w in word_counts for c in w}
    alphabet = sorted(chars | {CONT + c for c in chars})
    tokens = list(SPECIAL_TOKENS) + [s for s in alphabet if s not in SPECIAL_TOKENS]
    known = set(tokens)
    if vocab_size < len(tokens):
        raise ValueError(
            f"vocab_size {vocab_size} is below the {len(tokens)} special and base symbols"
        )

    pair_counts: Counter[tuple[str, str]] = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, (syms, f) in enumerate(zip(words, freqs)):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += f
            where[pair].add(wi)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    while len(tokens) < vocab_size:
        best = None
        while heap:
            neg, pair = heapq.heappop(heap)
            if pair_counts.get(pair, 0) == -neg and -neg > 0:
                best = pair
                break
        if best is None or pair_counts[best] < max(min_frequency, 1):
            break
        a, b = best
        merged = _merge_symbols(a, b)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
        touched: Counter[tuple[str, str]] = Counter()
        for wi in sorted(where.pop(best, ())):
            syms, f = words[wi], freqs[wi]
            for pair in zip(syms, syms[1:]):
                pair_counts[pair] -= f
                touched[pair] += 0
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[wi] = out
            for pair in zip(out, out[1:]):
                pair_counts[pair] += f
                where[pair].add(wi)
                touched[pair] += 0
        for pair in touched:
            c = pair_counts.get(pair, 0)
            if c > 0:
                heapq.heappush(heap, (-c, pair))
            else:
                pair_counts.pop(pair, None)
                where.pop(pair, None)
    return Vocab(tokens, undersized=len(tokens) < vocab_size)


class Tokenizer:
    """Greedy longest-match segmentation over a :class:`Vocab`.

    Immutable after construction, so one instance can be shared freely.
    """

    def __init__(self, vocab: Vocab, max_word_chars: int = 100):
        self.vocab = vocab
        self.max_word_chars = max_word_chars
        self._max_piece = max(len(t) for t in vocab.tokens)
        self._cache: dict[str, tuple[int, ...]] = {}

    @classmethod
    def load(cls, path) -> "Tokenizer":
        return cls(Vocab.load(path))

    def __len__(self) -> int:
        return len(self.vocab)

    def _segment_word(self, word: str) -> tuple[int, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        ids = self.vocab.ids
        out: list[int] = []
        start = 0
        n = len(word)
        while start < n:
            prefix = CONT if start else ""
            end = min(n, start + self._max_piece)
            piece_id = None
            while end > start:
                piece_id = ids.get(prefix + word[start:end])
                if piece_id is not None:
                    break
                end -= 1
            if piece_id is None:
                out.append(self.vocab.unk_id)
                start += 1
            else:
                out.append(piece_id)
                start = end
        result = tuple(out)
        if len(self._cache) < 200_000:
            self._cache[word] = result
        return result

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for word in pre_tokenize(text):
            if len(word) > self.max_word_chars:
                out.append(self.vocab.unk_id)
            else:
                out.extend(self._segment_word(word))
        return out

    def decode(self, ids: Sequence[int], skip_special: bool = True) -> str:
        """Join pieces back into words.

        Special tokens are dropped by default so that re-encoding the output
        is stable: a literal "[UNK]" would otherwise re-encode as several
        pieces.
        """
        tokens = self.vocab.tokens
        special = set(self.vocab.special_ids.values()) if skip_special else set()
        words: list[str] = []
        attach = False
        for i in ids:
            if not 0 <= i < len(tokens):
                raise ValueError(f"unknown token id {i}")
            if i in special:
                attach = False  # a dropped piece breaks the word
                continue
            tok = tokens[i]
            if tok.startswith(CONT):
                if attach:
                    words[-1] += tok[len(CONT):]
                else:
                    words.append(tok[len(CONT):])
            else:
                words.append(tok)
            attach = True
        return " ".join(words)

    def encode_pair(self, text_a: str, text_b: str, max_seq_len: int) -> TokenSequence:
        return pack_pair(self.encode(text_a), self.encode(text_b), max_seq_len, self.vocab)


def truncate_pair(a: list[int], b: list[int], budget: int) -> tuple[list[int], list[int]]:
    """Longest-first truncation; on equal lengths the second sequence loses a token."""
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(a) > len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def pack_pair(ids_a: Sequence[int], ids_b: Sequence[int], max_seq_len: int, vocab: Vocab) -> TokenSequence:
    """Lay out ``[CLS] a [SEP] b [SEP]`` padded to ``max_seq_len``."""
    if max_seq_len < 5:
        raise ValueError("max_seq_len must be at least 5")
    a, b = truncate_pair(ids_a, ids_b, max_seq_len - 3)
    ids = [vocab.cls_id, *a, vocab.sep_id, *b, vocab.sep_id]
    segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return _pad(ids, segments, max_seq_len, vocab)


def pack_single(ids_a: Sequence[int], max_seq_len: int, vocab: Vocab) -> TokenSequence:
    """Lay out ``[CLS] a [SEP]`` with all segment ids 0."""
    a = list(ids_a)[: max_seq_len - 2]
    ids = [vocab.cls_id, *a, vocab.sep_id]
    return _pad(ids, [0] * len(ids), max_seq_len, vocab)


def _pad(ids: list[int], segments: list[int], max_seq_len: int, vocab: Vocab) -> TokenSequence:
    n = len(ids)
    pad = max_seq_len - n
    return TokenSequence(
        ids=ids + [vocab.pad_id] * pad,
        segment_ids=segments + [0] * pad,
        attention_mask=[1] * n + [0] * pad,
        length=n,
    )
