"""Tokenization, vocabulary and rendering of (history, cause) contexts into token ids."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

PAD, BOS, EOS, SEP, UNK = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<bos>", "<eos>", "<sep>", "<unk>")
SPEAKER_MARK = ":"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_tokens(text: str) -> list[str]:
    """Lowercase, split on whitespace, detach every punctuation character."""
    return _TOKEN_RE.findall(text.lower())


def normalize_speaker(name: str | None) -> str | None:
    if name is None:
        return None
    norm = " ".join(split_tokens(name))
    return norm or None


class Vocab:
    """Token/id bijection with the five reserved ids fixed at 0..4."""

    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.colon = self.stoi.get(SPEAKER_MARK)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocab":
        counts = Counter()
        for t in texts:
            counts.update(split_tokens(t))
        counts.pop(SPEAKER_MARK, None)
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(list(SPECIALS) + [SPEAKER_MARK] + [t for t in kept if t not in SPECIALS])

    def tokenize(self, text: str) -> list[int]:
        return [self.stoi.get(t, UNK) for t in split_tokens(text)]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] if 0 <= i < len(self.itos) else SPECIALS[UNK] for i in ids]


@dataclass(frozen=True)
class Encoded:
    """A rendered sequence: ``key`` identifies it for tabular lookup, ``ids`` feed token models."""

    key: str
    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def _turn_key(turn) -> list:
    return [turn.speaker, turn.text]


class ContextEncoder:
    """Renders ``speaker: text SEP ... speaker: text SEP`` contexts and ``speaker: text EOS`` targets.

    The speaker of the response is part of the target, so the context stops
    at the separator where the next speaker's name is to be produced.
    """

    def __init__(self, vocab: Vocab, max_len: int = 256, ignore_x: bool = False) -> None:
        if max_len < 1:
            raise ValueError("max_len must be positive")
        self.vocab = vocab
        self.max_len = max_len
        self.ignore_x = ignore_x

    def _turn_ids(self, turn) -> list[int]:
        ids = []
        if turn.speaker is not None:
            ids += self.vocab.tokenize(turn.speaker) + [self.vocab.stoi.get(SPEAKER_MARK, UNK)]
        return ids + self.vocab.tokenize(turn.text)

    def encode_context(self, dh: Sequence, x) -> Encoded:
        turns = list(dh) if self.ignore_x else list(dh) + [x]
        key = json.dumps([_turn_key(t) for t in turns], ensure_ascii=False)
        chunks = [self._turn_ids(t) + [SEP] for t in turns]
        # oldest history turns go first; the cause turn is cut from the left last
        while len(chunks) > 1 and sum(map(len, chunks)) > self.max_len:
            chunks.pop(0)
        ids = [i for ch in chunks for i in ch]
        if len(ids) > self.max_len:
            ids = ids[-self.max_len :]
        return Encoded(key, tuple(ids))

    def encode_response(self, y) -> Encoded:
        key = json.dumps(_turn_key(y), ensure_ascii=False)
        return Encoded(key, tuple(self._turn_ids(y) + [EOS]))

    def split_speaker(self, ids: Sequence[int]) -> tuple[str | None, str]:
        """Split generated ids at the first speaker mark into ``(speaker, text)``."""
        ids = [i for i in ids if i != EOS]
        toks = self.vocab.decode(ids)
        if self.vocab.colon is not None and self.vocab.colon in ids:
            cut = ids.index(self.vocab.colon)
            speaker = " ".join(toks[:cut]) or None
            return speaker, " ".join(toks[cut + 1 :])
        return None, " ".join(toks)


def vocab_texts(triples: Iterable) -> Iterable[str]:
    for tr in triples:
        for turn in (*tr.dh, tr.x, tr.y, *tr.counterparts):
            if turn.speaker is not None:
                yield turn.speaker
            yield turn.text
