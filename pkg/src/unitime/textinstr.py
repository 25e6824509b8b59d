"""Domain-instruction tokenisation and embedding lookup."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

import numpy as np

from .numerics import Tensor, embedding

PAD_TEXT = "<pad>"
UNK = "<unk>"
RESERVED = (PAD_TEXT, UNK)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class InstructionError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; punctuation is dropped."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[: len(RESERVED)] != list(RESERVED):
            raise InstructionError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise InstructionError("vocabulary tokens must be unique")
        self.tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}

    @property
    def pad_id(self) -> int:
        return self._ids[PAD_TEXT]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def lookup(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, text: str) -> list[int]:
        return [self.lookup(t) for t in tokenize(text)]


def build_vocabulary(instructions: Iterable[str]) -> Vocabulary:
    instructions = list(instructions)
    if not instructions:
        raise InstructionError("at least one instruction is required")
    tokens = list(RESERVED)
    seen = set(tokens)
    for text in instructions:
        words = tokenize(text)
        if not words:
            raise InstructionError(f"instruction {text!r} yields no tokens")
        for w in words:
            if w not in seen:
                seen.add(w)
                tokens.append(w)
    return Vocabulary(tokens)


def instruction_length(text: str) -> int:
    return len(tokenize(text))


def init_embedding(vocab_size: int, dim: int, rng: np.random.Generator, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=(vocab_size, dim))


def encode_instruction(text: str, vocab: Vocabulary, table: Tensor) -> Tensor:
    """Embedding rows [I, D] for the instruction's tokens, in order."""
    ids = vocab.encode(text)
    if table.shape[0] != len(vocab):
        raise InstructionError(f"embedding table has {table.shape[0]} rows for a vocabulary of {len(vocab)}")
    return embedding(table, np.asarray(ids, dtype=np.int64))
