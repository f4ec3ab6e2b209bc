"""Tokenization and the two conditional sequence models (tabular softmax and tiny RNN)."""

from __future__ import annotations

import numpy as np

from cdkit.textmodel.checkpoint import load_checkpoint, save_checkpoint
from cdkit.textmodel.decoding import Method
from cdkit.textmodel.kernels import BACKEND
from cdkit.textmodel.neural import TinyNeuralLM
from cdkit.textmodel.tabular import TabularSoftmaxModel, UnknownContext, UnknownResponse
from cdkit.textmodel.vocab import (
    BOS,
    EOS,
    PAD,
    SEP,
    UNK,
    ContextEncoder,
    Encoded,
    Vocab,
    split_tokens,
)


def tokenize(text: str, vocab: Vocab) -> list[int]:
    return vocab.tokenize(text)


def logprob(model, context: Encoded, y: Encoded) -> float:
    return model.logprob(context, y)


def grad_logprob(model, context: Encoded, y: Encoded) -> np.ndarray:
    return model.grad_logprob(context, y)


def generate(model, context: Encoded, method: Method, rng: np.random.Generator, max_len: int = 64) -> list[int]:
    return model.generate(context, method, rng, max_len)


__all__ = [
    "BACKEND",
    "BOS",
    "EOS",
    "PAD",
    "SEP",
    "UNK",
    "ContextEncoder",
    "Encoded",
    "Method",
    "TabularSoftmaxModel",
    "TinyNeuralLM",
    "UnknownContext",
    "UnknownResponse",
    "Vocab",
    "generate",
    "grad_logprob",
    "load_checkpoint",
    "logprob",
    "save_checkpoint",
    "split_tokens",
    "tokenize",
]
