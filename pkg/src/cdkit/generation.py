"""Batch response generation over evaluation contexts."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cdkit.evaluation import EvalExample
from cdkit.extraction import Turn
from cdkit.textmodel.decoding import Method
from cdkit.textmodel.vocab import ContextEncoder

EMPTY_MARKER = "∅"


@dataclass(frozen=True)
class InferenceConfig:
    method: str = "greedy"
    temperature: float = 0.5
    k: int = 10
    max_len: int = 64
    seed: int = 0

    def to_method(self, vocab_size: int | None = None) -> Method:
        if vocab_size is not None and self.method == "topk" and self.k > vocab_size:
            raise ValueError(f"K={self.k} exceeds the vocabulary size {vocab_size}")
        return Method(self.method, temperature=self.temperature, k=self.k)


@dataclass(frozen=True)
class Hypothesis:
    example_id: int
    speaker: str | None
    text: str
    method: str
    seed: int

    def as_turn(self) -> Turn:
        return Turn(self.speaker, self.text)

    def to_json(self) -> str:
        return json.dumps(
            {"example_id": self.example_id, "speaker": self.speaker, "text": self.text,
             "method": self.method, "seed": self.seed},
            ensure_ascii=False,
            sort_keys=True,
        )


def generate_split(
    model, encoder: ContextEncoder, examples: Sequence[EvalExample], config: InferenceConfig
) -> list[Hypothesis]:
    """One hypothesis per context; example ``i`` samples with seed ``config.seed ^ i``."""
    method = config.to_method(len(encoder.vocab))
    out = []
    for i, ex in enumerate(examples):
        seed = config.seed ^ i
        ids = model.generate(encoder.encode_context(ex.dh, ex.x), method, np.random.default_rng(seed), config.max_len)
        speaker, text = encoder.split_speaker(ids)
        if not ids:
            speaker, text = None, EMPTY_MARKER
        out.append(Hypothesis(i, speaker, text, method.label(), seed))
    return out
