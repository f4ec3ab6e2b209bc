"""Choosing one outcome from a logit vector: greedy, temperature softmax, top-K."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Method:
    kind: str = "greedy"
    temperature: float = 1.0
    k: int = 10

    def __post_init__(self) -> None:
        if self.kind not in ("greedy", "softmax", "topk"):
            raise ValueError(f"unknown decoding method {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.k < 1:
            raise ValueError("K must be at least 1")

    @classmethod
    def greedy(cls) -> "Method":
        return cls("greedy")

    @classmethod
    def softmax(cls, temperature: float = 0.5) -> "Method":
        return cls("softmax", temperature=temperature)

    @classmethod
    def topk(cls, k: int = 10) -> "Method":
        return cls("topk", k=k)

    def label(self) -> str:
        if self.kind == "softmax":
            return f"softmax(T={self.temperature:g})"
        if self.kind == "topk":
            return f"topk(K={self.k})"
        return "greedy"


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = (np.asarray(logits, dtype=np.float64) - np.max(logits)) / temperature
    p = np.exp(z)
    return p / p.sum()


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(p) - 1)


def choose(logits: np.ndarray, method: Method, rng: np.random.Generator) -> int:
    if method.kind == "greedy":
        return int(np.argmax(logits))
    if method.kind == "softmax":
        return _draw(softmax(logits, method.temperature), rng)
    k = min(method.k, len(logits))
    top = np.argsort(-np.asarray(logits), kind="stable")[:k]
    return int(top[_draw(softmax(np.asarray(logits)[top]), rng)])
