"""Exact conditional model over a finite response inventory: one softmax row per context."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from cdkit.textmodel.decoding import Method, choose, softmax
from cdkit.textmodel.vocab import EOS, Encoded


class UnknownContext(KeyError):
    pass


class UnknownResponse(KeyError):
    pass


class TabularSoftmaxModel:
    """``P(r | c) = softmax(theta_c)[r]`` for every response ``r`` in the inventory.

    Parameters are a flat vector laid out row-major as ``(context, response)``.
    Unknown contexts raise in strict mode and get a uniform row otherwise.
    """

    kind = "tabular"

    def __init__(
        self,
        contexts: Sequence[str],
        responses: Sequence[Encoded],
        params: np.ndarray | None = None,
        strict: bool = False,
    ) -> None:
        if not responses:
            raise ValueError("response inventory is empty")
        self.contexts = list(contexts)
        self.responses = list(responses)
        self.ctx_index = {k: i for i, k in enumerate(self.contexts)}
        self.resp_index = {r.key: i for i, r in enumerate(self.responses)}
        if len(self.ctx_index) != len(self.contexts) or len(self.resp_index) != len(self.responses):
            raise ValueError("contexts and responses must be unique")
        shape = (len(self.contexts), len(self.responses))
        if params is None:
            params = np.zeros(shape[0] * shape[1])
        self.params = np.asarray(params, dtype=np.float64).copy()
        if self.params.shape != (shape[0] * shape[1],):
            raise ValueError(f"expected {shape[0] * shape[1]} parameters, got {self.params.shape}")
        self.strict = strict

    @classmethod
    def from_pairs(cls, contexts: Iterable[Encoded], responses: Iterable[Encoded], **kw) -> "TabularSoftmaxModel":
        """Build the table from every context and response seen, in first-seen order."""
        ctx = list(dict.fromkeys(c.key for c in contexts))
        resp = list({r.key: r for r in responses}.values())
        return cls(ctx, resp, **kw)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def table(self) -> np.ndarray:
        return self.params.reshape(len(self.contexts), len(self.responses))

    def _row(self, ctx: Encoded) -> int | None:
        row = self.ctx_index.get(ctx.key)
        if row is None and self.strict:
            raise UnknownContext(ctx.key)
        return row

    def logits(self, ctx: Encoded) -> np.ndarray:
        row = self._row(ctx)
        if row is None:
            return np.zeros(len(self.responses))
        return self.table[row]

    def distribution(self, ctx: Encoded) -> np.ndarray:
        return softmax(self.logits(ctx))

    def logprob(self, ctx: Encoded, y: Encoded) -> float:
        if not y.ids:
            return 0.0
        r = self.resp_index.get(y.key)
        if r is None:
            raise UnknownResponse(y.key)
        z = self.logits(ctx)
        m = z.max()
        return float(z[r] - m - np.log(np.exp(z - m).sum()))

    def accumulate_grad(self, ctx: Encoded, y: Encoded, scale: float, out: np.ndarray) -> float:
        """Add ``scale * d logprob / d params`` into ``out``; return the log-probability."""
        lp = self.logprob(ctx, y)
        row = self._row(ctx)
        if row is None or not y.ids:
            return lp
        n = len(self.responses)
        g = -softmax(self.table[row]) * scale
        g[self.resp_index[y.key]] += scale
        out[row * n : (row + 1) * n] += g
        return lp

    def grad_logprob(self, ctx: Encoded, y: Encoded) -> np.ndarray:
        out = np.zeros_like(self.params)
        self.accumulate_grad(ctx, y, 1.0, out)
        return out

    def generate(self, ctx: Encoded, method: Method, rng: np.random.Generator, max_len: int = 64) -> list[int]:
        r = self.responses[choose(self.logits(ctx), method, rng)]
        ids = [i for i in r.ids if i != EOS]
        return ids[:max_len]

    def copy(self) -> "TabularSoftmaxModel":
        return TabularSoftmaxModel(self.contexts, self.responses, self.params, self.strict)

    def hyperparameters(self) -> dict:
        return {"strict": self.strict}
