"""Tiny recurrent language model scored only on response tokens."""

from __future__ import annotations

import numpy as np

from cdkit.textmodel import kernels
from cdkit.textmodel.decoding import Method, choose
from cdkit.textmodel.vocab import BOS, EOS, Encoded

INIT_SCALE = 0.08


class TinyNeuralLM:
    """Elman RNN: ``h_t = tanh(Wx e_t + Wh h_{t-1} + b)``, logits ``U h_t + c``.

    The input is ``BOS + context + response``; log-probabilities sum only
    over response positions. Parameters live in one flat vector in the order
    ``E, Wx, Wh, b, U, c``.
    """

    kind = "neural"

    def __init__(
        self,
        vocab_size: int,
        dim: int = 32,
        hidden: int | None = None,
        params: np.ndarray | None = None,
        seed: int = 0,
        backend=None,
    ) -> None:
        self.vocab_size = vocab_size
        self.dim = dim
        self.hidden = hidden or dim
        V, D, H = vocab_size, dim, self.hidden
        self.shapes = {
            "E": (V, D),
            "Wx": (H, D),
            "Wh": (H, H),
            "b": (H,),
            "U": (V, H),
            "c": (V,),
        }
        n = sum(int(np.prod(s)) for s in self.shapes.values())
        if params is None:
            params = np.random.default_rng(seed).uniform(-INIT_SCALE, INIT_SCALE, size=n)
        self.params = np.asarray(params, dtype=np.float64).copy()
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")
        self.k = backend or kernels.backend

    @property
    def n_params(self) -> int:
        return self.params.size

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out, off = {}, 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape))
            out[name] = flat[off : off + size].reshape(shape)
            off += size
        return out

    def _weights(self):
        w = self.views(self.params)
        return w["E"], w["Wx"], w["Wh"], w["b"], w["U"], w["c"]

    @staticmethod
    def _tokens(ctx: Encoded, y: Encoded) -> tuple[np.ndarray, int]:
        toks = np.array((BOS, *ctx.ids, *y.ids), dtype=np.int64)
        return toks, 1 + len(ctx.ids)

    def logprob(self, ctx: Encoded, y: Encoded) -> float:
        toks, first = self._tokens(ctx, y)
        return float(self.k.seq_logprob(*self._weights(), toks, first))

    def accumulate_grad(self, ctx: Encoded, y: Encoded, scale: float, out: np.ndarray) -> float:
        """Add ``scale * d logprob / d params`` into ``out``; return the log-probability."""
        toks, first = self._tokens(ctx, y)
        g = self.views(out)
        return float(
            self.k.seq_logprob_grad(
                *self._weights(), toks, first, float(scale), g["E"], g["Wx"], g["Wh"], g["b"], g["U"], g["c"]
            )
        )

    def grad_logprob(self, ctx: Encoded, y: Encoded) -> np.ndarray:
        out = np.zeros_like(self.params)
        self.accumulate_grad(ctx, y, 1.0, out)
        return out

    def step_logits(self, h: np.ndarray) -> np.ndarray:
        w = self.views(self.params)
        return w["U"] @ h + w["c"]

    def generate(self, ctx: Encoded, method: Method, rng: np.random.Generator, max_len: int = 64) -> list[int]:
        E, Wx, Wh, b, _, _ = self._weights()
        h = self.k.run_hidden(E, Wx, Wh, b, np.array((BOS, *ctx.ids), dtype=np.int64), np.zeros(self.hidden))
        out: list[int] = []
        while len(out) < max_len:
            tok = choose(self.step_logits(h), method, rng)
            if tok == EOS:
                break
            out.append(tok)
            h = self.k.run_hidden(E, Wx, Wh, b, np.array([tok], dtype=np.int64), h)
        return out

    def copy(self) -> "TinyNeuralLM":
        return TinyNeuralLM(self.vocab_size, self.dim, self.hidden, self.params, backend=self.k)

    def hyperparameters(self) -> dict:
        return {"vocab_size": self.vocab_size, "dim": self.dim, "hidden": self.hidden}
