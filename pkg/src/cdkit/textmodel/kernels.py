"""Recurrent LM forward/backward built on a swappable recurrence backend.

Only the time recurrence runs in the backend; the input projection and the
output softmax are batched over time with numpy. The compiled extension is
used when it was built; set ``CDKIT_PURE_PYTHON=1`` to force the numpy
fallback.
"""

import os

import numpy as np

from cdkit.textmodel import _rnn_py


class RnnKernels:
    """Token layout: ``tokens[0]`` is BOS and ``tokens[first:]`` are scored.

    ``tokens[t]`` is predicted from the state after ``tokens[t - 1]``.
    """

    def __init__(self, recurrence, name: str) -> None:
        self.rec = recurrence
        self.name = name

    def run_hidden(self, E, Wx, Wh, b, tokens, h0):
        tokens = np.asarray(tokens, dtype=np.int64)
        X = np.zeros((len(tokens) + 1, Wh.shape[0]))
        X[1:] = E[tokens] @ Wx.T + b
        return self.rec.recur_forward(X, Wh, h0)[-1]

    def _states(self, E, Wx, Wh, b, tokens):
        X = np.zeros((len(tokens), Wh.shape[0]))
        X[1:] = E[tokens[:-1]] @ Wx.T + b
        return self.rec.recur_forward(X, Wh, np.zeros(Wh.shape[0]))

    @staticmethod
    def _log_probs(U, c, hs, targets):
        logits = hs @ U.T + c
        m = logits.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
        return logits - lse

    def seq_logprob(self, E, Wx, Wh, b, U, c, tokens, first):
        tokens = np.asarray(tokens, dtype=np.int64)
        if first >= len(tokens):
            return 0.0
        hs = self._states(E, Wx, Wh, b, tokens)
        targets = tokens[first:]
        lp = self._log_probs(U, c, hs[first:], targets)
        return float(lp[np.arange(len(targets)), targets].sum())

    def seq_logprob_grad(self, E, Wx, Wh, b, U, c, tokens, first, scale, gE, gWx, gWh, gb, gU, gc):
        """Return the log-probability and add ``scale`` times its gradient into the g* arrays."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if first >= len(tokens):
            return 0.0
        hs = self._states(E, Wx, Wh, b, tokens)
        targets = tokens[first:]
        rows = np.arange(len(targets))
        lp = self._log_probs(U, c, hs[first:], targets)
        d = -np.exp(lp) * scale
        d[rows, targets] += scale
        gU += d.T @ hs[first:]
        gc += d.sum(axis=0)
        dhs = np.zeros_like(hs)
        dhs[first:] = d @ U
        da = self.rec.recur_backward(hs, dhs, Wh)[1:]
        prev = tokens[:-1]
        gb += da.sum(axis=0)
        gWx += da.T @ E[prev]
        gWh += da.T @ hs[:-1]
        np.add.at(gE, prev, da @ Wx)
        return float(lp[rows, targets].sum())


python_backend = RnnKernels(_rnn_py, "python")

compiled_backend = None
if os.environ.get("CDKIT_PURE_PYTHON", "") in ("", "0"):
    try:
        from cdkit.textmodel import _rnn_ext
    except ImportError:
        pass
    else:
        compiled_backend = RnnKernels(_rnn_ext, "cython")

backend = compiled_backend or python_backend
BACKEND = backend.name

run_hidden = backend.run_hidden
seq_logprob = backend.seq_logprob
seq_logprob_grad = backend.seq_logprob_grad
