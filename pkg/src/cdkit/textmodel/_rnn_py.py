"""Pure numpy recurrence kernels, the fallback for ``_rnn_ext``.

``recur_forward`` fills ``hs[t] = tanh(X[t] + Wh hs[t-1])`` for ``t >= 1``
starting from ``hs[0] = h0``. ``recur_backward`` turns per-step state
gradients into pre-activation gradients, walking time backwards.
"""

import numpy as np


def recur_forward(X, Wh, h0):
    hs = np.empty_like(X)
    hs[0] = h0
    for t in range(1, len(X)):
        hs[t] = np.tanh(X[t] + Wh @ hs[t - 1])
    return hs


def recur_backward(hs, dhs, Wh):
    da = np.zeros_like(hs)
    carry = np.zeros(hs.shape[1])
    for t in range(len(hs) - 1, 0, -1):
        da[t] = (dhs[t] + carry) * (1.0 - hs[t] ** 2)
        carry = Wh.T @ da[t]
    return da
