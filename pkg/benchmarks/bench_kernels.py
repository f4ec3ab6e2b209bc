"""Time the compiled and numpy RNN kernels on the same inputs.

    python3 benchmarks/bench_kernels.py --vocab 2000 --dim 32 --len 40
"""

import argparse
import timeit

import numpy as np

from cdkit.textmodel import kernels
from cdkit.textmodel.neural import TinyNeuralLM
from cdkit.textmodel.vocab import EOS, Encoded


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vocab", type=int, default=2000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--ctx-len", type=int, default=40)
    ap.add_argument("--len", type=int, default=15, help="response length")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    ctx = Encoded("c", tuple(int(t) for t in rng.integers(5, args.vocab, args.ctx_len)))
    y = Encoded("y", tuple(int(t) for t in rng.integers(5, args.vocab, args.len - 1)) + (EOS,))
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled kernel not available; timing the numpy fallback only")

    base = TinyNeuralLM(args.vocab, dim=args.dim, seed=1)
    timings = {}
    for name, backend in backends.items():
        m = TinyNeuralLM(args.vocab, args.dim, params=base.params, backend=backend)
        for label, fn in (("logprob", lambda: m.logprob(ctx, y)), ("grad", lambda: m.grad_logprob(ctx, y))):
            n, _ = timeit.Timer(fn).autorange()
            best = min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n
            timings[name, label] = best
            print(f"{name:>7} {label:<8} {best * 1e3:8.3f} ms")
    if "cython" in backends:
        for label in ("logprob", "grad"):
            print(f"speedup {label:<8} {timings['python', label] / timings['cython', label]:8.2f}x")


if __name__ == "__main__":
    main()
