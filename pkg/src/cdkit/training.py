"""MLE and ExMATE objectives, the fork-pair ATE diagnostic, and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cdkit.evaluation import NoForkPairs, perplexity_detail
from cdkit.extraction import Triple, fork_pairs
from cdkit.textmodel.checkpoint import save_checkpoint
from cdkit.textmodel.vocab import ContextEncoder, Encoded

log = logging.getLogger(__name__)


class Divergence(RuntimeError):
    pass


@dataclass(frozen=True)
class EncodedTriple:
    ctx: Encoded
    y: Encoded
    counterparts: tuple[Encoded, ...] = ()


def encode_triples(triples: Sequence[Triple], encoder: ContextEncoder) -> list[EncodedTriple]:
    return [
        EncodedTriple(
            ctx=encoder.encode_context(t.dh, t.x),
            y=encoder.encode_response(t.y),
            counterparts=tuple(encoder.encode_context(t.dh, c) for c in t.counterparts),
        )
        for t in triples
    ]


@dataclass
class LossConfig:
    loss: str = "mle"
    lr: float = 1e-5
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0
    optimizer: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    max_steps: int | None = None
    patience: int = 3

    def __post_init__(self) -> None:
        if self.loss not in ("mle", "exmate"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class LossReport:
    mle_term: float
    counterpart_term: float
    total: float
    grad_norm: float
    coverage: float
    n: int


def _objective(model, batch: Sequence[EncodedTriple], rng, exmate: bool) -> tuple[LossReport, np.ndarray]:
    # examples are reduced in batch order so the gradient is bitwise reproducible
    n = len(batch)
    grad = np.zeros_like(model.params)
    mle = 0.0
    counter = 0.0
    covered = 0
    for ex in batch:
        mle -= model.accumulate_grad(ex.ctx, ex.y, -1.0 / n, grad)
        if exmate and ex.counterparts:
            xc = ex.counterparts[int(rng.integers(len(ex.counterparts)))]
            p = math.exp(model.logprob(xc, ex.y))
            model.accumulate_grad(xc, ex.y, p / n, grad)
            counter += p
            covered += 1
    mle /= n
    counter /= n
    report = LossReport(
        mle_term=mle,
        counterpart_term=counter,
        total=mle + counter,
        grad_norm=float(np.linalg.norm(grad)),
        coverage=covered / n,
        n=n,
    )
    return report, grad


def mle_loss(model, batch: Sequence[EncodedTriple]) -> tuple[LossReport, np.ndarray]:
    """Mean negative log-likelihood of the batch and its gradient."""
    return _objective(model, batch, None, exmate=False)


def exmate_loss(model, batch: Sequence[EncodedTriple], rng: np.random.Generator) -> tuple[LossReport, np.ndarray]:
    """MLE plus ``P(y | dh, x_c)`` for one uniformly drawn sibling cause ``x_c`` per example."""
    return _objective(model, batch, rng, exmate=True)


# ---------------------------------------------------------------------------
# Average treatment effect over binary forks
# ---------------------------------------------------------------------------


@dataclass
class AteReport:
    """Mean over forks of ``P(Y1|X1) - P(Y1|X2) + P(Y2|X2) - P(Y2|X1)``.

    Choosing branch X1 plays the role of the treatment and X2 the control;
    whole-sequence probabilities stand in for outcomes, so the value lies in
    [-2, 2].
    """

    ate: float
    n_pairs: int


def estimate_ate(model, pairs: Sequence[tuple[EncodedTriple, EncodedTriple]]) -> AteReport:
    if not pairs:
        raise NoForkPairs("no fork pairs to estimate the treatment effect on")
    total = 0.0
    for a, b in pairs:
        total += (
            math.exp(model.logprob(a.ctx, a.y))
            - math.exp(model.logprob(b.ctx, a.y))
            + math.exp(model.logprob(b.ctx, b.y))
            - math.exp(model.logprob(a.ctx, b.y))
        )
    return AteReport(total / len(pairs), len(pairs))


def ate_pairs(triples: Sequence[Triple], encoded: Sequence[EncodedTriple]) -> list[tuple[EncodedTriple, EncodedTriple]]:
    return [(encoded[i], encoded[j]) for i, j in fork_pairs(triples)]


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


class SGD:
    def __init__(self, lr: float) -> None:
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(config: LossConfig):
    if config.optimizer == "adam":
        return Adam(config.lr, config.beta1, config.beta2, config.eps)
    return SGD(config.lr)


def clip_gradient(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        grad *= max_norm / norm
    return grad


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    report: LossReport
    train_ppl: float
    valid_ppl: float | None = None
    valid_loss: float | None = None


@dataclass
class TrainResult:
    model: object
    history: list[EpochRecord] = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False


def _mean_report(reports: list[LossReport]) -> LossReport:
    n = sum(r.n for r in reports)
    w = [r.n / n for r in reports]
    return LossReport(
        mle_term=sum(wi * r.mle_term for wi, r in zip(w, reports)),
        counterpart_term=sum(wi * r.counterpart_term for wi, r in zip(w, reports)),
        total=sum(wi * r.total for wi, r in zip(w, reports)),
        grad_norm=sum(wi * r.grad_norm for wi, r in zip(w, reports)),
        coverage=sum(wi * r.coverage for wi, r in zip(w, reports)),
        n=n,
    )


def train(
    model,
    data: Sequence[EncodedTriple],
    config: LossConfig,
    valid: Sequence[EncodedTriple] | None = None,
    checkpoint_dir: str | Path | None = None,
    encoder: ContextEncoder | None = None,
    checkpoint_every: int = 1,
) -> TrainResult:
    """Minibatch training, in place on ``model``.

    Shuffling and counterpart draws use separate streams derived from
    ``config.seed``, so MLE and ExMATE runs see the same batch order.
    Early stopping watches validation perplexity when ``valid`` is given.
    """
    result = TrainResult(model)
    if not data or config.epochs == 0 or config.max_steps == 0:
        return result
    shuffle_rng = np.random.default_rng([config.seed, 0])
    counter_rng = np.random.default_rng([config.seed, 1])
    exmate = config.loss == "exmate"
    opt = make_optimizer(config)
    best, stale = math.inf, 0
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(data))
        reports = []
        for start in range(0, len(data), config.batch_size):
            batch = [data[i] for i in order[start : start + config.batch_size]]
            report, grad = _objective(model, batch, counter_rng, exmate)
            if not math.isfinite(report.total) or not np.all(np.isfinite(grad)):
                raise Divergence(f"non-finite loss at epoch {epoch}, step {result.steps + 1}")
            opt.step(model.params, clip_gradient(grad, config.clip_norm))
            reports.append(report)
            result.steps += 1
            if config.max_steps is not None and result.steps >= config.max_steps:
                break
        if not np.all(np.isfinite(model.params)):
            raise Divergence(f"non-finite parameters after epoch {epoch}")

        rec = EpochRecord(
            epoch=epoch,
            steps=result.steps,
            report=_mean_report(reports),
            train_ppl=perplexity_detail(model, [(d.ctx, d.y) for d in data])[0],
        )
        if valid:
            ppl, _, nll = perplexity_detail(model, [(d.ctx, d.y) for d in valid])
            rec.valid_ppl, rec.valid_loss = ppl, nll
        result.history.append(rec)
        log.info("epoch %d loss %.6f train ppl %.4f", epoch, rec.report.total, rec.train_ppl)
        if checkpoint_dir is not None and encoder is not None and epoch % checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch:04d}.json", model, encoder)

        if config.max_steps is not None and result.steps >= config.max_steps:
            break
        if rec.valid_ppl is not None:
            if rec.valid_ppl < best:
                best, stale = rec.valid_ppl, 0
            else:
                stale += 1
                if stale >= config.patience:
                    result.stopped_early = True
                    break
    return result


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "loss", "ppl"])
        for rec in history:
            w.writerow([rec.epoch, "train", repr(rec.report.total), repr(rec.train_ppl)])
            if rec.valid_ppl is not None:
                w.writerow([rec.epoch, "valid", repr(rec.valid_loss), repr(rec.valid_ppl)])
