"""Fluency, diversity, agility and identity metrics plus the human-response baselines."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from cdkit.extraction import Triple, Turn, ordered_fork_pairs
from cdkit.textmodel.tabular import UnknownContext, UnknownResponse
from cdkit.textmodel.vocab import ContextEncoder, Encoded, normalize_speaker, split_tokens

BLEU_EPS = 1e-9
CCE_PAIR_CAP = 10**5


class NoForkPairs(ValueError):
    pass


@dataclass(frozen=True)
class EvalExample:
    """One ``(dh, x)`` context with every ground-truth response and an optional hypothesis."""

    dh: tuple[Turn, ...]
    x: Turn
    references: tuple[Turn, ...]
    hypothesis: Turn | None = None
    dialogue_id: str = ""


def build_eval_examples(triples: Iterable[Triple]) -> list[EvalExample]:
    groups: dict[tuple, list[Turn]] = {}
    for t in triples:
        refs = groups.setdefault((t.dialogue_id, t.dh, t.x), [])
        if t.y not in refs:
            refs.append(t.y)
    return [EvalExample(dh, x, tuple(refs), dialogue_id=did) for (did, dh, x), refs in groups.items()]


def with_hypotheses(examples: Sequence[EvalExample], hypotheses: Sequence[Turn]) -> list[EvalExample]:
    if len(examples) != len(hypotheses):
        raise ValueError("one hypothesis per example is required")
    return [replace(e, hypothesis=h) for e, h in zip(examples, hypotheses)]


# ---------------------------------------------------------------------------
# Perplexity
# ---------------------------------------------------------------------------


def perplexity_detail(model, pairs: Iterable[tuple[Encoded, Encoded]]) -> tuple[float, int, float]:
    """Return ``(ppl, examples used, mean NLL per example)``.

    PPL pools all response tokens (EOS included). Pairs the model cannot
    score, such as responses outside a tabular inventory, are skipped.
    """
    nll = 0.0
    tokens = 0
    used = 0
    for ctx, y in pairs:
        try:
            lp = model.logprob(ctx, y)
        except (UnknownResponse, UnknownContext):
            continue
        nll -= lp
        tokens += len(y.ids)
        used += 1
    if not used or not tokens:
        return math.nan, used, math.nan
    return math.exp(nll / tokens), used, nll / used


def perplexity(model, pairs: Iterable[tuple[Encoded, Encoded]]) -> float:
    return perplexity_detail(model, pairs)[0]


def sequence_ppl(model, ctx: Encoded, y: Encoded) -> float:
    return math.exp(-model.logprob(ctx, y) / len(y.ids))


def reference_pairs(examples: Sequence[EvalExample], encoder: ContextEncoder) -> list[tuple[Encoded, Encoded]]:
    out = []
    for e in examples:
        ctx = encoder.encode_context(e.dh, e.x)
        out.extend((ctx, encoder.encode_response(r)) for r in e.references)
    return out


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[Sequence[str]], n: int = 4) -> float:
    """Corpus BLEU-n (x100) with multi-reference clipping.

    Zero matched counts are replaced by a 1e-9 epsilon; orders for which the
    corpus has no hypothesis n-grams at all are left out of the geometric
    mean. The brevity penalty uses the closest reference length per example.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    matched = [0] * n
    total = [0] * n
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        h = split_tokens(hyp)
        rs = [split_tokens(r) for r in refs]
        hyp_len += len(h)
        ref_len += min((len(r) for r in rs), key=lambda L: (abs(L - len(h)), L))
        for m in range(1, n + 1):
            hc = _ngrams(h, m)
            cap: Counter = Counter()
            for r in rs:
                cap |= _ngrams(r, m)
            matched[m - 1] += sum(min(c, cap[g]) for g, c in hc.items())
            total[m - 1] += sum(hc.values())
    if hyp_len == 0:
        return 0.0
    logs = [math.log(max(matched[i], BLEU_EPS) / total[i]) for i in range(n) if total[i] > 0]
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def bleu(examples: Sequence[EvalExample], n: int = 4) -> float:
    if n not in (1, 2, 4):
        raise ValueError("BLEU order must be 1, 2 or 4")
    if not examples:
        return math.nan
    hyps = [e.hypothesis.text if e.hypothesis else "" for e in examples]
    return corpus_bleu(hyps, [[r.text for r in e.references] for e in examples], n)


def human_holdout_bleu(examples: Sequence[EvalExample], n: int = 4) -> float:
    """Score every reference against the remaining references of its context."""
    hyps, refs = [], []
    for e in examples:
        if len(e.references) < 2:
            continue
        for i, r in enumerate(e.references):
            hyps.append(r.text)
            refs.append([o.text for j, o in enumerate(e.references) if j != i])
    if not hyps:
        return math.nan
    return corpus_bleu(hyps, refs, n)


# ---------------------------------------------------------------------------
# Diversity and identity
# ---------------------------------------------------------------------------


def distinct_n(hypotheses: Iterable[str], n: int) -> float:
    grams: Counter = Counter()
    for h in hypotheses:
        grams.update(_ngrams(split_tokens(h), n))
    total = sum(grams.values())
    return 100.0 * len(grams) / total if total else 0.0


def identity_accuracy(examples: Sequence[EvalExample]) -> float:
    """Percent of hypotheses whose speaker matches any reference speaker."""
    if not examples:
        return math.nan
    hits = 0
    for e in examples:
        spk = normalize_speaker(e.hypothesis.speaker) if e.hypothesis else None
        if spk is not None and spk in {normalize_speaker(r.speaker) for r in e.references}:
            hits += 1
    return 100.0 * hits / len(examples)


# ---------------------------------------------------------------------------
# Agility
# ---------------------------------------------------------------------------


def cce(model, pairs: Sequence[tuple[Encoded, Encoded, Encoded]]) -> float:
    """Mean of ``PPL(y' | dh, x) - PPL(y | dh, x)`` over ``(context, y, y')`` triples."""
    if not pairs:
        raise NoForkPairs("no fork pairs to compute CCE on")
    total = 0.0
    for ctx, y, y_other in pairs:
        total += sequence_ppl(model, ctx, y_other) - sequence_ppl(model, ctx, y)
    return total / len(pairs)


def cce_pairs(
    triples: Sequence[Triple],
    encoder: ContextEncoder,
    rng: np.random.Generator | None = None,
    cap: int = CCE_PAIR_CAP,
) -> list[tuple[Encoded, Encoded, Encoded]]:
    """Ordered fork pairs as ``(context of x, y, sibling's y')``; sampled down to ``cap``."""
    idx = ordered_fork_pairs(triples)
    if len(idx) > cap:
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = np.sort(rng.choice(len(idx), size=cap, replace=False))
        idx = [idx[k] for k in keep]
    return [
        (
            encoder.encode_context(triples[i].dh, triples[i].x),
            encoder.encode_response(triples[i].y),
            encoder.encode_response(triples[j].y),
        )
        for i, j in idx
    ]


# ---------------------------------------------------------------------------
# Human-response oracle
# ---------------------------------------------------------------------------


def human_oracle_ppl(examples: Sequence[EvalExample], token_count: Callable[[Turn], int]) -> float:
    """PPL of the oracle that spreads probability uniformly over each context's references.

    Each reference contributes ``log(k) / |y|``; the mean is exponentiated.
    """
    logs = []
    for e in examples:
        k = len(e.references)
        logs.extend(math.log(k) / token_count(r) for r in e.references)
    if not logs:
        return math.nan
    return math.exp(sum(logs) / len(logs))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    ppl: float | None = None
    bleu1: float | None = None
    bleu2: float | None = None
    bleu4: float | None = None
    dist1: float | None = None
    dist2: float | None = None
    cce: float | None = None
    identity_acc: float | None = None
    counts: dict[str, int] = field(default_factory=dict)
    model: str = ""
    loss: str = ""
    inference: str = ""

    def as_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and not math.isfinite(v):
                out[k] = None
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


CSV_COLUMNS = ["model", "loss", "inference", "ppl", "bleu1", "bleu2", "bleu4", "dist1", "dist2", "cce", "identity_acc"]


def reports_to_csv(reports: Iterable[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        d = r.as_dict()
        w.writerow(["" if d[c] is None else d[c] for c in CSV_COLUMNS])
    return buf.getvalue()
