"""``cdk`` command line: validate, stats, extract, train, eval, export-dot, sample-seed.

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from cdkit import dag as dagmod
from cdkit import evaluation as ev
from cdkit.extraction import (
    SplitSpec,
    TooShort,
    extract_triples,
    read_triples,
    sample_seed,
    split_corpus,
    write_triples,
)
from cdkit.generation import InferenceConfig, generate_split
from cdkit.textmodel import ContextEncoder, TabularSoftmaxModel, TinyNeuralLM, Vocab
from cdkit.textmodel.checkpoint import load_checkpoint, save_checkpoint
from cdkit.textmodel.vocab import vocab_texts
from cdkit.training import Divergence, LossConfig, encode_triples, train, write_history

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
ALL_METRICS = ("ppl", "bleu", "dist", "cce", "identity")

log = logging.getLogger("cdkit")


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("CDK_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CDK_SEED must be an integer, got {raw!r}") from None


def _read_config(path: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    path = Path(args.path)
    failures = []
    n = 0
    try:
        for source, dag in dagmod.iter_corpus(path, strict=False):
            n += 1
            for v in dagmod.validate(dag):
                failures.append({"file": source, "ref": v.location(), "code": v.code, "message": v.message})
    except dagmod.DagError as exc:
        failures.append({"file": path.name, "ref": "-", "code": exc.code, "message": str(exc)})
    if n == 0 and not failures:
        print(f"warning: no dialogues found under {path}", file=sys.stderr)
    if args.json:
        print(json.dumps({"dialogues": n, "violations": failures}, sort_keys=True))
    else:
        for f in failures:
            print(f"{f['file']}:{f['ref']}:{f['code']}")
    return EXIT_INVALID if failures else EXIT_OK


def cmd_stats(args) -> int:
    stats = dagmod.corpus_stats(dagmod.load_corpus(args.path))
    if args.json:
        print(json.dumps(stats.as_dict(), sort_keys=True))
        return EXIT_OK
    rows = [
        ("# Dialogues", stats.num_dialogues),
        ("# Branches", stats.num_branches),
        ("# Utterances", stats.num_utterances),
        ("# Speakers", stats.num_speakers),
        ("Avg. utts/dial.", f"{stats.avg_utterances_per_dialogue:.1f}"),
        ("Avg. words/utt.", f"{stats.avg_words_per_utterance:.1f}"),
        ("Avg. utts/spk.", f"{stats.avg_utterances_per_speaker:.1f}"),
    ]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v:>10}")
    return EXIT_OK


def cmd_extract(args) -> int:
    dags = dagmod.load_corpus(args.path)
    fr = [float(v) for v in args.split.split(",")]
    if len(fr) != 3:
        raise UsageError("--split takes three comma-separated fractions")
    spec = SplitSpec(*fr, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    per_dialogue = {d.dialogue_id: extract_triples(d) for d in dags}
    everything = [t for d in dags for t in per_dialogue[d.dialogue_id]]
    write_triples(everything, out / "triples.jsonl")
    parts = split_corpus(dags, spec)
    summary = {"triples": len(everything)}
    for name, ids in zip(("train", "valid", "test"), parts):
        part = [t for d in dags if d.dialogue_id in ids for t in per_dialogue[d.dialogue_id]]
        write_triples(part, out / f"{name}.jsonl")
        summary[name] = len(part)
    (out / "splits.json").write_text(
        json.dumps({n: sorted(ids) for n, ids in zip(("train", "valid", "test"), parts)}, indent=1) + "\n",
        encoding="utf-8",
    )
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def build_model(kind: str, data, vocab: Vocab, dim: int, hidden: int | None, seed: int):
    if kind == "tabular":
        return TabularSoftmaxModel.from_pairs(
            [d.ctx for d in data] + [c for d in data for c in d.counterparts], [d.y for d in data]
        )
    return TinyNeuralLM(len(vocab), dim=dim, hidden=hidden, seed=seed)


def cmd_train(args) -> int:
    triples = read_triples(args.triples)
    vocab = Vocab.build(vocab_texts(triples))
    encoder = ContextEncoder(vocab, max_len=args.max_len)
    data = encode_triples(triples, encoder)
    valid = encode_triples(read_triples(args.valid), encoder) if args.valid else None
    model = build_model(args.model, data, vocab, args.dim, args.hidden, args.seed)
    config = LossConfig(
        loss=args.loss,
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        optimizer=args.optimizer,
        max_steps=args.steps,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints" if args.checkpoint_every > 0 else None
    result = train(model, data, config, valid, ckpt_dir, encoder, max(args.checkpoint_every, 1))
    meta = {"loss": args.loss, "model": args.model, "seed": args.seed, "steps": result.steps}
    save_checkpoint(out / "model.json", model, encoder, meta)
    write_history(result.history, out / "history.csv")
    last = result.history[-1] if result.history else None
    print(
        json.dumps(
            {
                "steps": result.steps,
                "epochs": len(result.history),
                "stopped_early": result.stopped_early,
                "train_ppl": last.train_ppl if last else None,
                "loss": last.report.total if last else None,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def _token_counter(encoder: ContextEncoder):
    return lambda turn: len(encoder.encode_response(turn).ids)


def human_report(examples, encoder: ContextEncoder) -> ev.MetricReport:
    refs = [r.text for e in examples for r in e.references]
    multi = sum(1 for e in examples if len(e.references) >= 2)
    return ev.MetricReport(
        ppl=ev.human_oracle_ppl(examples, _token_counter(encoder)),
        bleu1=ev.human_holdout_bleu(examples, 1),
        bleu2=ev.human_holdout_bleu(examples, 2),
        bleu4=ev.human_holdout_bleu(examples, 4),
        dist1=ev.distinct_n(refs, 1),
        dist2=ev.distinct_n(refs, 2),
        cce=None,
        identity_acc=100.0 if examples else None,
        counts={"examples": len(examples), "bleu": multi},
        model="human",
        loss="-",
        inference="-",
    )


def cmd_eval(args) -> int:
    model, encoder, meta = load_checkpoint(args.checkpoint, with_meta=True)
    encoder.ignore_x = args.context_blind
    triples = read_triples(args.split)
    examples = ev.build_eval_examples(triples)
    if not examples:
        print(f"warning: {args.split} has no triples; metrics are null", file=sys.stderr)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise UsageError(f"unknown metrics: {', '.join(sorted(unknown))}")

    if args.human_baseline:
        report = human_report(examples, encoder)
    else:
        config = InferenceConfig(args.inference, args.temperature, args.topk, args.max_len, args.seed)
        report = ev.MetricReport(model=meta.get("model", model.kind), loss=meta.get("loss", ""))
        report.inference = config.to_method().label()
        if "ppl" in metrics:
            ppl, used, _ = ev.perplexity_detail(model, ev.reference_pairs(examples, encoder))
            report.ppl = ppl
            report.counts["ppl"] = used
        if {"bleu", "dist", "identity"} & set(metrics):
            hyps = generate_split(model, encoder, examples, config)
            if args.hypotheses_out:
                Path(args.hypotheses_out).write_text("".join(h.to_json() + "\n" for h in hyps), encoding="utf-8")
            scored = ev.with_hypotheses(examples, [h.as_turn() for h in hyps])
            if "bleu" in metrics:
                report.bleu1, report.bleu2, report.bleu4 = (ev.bleu(scored, n) for n in (1, 2, 4))
                report.counts["bleu"] = len(scored)
            if "dist" in metrics:
                texts = [h.text for h in hyps]
                report.dist1, report.dist2 = ev.distinct_n(texts, 1), ev.distinct_n(texts, 2)
                report.counts["dist"] = len(texts)
            if "identity" in metrics:
                report.identity_acc = ev.identity_accuracy(scored)
                report.counts["identity"] = len(scored)
        if "cce" in metrics:
            pairs = ev.cce_pairs(triples, encoder, np.random.default_rng(args.seed))
            report.counts["cce"] = len(pairs)
            report.cce = ev.cce(model, pairs) if pairs else None
    if args.csv:
        Path(args.csv).write_text(ev.reports_to_csv([report]), encoding="utf-8")
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_export_dot(args) -> int:
    dags = dagmod.load_corpus(args.path)
    if args.out and len(dags) > 1:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for d in dags:
            (out / f"{d.dialogue_id}.dot").write_text(dagmod.export_dot(d), encoding="utf-8")
    elif args.out:
        Path(args.out).write_text(dagmod.export_dot(dags[0]) if dags else "", encoding="utf-8")
    else:
        sys.stdout.write("".join(dagmod.export_dot(d) for d in dags))
    return EXIT_OK


def cmd_sample_seed(args) -> int:
    dags = dagmod.load_corpus(args.path)
    rng = np.random.default_rng(args.seed)
    picks = 0
    for _ in range(args.count):
        dag = dags[int(rng.integers(len(dags)))]
        try:
            s = sample_seed(dag, args.lam, rng)
        except TooShort as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print(json.dumps({"dialogue_id": dag.dialogue_id, "path": s.path, "t": s.t, "t_star": s.t_star, "length": s.length}))
        picks += 1
    return EXIT_OK if picks else EXIT_INVALID


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdk", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check dialogue files against the DAG schema")
    s.add_argument("path")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", help="corpus statistics")
    s.add_argument("path")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("extract", help="write (DH, x, y) triples and split files")
    s.add_argument("path")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--split", default="0.8,0.1,0.1", help="train,valid,test fractions")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="train a model with MLE or ExMATE")
    s.add_argument("--triples", required=True)
    s.add_argument("--valid")
    s.add_argument("--model", choices=("tabular", "neural"), default="tabular")
    s.add_argument("--loss", choices=("mle", "exmate"), default="mle")
    s.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    s.add_argument("--lr", type=float, default=1e-5)
    s.add_argument("--batch", type=int, default=64)
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--steps", type=int, help="stop after this many updates")
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--hidden", type=int)
    s.add_argument("--max-len", type=int, default=256)
    s.add_argument("--checkpoint-every", type=int, default=1, help="0 disables per-epoch checkpoints")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="compute a MetricReport on a triple split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--inference", choices=("greedy", "softmax", "topk"), default="greedy")
    s.add_argument("--temperature", type=float, default=0.5)
    s.add_argument("--topk", type=int, default=10)
    s.add_argument("--max-len", type=int, default=64)
    s.add_argument("--metrics", default=",".join(ALL_METRICS))
    s.add_argument("--seed", type=int)
    s.add_argument("--human-baseline", action="store_true")
    s.add_argument("--context-blind", action="store_true", help="drop the cause turn from every context")
    s.add_argument("--hypotheses-out")
    s.add_argument("--csv")
    s.add_argument("--out")
    s.add_argument("--json", action="store_true", help="accepted for symmetry; output is always JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-dot", help="write Graphviz DOT for each dialogue")
    s.add_argument("path")
    s.add_argument("--out")
    s.set_defaults(func=cmd_export_dot)

    s = sub.add_parser("sample-seed", help="sample seed dialogues for expansion")
    s.add_argument("path")
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sample_seed)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = _read_config(args.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[args.command]
    typed = {}
    for action in subparser._actions:
        names = {action.dest} | {o.lstrip("-").replace("-", "_") for o in action.option_strings}
        key = next((n for n in names if n in values), None)
        if key is not None:
            raw = values[key]
            if isinstance(action, argparse._StoreTrueAction):
                typed[action.dest] = raw.lower() in ("1", "true", "yes", "on")
            else:
                typed[action.dest] = action.type(raw) if action.type else raw
    subparser.set_defaults(**typed)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Divergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except dagmod.DagError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
