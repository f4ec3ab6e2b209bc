"""Causal triple extraction, counterpart sampling, corpus splits and seed-dialogue sampling."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from cdkit.dag import DEFAULT_PATH_CAP, DialogueDag, iter_root_prefixes, topological_order


class TooShort(ValueError):
    """No root path in the dialogue has the required number of turns."""


@dataclass(frozen=True)
class Turn:
    speaker: str | None
    text: str

    def to_obj(self) -> dict:
        return {"speaker": self.speaker, "text": self.text}

    @classmethod
    def from_obj(cls, obj: dict) -> "Turn":
        return cls(obj.get("speaker"), obj["text"])


@dataclass(frozen=True)
class Triple:
    """A ``(dh, x, y)`` example with the fork siblings usable as counterpart causes."""

    dh: tuple[Turn, ...]
    x: Turn
    y: Turn
    x_node_id: int | None = None
    y_node_id: int | None = None
    counterpart_x_ids: tuple[int, ...] = ()
    counterparts: tuple[Turn, ...] = ()
    dialogue_id: str = ""

    @property
    def key(self) -> tuple:
        return (self.dh, self.x, self.y)

    def to_obj(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "dh": [t.to_obj() for t in self.dh],
            "x": self.x.to_obj(),
            "y": self.y.to_obj(),
            "counterparts": [t.to_obj() for t in self.counterparts],
            "x_id": self.x_node_id,
            "y_id": self.y_node_id,
            "counterpart_ids": list(self.counterpart_x_ids),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "Triple":
        cps = tuple(Turn.from_obj(c) for c in obj.get("counterparts", []))
        ids = obj.get("counterpart_ids")
        if ids is None or len(ids) != len(cps):
            ids = list(range(len(cps)))
        return cls(
            dh=tuple(Turn.from_obj(t) for t in obj["dh"]),
            x=Turn.from_obj(obj["x"]),
            y=Turn.from_obj(obj["y"]),
            x_node_id=obj.get("x_id"),
            y_node_id=obj.get("y_id"),
            counterpart_x_ids=tuple(ids),
            counterparts=cps,
            dialogue_id=obj.get("dialogue_id", ""),
        )


def _turn(dag: DialogueDag, nid: int) -> Turn:
    n = dag.by_id[nid]
    return Turn(n.speaker if n.is_utterance else None, n.text)


def extract_triples(dag: DialogueDag, cap: int = DEFAULT_PATH_CAP) -> list[Triple]:
    """De-duplicated triples for every utterance edge and every root path reaching its source.

    Counterparts of a triple are the other utterance children of the same
    history (the roots, when the history is empty) whose pairing with ``y``
    is not itself an extracted triple.
    """
    raw: list[tuple[tuple[int, ...], int, int]] = []
    seen: set[tuple] = set()
    for prefix in iter_root_prefixes(dag, cap):
        x = prefix[-1]
        if not dag.by_id[x].is_utterance:
            continue
        for y in dag.children[x]:
            if not dag.by_id[y].is_utterance:
                continue
            dh = tuple(_turn(dag, n) for n in prefix[:-1])
            key = (dh, _turn(dag, x), _turn(dag, y))
            if key in seen:
                continue
            seen.add(key)
            raw.append((prefix[:-1], x, y))

    out = []
    for hist, x, y in raw:
        dh = tuple(_turn(dag, n) for n in hist)
        siblings = dag.children[hist[-1]] if hist else dag.roots
        cids = []
        for c in siblings:
            if c == x or not dag.by_id[c].is_utterance:
                continue
            if (dh, _turn(dag, c), _turn(dag, y)) in seen:
                continue
            cids.append(c)
        out.append(
            Triple(
                dh=dh,
                x=_turn(dag, x),
                y=_turn(dag, y),
                x_node_id=x,
                y_node_id=y,
                counterpart_x_ids=tuple(cids),
                counterparts=tuple(_turn(dag, c) for c in cids),
                dialogue_id=dag.dialogue_id,
            )
        )
    return out


def extract_corpus(dags: Iterable[DialogueDag], cap: int = DEFAULT_PATH_CAP) -> list[Triple]:
    out: list[Triple] = []
    for dag in dags:
        out.extend(extract_triples(dag, cap))
    return out


def sample_counterpart(triple: Triple, rng: np.random.Generator) -> int | None:
    if not triple.counterpart_x_ids:
        return None
    return triple.counterpart_x_ids[int(rng.integers(len(triple.counterpart_x_ids)))]


def write_triples(triples: Sequence[Triple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(json.dumps(t.to_obj(), ensure_ascii=False, sort_keys=True) + "\n")


def read_triples(path) -> list[Triple]:
    with open(path, encoding="utf-8") as fh:
        return [Triple.from_obj(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    valid: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        fr = (self.train, self.valid, self.test)
        if any(not 0.0 <= f <= 1.0 for f in fr):
            raise ValueError(f"split fractions must lie in [0, 1], got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")


def _unit_hash(dialogue_id: str, seed: int) -> float:
    digest = hashlib.sha256(f"{seed}\x00{dialogue_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def split_ids(ids: Iterable[str], spec: SplitSpec) -> tuple[set[str], set[str], set[str]]:
    train: set[str] = set()
    valid: set[str] = set()
    test: set[str] = set()
    for did in ids:
        u = _unit_hash(did, spec.seed)
        if u < spec.train:
            train.add(did)
        elif u < spec.train + spec.valid:
            valid.add(did)
        else:
            test.add(did)
    return train, valid, test


def split_corpus(dags: Iterable[DialogueDag], spec: SplitSpec) -> tuple[set[str], set[str], set[str]]:
    """Whole dialogues go to one split, chosen by a seeded hash of ``dialogue_id``."""
    return split_ids((d.dialogue_id for d in dags), spec)


# ---------------------------------------------------------------------------
# Seed-dialogue sampler
# ---------------------------------------------------------------------------


def clamp_start(t: int, length: int) -> int:
    """Clamp a sampled start step into ``[2, length]`` after shifting by two."""
    return max(min(t + 2, length), 2)


@dataclass
class SeedSample:
    path: list[int]
    t: int
    length: int
    t_star: int = field(init=False)

    def __post_init__(self) -> None:
        self.t_star = clamp_start(self.t, self.length)


def _utterance_depths(dag: DialogueDag) -> dict[int, int]:
    """Max number of utterance nodes on any path from each node down to a leaf."""
    best: dict[int, int] = {}
    for n in reversed(topological_order(dag)):
        own = 1 if dag.by_id[n].is_utterance else 0
        best[n] = own + max((best[c] for c in dag.children[n]), default=0)
    return best


def sample_seed(dag: DialogueDag, lam: float, rng: np.random.Generator) -> SeedSample:
    """Draw a seed dialogue and report the intermediate draws.

    Walks from a uniformly chosen root, picking uniformly among the children
    at every step, restricted to nodes that can still complete a path with at
    least two utterances. The walked path is cut after its first ``t*``
    utterances.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    depth = _utterance_depths(dag)
    viable_roots = [r for r in dag.roots if depth[r] >= 2]
    if not viable_roots:
        raise TooShort(f"{dag.dialogue_id}: no root path with two utterances")
    t = int(rng.poisson(lam))
    node = viable_roots[int(rng.integers(len(viable_roots)))]
    path = [node]
    utts = 1 if dag.by_id[node].is_utterance else 0
    while dag.children[node]:
        options = [c for c in dag.children[node] if utts + depth[c] >= 2]
        node = options[int(rng.integers(len(options)))]
        path.append(node)
        utts += 1 if dag.by_id[node].is_utterance else 0
    sample = SeedSample(path=path, t=t, length=utts)
    kept, seen = [], 0
    for n in path:
        if seen == sample.t_star:
            break
        kept.append(n)
        seen += 1 if dag.by_id[n].is_utterance else 0
    sample.path = kept
    return sample


def sample_seed_dialogue(dag: DialogueDag, lam: float, rng: np.random.Generator) -> list[int]:
    return sample_seed(dag, lam, rng).path


# ---------------------------------------------------------------------------
# Fork pairs
# ---------------------------------------------------------------------------


def ordered_fork_pairs(triples: Sequence[Triple]) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)`` sharing a history with ``x_i != x_j`` and ``(dh, x_i, y_j)`` not extracted.

    Triple ``j`` supplies the mismatched response ``y_j`` for the cause of ``i``.
    """
    keys = {t.key for t in triples}
    groups: dict[tuple, list[int]] = {}
    for i, t in enumerate(triples):
        groups.setdefault((t.dialogue_id, t.dh), []).append(i)
    out = []
    for idx in groups.values():
        for i in idx:
            for j in idx:
                a, b = triples[i], triples[j]
                if a.x != b.x and (a.dh, a.x, b.y) not in keys:
                    out.append((i, j))
    return out


def fork_pairs(triples: Sequence[Triple]) -> list[tuple[int, int]]:
    """Unordered binary forks ``i < j`` where neither response also answers the other cause."""
    ordered = set(ordered_fork_pairs(triples))
    return sorted((i, j) for i, j in ordered if i < j and (j, i) in ordered)
