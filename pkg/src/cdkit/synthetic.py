"""Seeded synthetic corpora of binary forks and random DAGs."""

from __future__ import annotations

import numpy as np

from cdkit.dag import SCENE, UTTERANCE, DialogueDag, TurnNode


def _sentence(rng: np.random.Generator, n_words: int, lo: int = 3, hi: int = 7) -> str:
    return " ".join(f"w{int(w)}" for w in rng.integers(0, n_words, size=int(rng.integers(lo, hi + 1))))


def make_fork_corpus(
    n_forks: int = 200,
    branches: int = 2,
    noise: float = 0.1,
    seed: int = 0,
    n_words: int = 60,
) -> list[DialogueDag]:
    """Dialogues ``h -> x_k -> y_k`` sharing one history per fork.

    With probability ``noise`` a branch's response is replaced by a response
    copied from another fork, so it is no longer predictable from its cause.
    Responses within one fork stay distinct.
    """
    rng = np.random.default_rng(seed)
    texts = [[_sentence(rng, n_words) for _ in range(branches)] for _ in range(n_forks)]
    dags = []
    for i in range(n_forks):
        nodes = [TurnNode(0, UTTERANCE, f"topic {i} " + _sentence(rng, n_words), "Alice")]
        edges = []
        responses = list(texts[i])
        for k in range(branches):
            if n_forks > 1 and rng.random() < noise:
                while True:
                    j = int(rng.integers(n_forks))
                    cand = texts[j][int(rng.integers(branches))]
                    if j != i and cand not in responses:
                        responses[k] = cand
                        break
        for k in range(branches):
            xid, yid = 1 + 2 * k, 2 + 2 * k
            nodes.append(TurnNode(xid, UTTERANCE, f"branch {k} " + _sentence(rng, n_words), "Bob"))
            nodes.append(TurnNode(yid, UTTERANCE, responses[k], "Alice"))
            edges += [(0, xid), (xid, yid)]
        dags.append(DialogueDag(f"fork{i:04d}", tuple(nodes), tuple(edges)))
    return dags


def random_dag(rng: np.random.Generator, max_nodes: int = 30, edge_prob: float = 0.2, scene_prob: float = 0.1) -> DialogueDag:
    """Random DAG over ids ``0..n-1`` with edges only from lower to higher ids; texts are unique."""
    n = int(rng.integers(2, max_nodes + 1))
    nodes = []
    for i in range(n):
        if i > 0 and rng.random() < scene_prob:
            nodes.append(TurnNode(i, SCENE, f"scene {i}"))
        else:
            nodes.append(TurnNode(i, UTTERANCE, f"utterance {i}", f"S{i % 3}"))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < edge_prob]
    return DialogueDag(f"rand{int(rng.integers(10**9))}", tuple(nodes), tuple(edges))
