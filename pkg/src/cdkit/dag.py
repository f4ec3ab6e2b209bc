"""Conversational DAGs: parsing, validation, path analysis, statistics and DOT export.

A dialogue is stored as nodes (utterances or scene notes) plus directed
edges ``(i, j)`` meaning node ``j`` is a possible response to node ``i``.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

UTTERANCE = "utterance"
SCENE = "scene"
NODE_KINDS = (UTTERANCE, SCENE)

DEFAULT_PATH_CAP = 10**6


class DagError(Exception):
    """Base class for dialogue-DAG errors. ``ref`` names the offending node or edge."""

    code = "DagError"

    def __init__(self, message: str, ref: object = None) -> None:
        super().__init__(message)
        self.ref = ref


class MalformedDocument(DagError):
    code = "MalformedDocument"


class SchemaViolation(DagError):
    code = "SchemaViolation"


class CycleDetected(DagError):
    code = "CycleDetected"


class DanglingEdge(DagError):
    code = "DanglingEdge"


class DuplicateEdge(DagError):
    code = "DuplicateEdge"


class DuplicateNode(DagError):
    code = "DuplicateNode"


class SelfLoop(DagError):
    code = "SelfLoop"


class NoRoot(DagError):
    code = "NoRoot"


class PathExplosion(DagError):
    code = "PathExplosion"


_ERRORS = {
    cls.code: cls
    for cls in (
        SchemaViolation,
        CycleDetected,
        DanglingEdge,
        DuplicateEdge,
        DuplicateNode,
        SelfLoop,
        NoRoot,
    )
}


@dataclass(frozen=True)
class Violation:
    """One failed invariant. ``ref`` is a node id or an ``(i, j)`` edge."""

    code: str
    ref: object
    message: str = ""

    def location(self) -> str:
        if isinstance(self.ref, tuple):
            return f"{self.ref[0]}-{self.ref[1]}"
        return "-" if self.ref is None else str(self.ref)

    def to_error(self) -> DagError:
        return _ERRORS[self.code](self.message or self.code, self.ref)


@dataclass(frozen=True)
class TurnNode:
    id: int
    kind: str
    text: str
    speaker: str | None = None
    quality_flags: tuple[str, ...] = ()

    @property
    def is_utterance(self) -> bool:
        return self.kind == UTTERANCE


@dataclass(frozen=True)
class DialogueDag:
    dialogue_id: str
    nodes: tuple[TurnNode, ...]
    edges: tuple[tuple[int, int], ...]
    speakers: Mapping[str, str] = field(default_factory=dict)

    @cached_property
    def by_id(self) -> dict[int, TurnNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for i, j in self.edges:
            if i in out and j not in out[i]:
                out[i].append(j)
        for v in out.values():
            v.sort()
        return out

    @cached_property
    def parents(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for i, j in self.edges:
            if j in out and i not in out[j]:
                out[j].append(i)
        for v in out.values():
            v.sort()
        return out

    @cached_property
    def roots(self) -> list[int]:
        return sorted(n for n, ps in self.parents.items() if not ps)

    @cached_property
    def leaves(self) -> list[int]:
        return sorted(n for n, cs in self.children.items() if not cs)


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------


def _node_from_obj(obj: object, index: int) -> TurnNode:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"node #{index} is not an object", index)
    for key in ("id", "type", "text"):
        if key not in obj:
            raise SchemaViolation(f"node #{index} missing field {key!r}", obj.get("id", index))
    nid = obj["id"]
    if not isinstance(nid, int) or isinstance(nid, bool) or nid < 0:
        raise SchemaViolation(f"node #{index} has invalid id {nid!r}", index)
    kind = obj["type"]
    text = obj["text"]
    speaker = obj.get("speaker")
    flags = obj.get("quality_flags", [])
    if not isinstance(text, str):
        raise SchemaViolation(f"node {nid}: text must be a string", nid)
    if speaker is not None and not isinstance(speaker, str):
        raise SchemaViolation(f"node {nid}: speaker must be a string or null", nid)
    if not isinstance(flags, list) or not all(isinstance(f, str) for f in flags):
        raise SchemaViolation(f"node {nid}: quality_flags must be a list of strings", nid)
    return TurnNode(id=nid, kind=kind, text=text, speaker=speaker, quality_flags=tuple(flags))


def dag_from_obj(doc: object) -> DialogueDag:
    """Build a DialogueDag from a decoded JSON object without checking graph invariants."""
    if not isinstance(doc, dict):
        raise MalformedDocument("dialogue document must be a JSON object")
    for key in ("dialogue_id", "nodes", "edges"):
        if key not in doc:
            raise SchemaViolation(f"missing top-level field {key!r}")
    if not isinstance(doc["dialogue_id"], str):
        raise SchemaViolation("dialogue_id must be a string")
    if not isinstance(doc["nodes"], list) or not isinstance(doc["edges"], list):
        raise SchemaViolation("nodes and edges must be arrays")
    nodes = tuple(_node_from_obj(n, i) for i, n in enumerate(doc["nodes"]))
    edges = []
    for e in doc["edges"]:
        if (
            not isinstance(e, list)
            or len(e) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in e)
        ):
            raise SchemaViolation(f"edge {e!r} is not a pair of integers", None)
        edges.append((e[0], e[1]))
    speakers = doc.get("speakers") or {}
    if not isinstance(speakers, dict):
        raise SchemaViolation("speakers must be an object")
    return DialogueDag(
        dialogue_id=doc["dialogue_id"], nodes=nodes, edges=tuple(edges), speakers=dict(speakers)
    )


def parse_dialogue(raw: bytes | str, *, strict: bool = True) -> DialogueDag:
    """Parse one dialogue document.

    With ``strict`` (the default) the first invariant violation is raised as
    its error class; otherwise the unchecked DAG is returned so callers can
    run :func:`validate` themselves.
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    dag = dag_from_obj(doc)
    if strict:
        problems = validate(dag)
        if problems:
            raise problems[0].to_error()
    return dag


def dag_to_obj(dag: DialogueDag) -> dict:
    doc: dict = {
        "dialogue_id": dag.dialogue_id,
        "nodes": [
            {
                "id": n.id,
                "type": n.kind,
                "speaker": n.speaker,
                "text": n.text,
                "quality_flags": list(n.quality_flags),
            }
            for n in dag.nodes
        ],
        "edges": [[i, j] for i, j in dag.edges],
    }
    if dag.speakers:
        doc["speakers"] = dict(dag.speakers)
    return doc


def serialize_dialogue(dag: DialogueDag, *, indent: int | None = 2) -> str:
    return json.dumps(dag_to_obj(dag), ensure_ascii=False, indent=indent)


def iter_corpus(path: str | Path, *, strict: bool = True) -> Iterator[tuple[str, DialogueDag]]:
    """Yield ``(source, dag)`` from a directory of ``*.json`` files or a JSON-lines file.

    ``source`` is the file name, suffixed with ``:line`` for JSON-lines input.
    """
    path = Path(path)
    if path.is_dir():
        for f in sorted(path.glob("*.json")):
            yield f.name, parse_dialogue(f.read_bytes(), strict=strict)
        for f in sorted(path.glob("*.jsonl")):
            yield from iter_corpus(f, strict=strict)
        return
    if path.suffix == ".jsonl":
        with path.open("rb") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    yield f"{path.name}:{lineno}", parse_dialogue(line, strict=strict)
        return
    yield path.name, parse_dialogue(path.read_bytes(), strict=strict)


def load_corpus(path: str | Path) -> list[DialogueDag]:
    return [dag for _, dag in iter_corpus(path)]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _find_cycle_node(ids: Iterable[int], children: Mapping[int, list[int]]) -> int | None:
    """Return a node lying on a directed cycle, or None when acyclic."""
    white, grey, black = 0, 1, 2
    color = {n: white for n in ids}
    for start in sorted(color):
        if color[start] != white:
            continue
        stack = [(start, iter(children.get(start, ())))]
        color[start] = grey
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = black
                stack.pop()
            elif color.get(nxt) == grey:
                return nxt
            elif color.get(nxt) == white:
                color[nxt] = grey
                stack.append((nxt, iter(children.get(nxt, ()))))
    return None


def validate(dag: DialogueDag) -> list[Violation]:
    """Check every DialogueDag invariant; returns one Violation per problem."""
    out: list[Violation] = []
    seen: set[int] = set()
    for n in dag.nodes:
        if n.id in seen:
            out.append(Violation("DuplicateNode", n.id, f"node id {n.id} repeated"))
        seen.add(n.id)
        if n.kind not in NODE_KINDS:
            out.append(Violation("SchemaViolation", n.id, f"node {n.id}: unknown type {n.kind!r}"))
        elif n.kind == UTTERANCE and not (n.speaker and n.speaker.strip()):
            out.append(Violation("SchemaViolation", n.id, f"node {n.id}: utterance without speaker"))
        elif n.kind == SCENE and n.speaker is not None:
            out.append(Violation("SchemaViolation", n.id, f"node {n.id}: scene node has a speaker"))
        if not n.text.strip():
            out.append(Violation("SchemaViolation", n.id, f"node {n.id}: empty text"))

    edge_seen: set[tuple[int, int]] = set()
    for e in dag.edges:
        i, j = e
        if i not in seen or j not in seen:
            missing = i if i not in seen else j
            out.append(Violation("DanglingEdge", e, f"edge {i}->{j} references missing node {missing}"))
        if i == j:
            out.append(Violation("SelfLoop", e, f"self-loop on node {i}"))
        if e in edge_seen:
            out.append(Violation("DuplicateEdge", e, f"edge {i}->{j} repeated"))
        edge_seen.add(e)

    children: dict[int, list[int]] = defaultdict(list)
    for i, j in edge_seen:
        if i != j and i in seen and j in seen:
            children[i].append(j)
    for v in children.values():
        v.sort()
    cyc = _find_cycle_node(seen, children)
    if cyc is not None:
        out.append(Violation("CycleDetected", cyc, f"cycle through node {cyc}"))
    elif not dag.nodes:
        out.append(Violation("NoRoot", None, "dialogue has no nodes"))
    return out


def is_valid(dag: DialogueDag) -> bool:
    return not validate(dag)


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------


def topological_order(dag: DialogueDag) -> list[int]:
    """Kahn's algorithm with smallest-id-first tie breaking."""
    import heapq

    indeg = {n: len(ps) for n, ps in dag.parents.items()}
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        n = heapq.heappop(heap)
        out.append(n)
        for c in dag.children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(out) != len(indeg):
        raise CycleDetected("graph has a cycle")
    return out


def count_paths_to_leaves(dag: DialogueDag) -> dict[int, int]:
    """Number of directed paths from each node to any leaf."""
    counts: dict[int, int] = {}
    for n in reversed(topological_order(dag)):
        cs = dag.children[n]
        counts[n] = sum(counts[c] for c in cs) if cs else 1
    return counts


def count_paths_from_roots(dag: DialogueDag) -> dict[int, int]:
    """Number of distinct root paths ending at each node."""
    counts: dict[int, int] = {}
    for n in topological_order(dag):
        ps = dag.parents[n]
        counts[n] = sum(counts[p] for p in ps) if ps else 1
    return counts


def count_branches(dag: DialogueDag) -> int:
    per_node = count_paths_to_leaves(dag)
    return sum(per_node[r] for r in dag.roots)


def enumerate_paths(dag: DialogueDag, cap: int = DEFAULT_PATH_CAP) -> list[list[int]]:
    """All root-to-leaf paths, in lexicographic order of their id sequences."""
    total = count_branches(dag)
    if total > cap:
        raise PathExplosion(f"{dag.dialogue_id}: {total} paths exceed cap {cap}", total)
    out: list[list[int]] = []
    path: list[int] = []

    def walk(n: int) -> None:
        path.append(n)
        cs = dag.children[n]
        if not cs:
            out.append(list(path))
        for c in cs:
            walk(c)
        path.pop()

    for r in dag.roots:
        walk(r)
    return out


def iter_root_prefixes(dag: DialogueDag, cap: int = DEFAULT_PATH_CAP) -> Iterator[tuple[int, ...]]:
    """Every distinct root path ending at any node, depth-first in id order."""
    total = sum(count_paths_from_roots(dag).values())
    if total > cap:
        raise PathExplosion(f"{dag.dialogue_id}: {total} root prefixes exceed cap {cap}", total)
    stack: list[tuple[int, ...]] = [(r,) for r in reversed(dag.roots)]
    while stack:
        prefix = stack.pop()
        yield prefix
        for c in reversed(dag.children[prefix[-1]]):
            stack.append(prefix + (c,))


def find_forks(dag: DialogueDag) -> list[tuple[int, list[int]]]:
    return [(n, list(cs)) for n, cs in sorted(dag.children.items()) if len(cs) >= 2]


def find_colliders(dag: DialogueDag) -> list[tuple[int, list[int]]]:
    return [(n, list(ps)) for n, ps in sorted(dag.parents.items()) if len(ps) >= 2]


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusStats:
    num_dialogues: int = 0
    num_branches: int = 0
    num_utterances: int = 0
    num_speakers: int = 0
    avg_utterances_per_dialogue: float = 0.0
    avg_words_per_utterance: float = 0.0
    avg_utterances_per_speaker: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def corpus_stats(dags: Sequence[DialogueDag]) -> CorpusStats:
    """Table-style corpus statistics. Only utterance nodes count as utterances."""
    n_dial = len(dags)
    branches = 0
    utts = 0
    words = 0
    speakers: set[str] = set()
    for dag in dags:
        branches += count_branches(dag)
        for n in dag.nodes:
            if n.is_utterance:
                utts += 1
                words += len(n.text.split())
                speakers.add(n.speaker)
    return CorpusStats(
        num_dialogues=n_dial,
        num_branches=branches,
        num_utterances=utts,
        num_speakers=len(speakers),
        avg_utterances_per_dialogue=utts / n_dial if n_dial else 0.0,
        avg_words_per_utterance=words / utts if utts else 0.0,
        avg_utterances_per_speaker=utts / len(speakers) if speakers else 0.0,
    )


# ---------------------------------------------------------------------------
# DOT export
# ---------------------------------------------------------------------------


def _dot_quote(s: str) -> str:
    s = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ").replace("\r", " ")
    return f'"{s}"'


def export_dot(dag: DialogueDag) -> str:
    lines = [f"digraph {_dot_quote(dag.dialogue_id)} {{"]
    for n in dag.nodes:
        snippet = n.text[:40]
        if n.is_utterance:
            label = f"{n.speaker}: {snippet}"
            lines.append(f"  {n.id} [label={_dot_quote(label)}];")
        else:
            lines.append(f"  {n.id} [label={_dot_quote(snippet)}, shape=box];")
    for i, j in dag.edges:
        lines.append(f"  {i} -> {j};")
    lines.append("}")
    return "\n".join(lines) + "\n"
