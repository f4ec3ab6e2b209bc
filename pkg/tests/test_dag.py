import json
import string

import pydot
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdkit.dag import (
    SCENE,
    UTTERANCE,
    CycleDetected,
    DanglingEdge,
    DialogueDag,
    MalformedDocument,
    PathExplosion,
    SchemaViolation,
    TurnNode,
    corpus_stats,
    count_branches,
    enumerate_paths,
    export_dot,
    find_colliders,
    find_forks,
    load_corpus,
    parse_dialogue,
    serialize_dialogue,
    validate,
)


def doc(nodes, edges, **extra):
    return json.dumps({"dialogue_id": "d", "nodes": nodes, "edges": edges, **extra})


def utt(i, speaker="A", text=None):
    return {"id": i, "type": "utterance", "speaker": speaker, "text": text or f"turn {i}", "quality_flags": []}


def make(n_nodes, edges):
    nodes = tuple(TurnNode(i, UTTERANCE, f"t{i}", "A") for i in range(n_nodes))
    return DialogueDag("d", nodes, tuple(edges))


def test_parse_minimal_chain():
    dag = parse_dialogue(doc([utt(0), utt(1, "B")], [[0, 1]]).encode())
    assert dag.roots == [0]
    assert dag.leaves == [1]


def test_parse_two_cycle():
    with pytest.raises(CycleDetected):
        parse_dialogue(doc([utt(0), utt(1)], [[0, 1], [1, 0]]))


def test_fork3_counts(fork3):
    assert len(fork3.nodes) == 5
    assert len(fork3.edges) == 4
    assert len(enumerate_paths(fork3)) == 2


def test_malformed_json():
    with pytest.raises(MalformedDocument):
        parse_dialogue(b"{not json")


def test_missing_field_names_node():
    with pytest.raises(SchemaViolation) as exc:
        parse_dialogue(doc([{"id": 3, "type": "utterance", "speaker": "A"}], []))
    assert exc.value.ref == 3


def test_dangling_edge_names_edge():
    with pytest.raises(DanglingEdge) as exc:
        parse_dialogue(doc([utt(0)], [[0, 7]]))
    assert exc.value.ref == (0, 7)


def test_validate_valid_chain(chain):
    assert validate(chain) == []


def test_validate_scene_with_speaker():
    dag = DialogueDag("d", (TurnNode(0, SCENE, "a hall", speaker="A"),), ())
    (v,) = validate(dag)
    assert (v.code, v.ref) == ("SchemaViolation", 0)


def test_validate_duplicate_edge():
    (v,) = validate(make(2, [(0, 1), (0, 1)]))
    assert (v.code, v.ref) == ("DuplicateEdge", (0, 1))


def test_validate_utterance_without_speaker_and_blank_text():
    dag = DialogueDag("d", (TurnNode(0, UTTERANCE, "   ", speaker=None),), ())
    assert [v.code for v in validate(dag)] == ["SchemaViolation", "SchemaViolation"]


def test_validate_self_loop_reports_loop_and_cycle():
    codes = {v.code for v in validate(make(1, [(0, 0)]))}
    assert codes == {"SelfLoop"} or codes == {"SelfLoop", "CycleDetected"}


def test_enumerate_paths_chain(chain):
    assert enumerate_paths(chain) == [[0, 1, 2]]


def test_enumerate_paths_diamond(diamond):
    assert enumerate_paths(diamond) == [[0, 1, 3], [0, 2, 3]]


def test_enumerate_paths_multiple_roots_sorted():
    dag = make(4, [(2, 3), (0, 3), (1, 3)])
    assert enumerate_paths(dag) == [[0, 3], [1, 3], [2, 3]]


def test_path_explosion():
    # layered graph: 2^10 paths
    edges = []
    for layer in range(10):
        a, b = 2 * layer, 2 * layer + 1
        edges += [(a, a + 2), (a, b + 2), (b, a + 2), (b, b + 2)]
    dag = make(22, edges)
    assert count_branches(dag) == 2 * 2**10
    with pytest.raises(PathExplosion):
        enumerate_paths(dag, cap=1000)


def test_forks_and_colliders(chain, fork3, diamond):
    assert find_forks(chain) == []
    assert find_colliders(chain) == []
    assert find_forks(fork3) == [(0, [1, 2])]
    assert find_colliders(fork3) == []
    assert find_forks(diamond) == [(0, [1, 2])]
    assert find_colliders(diamond) == [(3, [1, 2])]


def test_corpus_stats_empty():
    s = corpus_stats([])
    assert (s.num_dialogues, s.num_branches, s.num_utterances, s.num_speakers) == (0, 0, 0, 0)
    assert s.avg_words_per_utterance == 0.0


def test_corpus_stats_mini_corpus(fixture_dir):
    # hand count over chain.json, diamond.json, fork3.json
    # words: chain 4+3+5, diamond 2+2+4+2, fork3 6+2+3+5+5
    s = corpus_stats(load_corpus(fixture_dir))
    assert s.num_dialogues == 3
    assert s.num_branches == 1 + 2 + 2
    assert s.num_utterances == 3 + 4 + 5
    assert s.num_speakers == 3
    assert s.avg_utterances_per_dialogue == pytest.approx(12 / 3)
    assert s.avg_words_per_utterance == pytest.approx(43 / 12)
    assert s.avg_utterances_per_speaker == pytest.approx(12 / 3)


def test_stats_skip_scene_nodes():
    dag = DialogueDag("d", (TurnNode(0, SCENE, "a b c"), TurnNode(1, UTTERANCE, "hi", "A")), ((0, 1),))
    s = corpus_stats([dag])
    assert s.num_utterances == 1
    assert s.avg_words_per_utterance == 1.0


def _dot_counts(text):
    (graph,) = pydot.graph_from_dot_data(text)
    return len(graph.get_nodes()), len(graph.get_edges()), graph


def test_dot_chain_of_two():
    dag = parse_dialogue(doc([utt(0), utt(1, "B")], [[0, 1]]))
    assert _dot_counts(export_dot(dag))[:2] == (2, 1)


def test_dot_fork3(fork3):
    n, e, graph = _dot_counts(export_dot(fork3))
    assert (n, e) == (5, 4)
    assert graph.get_node("0")[0].get_label() == '"Mira: Is the old bridge safe yet?"'


def test_dot_scene_boxed_and_escaped():
    dag = DialogueDag(
        "with \"quotes\"",
        (TurnNode(0, SCENE, 'The "hall" \\ ' + "x" * 60), TurnNode(1, UTTERANCE, "hey", "A")),
        ((0, 1),),
    )
    text = export_dot(dag)
    n, e, graph = _dot_counts(text)
    assert (n, e) == (2, 1)
    assert graph.get_node("0")[0].get_shape() == "box"


def test_dot_diamond_parses(diamond):
    n, e, _ = _dot_counts(export_dot(diamond))
    assert (n, e) == (4, 4)


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

texts = st.text(alphabet=string.ascii_letters + " éü'\"\\", min_size=1, max_size=20).filter(lambda s: s.strip())


@st.composite
def dags(draw):
    n = draw(st.integers(1, 9))
    nodes = []
    for i in range(n):
        if draw(st.booleans()) or i == 0:
            nodes.append(TurnNode(i, UTTERANCE, draw(texts), draw(st.sampled_from(["A", "B", "Cé"])),
                                  tuple(draw(st.lists(st.sampled_from(["toxic", "done"]), max_size=2)))))
        else:
            nodes.append(TurnNode(i, SCENE, draw(texts)))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    speakers = draw(st.dictionaries(st.sampled_from(["A", "B"]), texts, max_size=2))
    return DialogueDag("dlg", tuple(nodes), tuple(edges), speakers)


@settings(max_examples=150, deadline=None)
@given(dags())
def test_round_trip(dag):
    assert validate(dag) == []
    again = parse_dialogue(serialize_dialogue(dag).encode("utf-8"))
    assert again == dag


@settings(max_examples=150, deadline=None)
@given(dags())
def test_paths_are_distinct_edge_walks(dag):
    paths = enumerate_paths(dag)
    edges = set(dag.edges)
    assert len({tuple(p) for p in paths}) == len(paths) == count_branches(dag)
    assert paths == sorted(paths)
    for p in paths:
        assert p[0] in dag.roots and p[-1] in dag.leaves
        assert all((a, b) in edges for a, b in zip(p, p[1:]))


@settings(max_examples=100, deadline=None)
@given(dags())
def test_tree_branches_equal_leaves(dag):
    # keep only the first incoming edge of each node to get a forest
    seen, kept = set(), []
    for i, j in dag.edges:
        if j not in seen:
            seen.add(j)
            kept.append((i, j))
    forest = DialogueDag(dag.dialogue_id, dag.nodes, tuple(kept))
    assert count_branches(forest) == len(forest.leaves)


@given(st.integers(1, 12))
def test_chain_has_no_forks_or_colliders(n):
    dag = make(n, [(i, i + 1) for i in range(n - 1)])
    assert find_forks(dag) == [] and find_colliders(dag) == []
