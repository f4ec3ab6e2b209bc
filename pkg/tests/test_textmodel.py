import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logsumexp

from cdkit.dag import load_corpus
from cdkit.extraction import Turn, extract_corpus
from cdkit.textmodel import (
    BOS,
    EOS,
    SEP,
    UNK,
    ContextEncoder,
    Encoded,
    Method,
    TabularSoftmaxModel,
    TinyNeuralLM,
    Vocab,
    generate,
    grad_logprob,
    load_checkpoint,
    logprob,
    save_checkpoint,
    tokenize,
)
from cdkit.textmodel import kernels
from cdkit.textmodel.checkpoint import CheckpointError
from cdkit.textmodel.decoding import choose, softmax
from cdkit.textmodel.vocab import split_tokens, vocab_texts


@pytest.fixture
def fixture_vocab(fixture_dir):
    return Vocab.build(vocab_texts(extract_corpus(load_corpus(fixture_dir))))


def enc(key, *ids):
    return Encoded(key, tuple(ids))


def two_response_model(theta=(0.0, 0.0)):
    r1, r2 = enc("r1", 7, EOS), enc("r2", 8, EOS)
    m = TabularSoftmaxModel(["c"], [r1, r2], np.array(theta, dtype=float))
    return m, enc("c", 5), r1, r2


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------


def test_split_tokens():
    assert split_tokens("Hello.") == ["hello", "."]
    assert split_tokens("") == []
    assert split_tokens("  It's   you ") == ["it", "'", "s", "you"]


def test_tokenize_fixture_vocab(fixture_vocab):
    # ids frozen from the vocabulary built over the bundled fixtures; "you" never occurs there
    assert tokenize("It's you", fixture_vocab) == [17, 24, 35, UNK]
    assert tokenize("Hello.", fixture_vocab) == [UNK, 6]
    assert tokenize("", fixture_vocab) == []


def test_vocab_reserved_ids(fixture_vocab):
    assert fixture_vocab.itos[:5] == ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"]
    assert len(set(fixture_vocab.itos)) == len(fixture_vocab)
    with pytest.raises(ValueError):
        Vocab(["a", "b"])


def test_context_rendering(fixture_vocab):
    e = ContextEncoder(fixture_vocab)
    ctx = e.encode_context([Turn("Mira", "Is the bridge safe?")], Turn("Tobin", "Not yet."))
    words = fixture_vocab.decode(ctx.ids)
    assert words == ["mira", ":", "is", "the", "bridge", "safe", "?", "<sep>", "tobin", ":", "not", "yet", ".", "<sep>"]
    y = e.encode_response(Turn("Mira", "Good."))
    assert fixture_vocab.decode(y.ids) == ["mira", ":", "good", ".", "<eos>"]
    assert e.split_speaker(y.ids) == ("mira", "good .")


def test_context_truncation_drops_oldest_turns(fixture_vocab):
    e = ContextEncoder(fixture_vocab, max_len=8)
    dh = [Turn("Oren", "good luck"), Turn("Tobin", "rain")]
    ctx = e.encode_context(dh, Turn("Mira", "wait"))
    assert fixture_vocab.decode(ctx.ids) == ["tobin", ":", "rain", "<sep>", "mira", ":", "wait", "<sep>"]
    tiny = ContextEncoder(fixture_vocab, max_len=3).encode_context([], Turn("Mira", "the old bridge"))
    assert tiny.ids == (fixture_vocab.stoi["old"], fixture_vocab.stoi["bridge"], SEP)


def test_context_blind_encoding(fixture_vocab):
    e = ContextEncoder(fixture_vocab, ignore_x=True)
    a = e.encode_context([Turn("Oren", "hi")], Turn("A", "x"))
    b = e.encode_context([Turn("Oren", "hi")], Turn("B", "y"))
    assert a == b


# ---------------------------------------------------------------------------
# tabular model
# ---------------------------------------------------------------------------


def test_tabular_uniform_logprob():
    m, c, r1, r2 = two_response_model()
    assert logprob(m, c, r1) == pytest.approx(math.log(0.5), abs=1e-15)
    assert logprob(m, c, r2) == pytest.approx(math.log(0.5), abs=1e-15)


def test_tabular_ln3():
    m, c, r1, r2 = two_response_model((math.log(3), 0.0))
    assert math.exp(logprob(m, c, r1)) == pytest.approx(0.75, abs=1e-12)
    assert math.exp(logprob(m, c, r2)) == pytest.approx(0.25, abs=1e-12)


def test_tabular_grad_example():
    m, c, r1, _ = two_response_model()
    np.testing.assert_allclose(grad_logprob(m, c, r1), [0.5, -0.5], atol=1e-15)


def test_tabular_zero_length_y():
    m, c, _, _ = two_response_model((0.3, -1.0))
    empty = enc("e")
    assert logprob(m, c, empty) == 0.0
    assert not grad_logprob(m, c, empty).any()


def test_tabular_unknown_context_lenient_and_strict():
    m, _, r1, r2 = two_response_model((5.0, 0.0))
    other = enc("other", 9)
    assert logprob(m, other, r1) == pytest.approx(math.log(0.5))
    assert not grad_logprob(m, other, r1).any()
    strict = TabularSoftmaxModel(m.contexts, m.responses, m.params, strict=True)
    from cdkit.textmodel import UnknownContext, UnknownResponse

    with pytest.raises(UnknownContext):
        strict.logprob(other, r1)
    with pytest.raises(UnknownResponse):
        m.logprob(enc("c", 5), enc("r9", 3, EOS))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=7))
def test_tabular_rows_sum_to_one(theta):
    rs = [enc(f"r{i}", i + 5, EOS) for i in range(len(theta))]
    m = TabularSoftmaxModel(["c"], rs, np.array(theta))
    total = sum(math.exp(m.logprob(enc("c"), r)) for r in rs)
    assert abs(total - 1) <= 1e-9
    assert all(m.logprob(enc("c"), r) <= 0 for r in rs)


def test_tabular_permutation_covariance():
    rng = np.random.default_rng(0)
    rs = [enc(f"r{i}", i + 5, EOS) for i in range(6)]
    ctx = [f"c{i}" for i in range(3)]
    table = rng.normal(size=(3, 6))
    m = TabularSoftmaxModel(ctx, rs, table.ravel())
    perm = rng.permutation(6)
    m2 = TabularSoftmaxModel(ctx, [rs[p] for p in perm], table[:, perm].ravel())
    for c in ctx:
        for r in rs:
            assert m.logprob(enc(c), r) == pytest.approx(m2.logprob(enc(c), r), abs=1e-14)


def _fd(f, params, step=1e-5):
    out = np.zeros_like(params)
    for i in range(params.size):
        old = params[i]
        params[i] = old + step
        up = f()
        params[i] = old - step
        down = f()
        params[i] = old
        out[i] = (up - down) / (2 * step)
    return out


def _agree(g, fd, rel=1e-4, floor=1e-8):
    mask = np.abs(g) > floor
    err = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-300)
    return float(np.mean(err[mask] <= rel)) if mask.any() else 1.0


def test_tabular_fd():
    rng = np.random.default_rng(3)
    rs = [enc(f"r{i}", i + 5, EOS) for i in range(4)]
    m = TabularSoftmaxModel(["a", "b"], rs, rng.normal(size=8))
    for ctx in ("a", "b"):
        g = m.grad_logprob(enc(ctx), rs[1])
        fd = _fd(lambda: m.logprob(enc(ctx), rs[1]), m.params)
        assert _agree(g, fd) == 1.0


# ---------------------------------------------------------------------------
# neural model
# ---------------------------------------------------------------------------


def independent_logprob(model, ctx, y):
    """Scalar-loop recompute of the RNN log-probability with scipy's logsumexp."""
    w = model.views(model.params)
    toks = [BOS, *ctx.ids, *y.ids]
    h = [0.0] * model.hidden
    total = 0.0
    for t in range(1, len(toks)):
        e = w["E"][toks[t - 1]]
        h = [
            math.tanh(
                sum(w["Wx"][i, k] * e[k] for k in range(model.dim))
                + sum(w["Wh"][i, k] * h[k] for k in range(model.hidden))
                + w["b"][i]
            )
            for i in range(model.hidden)
        ]
        if t >= 1 + len(ctx.ids):
            logits = [sum(w["U"][v, k] * h[k] for k in range(model.hidden)) + w["c"][v] for v in range(model.vocab_size)]
            total += logits[toks[t]] - logsumexp(logits)
    return total


def random_instance(rng, V=None, d=None, H=None, ylen=None):
    V = V or int(rng.integers(6, 21))
    d = d or int(rng.integers(2, 9))
    H = H or int(rng.integers(2, 9))
    m = TinyNeuralLM(V, dim=d, hidden=H, params=rng.normal(scale=0.5, size=TinyNeuralLM(V, d, H).n_params))
    ctx = enc("ctx", *rng.integers(5, V, size=int(rng.integers(0, 5))))
    n = ylen if ylen is not None else int(rng.integers(1, 7))
    y = enc("y", *rng.integers(5, V, size=n - 1), EOS) if n else enc("y")
    return m, ctx, y


def test_neural_layout():
    m = TinyNeuralLM(11, dim=4, hidden=5)
    assert m.n_params == 11 * 4 + 5 * 4 + 5 * 5 + 5 + 11 * 5 + 11
    assert np.all(np.abs(m.params) <= 0.08)
    assert list(m.views(m.params)) == ["E", "Wx", "Wh", "b", "U", "c"]


@pytest.mark.parametrize("seed", range(5))
def test_neural_logprob_matches_independent_recompute(seed):
    m, ctx, y = random_instance(np.random.default_rng(seed))
    assert m.logprob(ctx, y) == pytest.approx(independent_logprob(m, ctx, y), abs=1e-10)
    assert m.logprob(ctx, y) <= 0


def test_neural_fd_v11():
    rng = np.random.default_rng(11)
    m, ctx, y = random_instance(rng, V=11, d=4, H=4, ylen=3)
    g = m.grad_logprob(ctx, y)
    fd = _fd(lambda: m.logprob(ctx, y), m.params)
    assert _agree(g, fd) >= 0.99
    np.testing.assert_allclose(g, fd, atol=1e-8)


def test_neural_zero_length_y():
    m, ctx, _ = random_instance(np.random.default_rng(0))
    assert m.logprob(ctx, enc("e")) == 0.0
    assert not m.grad_logprob(ctx, enc("e")).any()


@pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled kernel not built")
def test_backends_agree():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m, ctx, y = random_instance(rng)
        py = TinyNeuralLM(m.vocab_size, m.dim, m.hidden, m.params, backend=kernels.python_backend)
        cy = TinyNeuralLM(m.vocab_size, m.dim, m.hidden, m.params, backend=kernels.compiled_backend)
        assert py.logprob(ctx, y) == pytest.approx(cy.logprob(ctx, y), abs=1e-12)
        np.testing.assert_allclose(py.grad_logprob(ctx, y), cy.grad_logprob(ctx, y), atol=1e-12)


def test_neural_step_distributions_sum_to_one():
    m, ctx, _ = random_instance(np.random.default_rng(9))
    w = m.views(m.params)
    h = kernels.run_hidden(w["E"], w["Wx"], w["Wh"], w["b"], np.array((BOS, *ctx.ids)), np.zeros(m.hidden))
    for tok in (5, 6, 7):
        assert abs(softmax(m.step_logits(h)).sum() - 1) <= 1e-6
        h = kernels.run_hidden(w["E"], w["Wx"], w["Wh"], w["b"], np.array([tok]), h)


def test_neural_permutation_covariance():
    rng = np.random.default_rng(4)
    m, ctx, y = random_instance(rng, V=12)
    perm = np.concatenate([np.arange(5), 5 + rng.permutation(7)])  # keep reserved ids fixed
    w = m.views(m.params)
    p2 = m.params.copy()
    w2 = m.views(p2)
    w2["E"][perm] = w["E"]
    w2["U"][perm] = w["U"]
    w2["c"][perm] = w["c"]
    m2 = TinyNeuralLM(m.vocab_size, m.dim, m.hidden, p2)
    relabel = lambda e: Encoded(e.key, tuple(int(perm[i]) for i in e.ids))
    assert m.logprob(ctx, y) == pytest.approx(m2.logprob(relabel(ctx), relabel(y)), abs=1e-12)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def test_greedy_tabular_unique_argmax():
    m, c, r1, r2 = two_response_model((0.2, 1.5))
    rng = np.random.default_rng(0)
    assert all(generate(m, c, Method.greedy(), rng) == [8] for _ in range(20))


def test_low_temperature_is_greedy():
    rng = np.random.default_rng(1)
    rs = [enc(f"r{i}", i + 5, EOS) for i in range(5)]
    m = TabularSoftmaxModel(["c"], rs, np.array([0.1, 0.4, 0.39, -1.0, 0.0]))
    greedy = m.generate(enc("c"), Method.greedy(), rng)
    assert all(m.generate(enc("c"), Method.softmax(1e-6), rng) == greedy for _ in range(100))


def test_topk1_is_greedy_neural():
    rng = np.random.default_rng(2)
    for _ in range(5):
        m, ctx, _ = random_instance(rng)
        assert m.generate(ctx, Method.topk(1), rng, 10) == m.generate(ctx, Method.greedy(), rng, 10)


def test_topk_full_matches_softmax_t1():
    logits = np.array([0.3, -0.2, 1.1, 0.0, -1.5])
    n = 10_000
    a = np.bincount([choose(logits, Method.topk(5), np.random.default_rng([1, i])) for i in range(n)], minlength=5)
    b = np.bincount([choose(logits, Method("softmax", 1.0), np.random.default_rng([2, i])) for i in range(n)], minlength=5)
    _, p, _, _ = stats.chi2_contingency(np.vstack([a, b]))
    assert p > 0.01
    # and both match the exact distribution
    assert stats.chisquare(a, softmax(logits) * n).pvalue > 0.01


def test_generation_deterministic_and_bounded():
    m, ctx, _ = random_instance(np.random.default_rng(8))
    a = m.generate(ctx, Method.softmax(2.0), np.random.default_rng(3), 7)
    b = m.generate(ctx, Method.softmax(2.0), np.random.default_rng(3), 7)
    assert a == b and len(a) <= 7 and EOS not in a


def test_method_validation():
    with pytest.raises(ValueError):
        Method.softmax(0)
    with pytest.raises(ValueError):
        Method.topk(0)
    with pytest.raises(ValueError):
        Method("beam")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_round_trip_neural(tmp_path, fixture_vocab):
    m = TinyNeuralLM(len(fixture_vocab), dim=6, hidden=5, seed=3)
    e = ContextEncoder(fixture_vocab, max_len=40)
    save_checkpoint(tmp_path / "m.json", m, e, {"loss": "mle"})
    m2, e2, meta = load_checkpoint(tmp_path / "m.json", with_meta=True)
    assert np.array_equal(m.params, m2.params)
    assert (m2.dim, m2.hidden) == (6, 5)
    assert e2.vocab == fixture_vocab and e2.max_len == 40
    assert meta == {"loss": "mle"}


def test_checkpoint_round_trip_tabular(tmp_path, fixture_vocab):
    m, c, r1, _ = two_response_model((0.1234567890123, -7.5))
    save_checkpoint(tmp_path / "t.json", m, ContextEncoder(fixture_vocab))
    m2, _ = load_checkpoint(tmp_path / "t.json")
    assert np.array_equal(m.params, m2.params)
    assert m2.logprob(c, r1) == m.logprob(c, r1)


def test_checkpoint_rejects_foreign(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
