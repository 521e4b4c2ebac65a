import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import central_difference, softmax_loss_by_hand
from pricepolarity import pvdm
from pricepolarity.pvdm import (
    NoiseSampler, PvdmConfig, TrainingSample, full_softmax_gradients, hidden_vector, infer_doc_vector,
    init_model, iter_samples, load_model, predict_distribution, read_doc_vectors, sample_loss, save_model,
    softmax, step_full_softmax, step_negative_sampling, train, write_doc_vectors,
)
from pricepolarity.textproc import TokenizedDoc, Vocabulary


def _toy(seed=0, V=5, N=3, D=2, dtype=np.float64):
    m = init_model(PvdmConfig(dim=N, context=2, seed=seed), V, D, dtype=dtype)
    rng = np.random.default_rng(seed + 1)
    # non-zero output vectors so every gradient block is exercised
    m.W[:] = rng.normal(scale=0.5, size=m.W.shape)
    m.W_d[:] = rng.normal(scale=0.5, size=m.W_d.shape)
    m.W_out[:] = rng.normal(scale=0.5, size=m.W_out.shape)
    return m


def test_init_shapes_and_ranges():
    m = init_model(PvdmConfig(dim=4), 3, 2)
    assert (m.W.shape, m.W_out.shape, m.W_d.shape) == ((3, 4), (4, 3), (2, 4))
    assert np.all(np.abs(m.W) <= 0.5 / 4) and np.all(np.abs(m.W_d) <= 0.5 / 4)
    assert not m.W_out.any()


def test_init_deterministic():
    a = init_model(PvdmConfig(dim=8, seed=3), 10, 4)
    b = init_model(PvdmConfig(dim=8, seed=3), 10, 4)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.W_d, b.W_d)


def test_init_rejects_zero_sizes():
    with pytest.raises(ValueError):
        init_model(PvdmConfig(dim=2), 0, 1)
    with pytest.raises(ValueError):
        PvdmConfig(dim=0)


def test_zero_output_gives_uniform():
    m = init_model(PvdmConfig(dim=4), 6, 1)
    h = hidden_vector(m, 0, [1, 2])
    assert np.allclose(predict_distribution(m, h), 1 / 6)


def test_hidden_vector_cases():
    m = _toy()
    m.W[:] = 0.0
    assert np.allclose(hidden_vector(m, 1, [0, 2]), m.W_d[1] / 3)
    m = _toy()
    m.W_d[0] = m.W[4]
    assert np.allclose(hidden_vector(m, 0, [4]), m.W[4])
    m = _toy(seed=5)
    manual = [(m.W[1, k] + m.W[3, k] + m.W[3, k] + m.W_d[0, k]) / 4 for k in range(3)]
    assert np.allclose(hidden_vector(m, 0, [1, 3, 3]), manual)
    with pytest.raises(ValueError):
        hidden_vector(m, 0, [])


def test_hidden_vector_permutation_invariant():
    m = _toy(seed=2)
    assert np.allclose(hidden_vector(m, 1, [0, 3, 4]), hidden_vector(m, 1, [4, 0, 3]))


def test_softmax_hand_example():
    p = softmax(np.array([0.0, math.log(2), math.log(4)]))
    assert np.allclose(p, [1 / 7, 2 / 7, 4 / 7], atol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(-100, 100))
def test_softmax_contract(logits, shift):
    u = np.array(logits)
    p = softmax(u)
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12
    assert np.allclose(softmax(u + shift), p, rtol=1e-9, atol=1e-15)


def test_sample_loss_matches_hand_computation():
    m = _toy(seed=4)
    s = TrainingSample(1, (0, 3), 2)
    ref = softmax_loss_by_hand(m.W.tolist(), m.W_out.tolist(), m.W_d.tolist(), 1, [0, 3], 2)
    assert sample_loss(m, s) == pytest.approx(ref, rel=1e-12)


def _samples():
    docs = [[0, 1, 2, 3, 4], [4, 2, 2, 0]]
    out = []
    for d, toks in enumerate(docs):
        out.extend(iter_samples(toks, d, 1, 1))
    return out


def test_gradients_match_finite_differences():
    m = _toy(seed=7)
    samples = _samples()

    def total():
        return sum(sample_loss(m, s) for s in samples)

    analytic = {k: np.zeros_like(getattr(m, k)) for k in ("W", "W_out", "W_d")}
    for s in samples:
        _, grads = full_softmax_gradients(m, s)
        for k in analytic:
            analytic[k] += grads[k]
    for k in analytic:
        numeric = central_difference(total, getattr(m, k), 1e-4)
        err = np.abs(analytic[k] - numeric) / np.maximum(1e-8, np.abs(analytic[k]) + np.abs(numeric))
        assert err.max() < 1e-5, k


def test_context_gradient_formula():
    m = _toy(seed=9)
    s = TrainingSample(0, (1, 2), 3)
    _, grads = full_softmax_gradients(m, s)
    h = hidden_vector(m, 0, s.context)
    y = predict_distribution(m, h)
    e = np.zeros(5)
    e[3] = 1
    expected = m.W_out @ (y - e) / 3
    assert np.allclose(grads["W"][1], expected) and np.allclose(grads["W_d"][0], expected)


def test_step_lr_zero_is_noop():
    m = _toy(seed=1)
    before = m.copy()
    s = TrainingSample(0, (1, 2), 3)
    loss = step_full_softmax(m, s, 0.0)
    assert loss == pytest.approx(-math.log(predict_distribution(before, hidden_vector(before, 0, (1, 2)))[3]))
    assert np.array_equal(m.W, before.W) and np.array_equal(m.W_out, before.W_out)


@pytest.mark.parametrize("seed", range(5))
def test_small_step_decreases_loss(seed):
    m = _toy(seed=seed)
    s = TrainingSample(1, (0, 4), 2)
    before = step_full_softmax(m, s, 0.01)
    assert sample_loss(m, s) < before


def test_noise_sampler_never_returns_target():
    sampler = NoiseSampler(np.array([1000, 1, 1]), seed=0)
    assert all(sampler.draw(0) != 0 for _ in range(200))


def test_noise_sampler_distribution():
    counts = np.array([16, 1, 81])
    sampler = NoiseSampler(counts, seed=1)
    draws = np.bincount([sampler.draw(-1) for _ in range(20000)], minlength=3) / 20000
    p = counts ** 0.75 / (counts ** 0.75).sum()
    assert np.allclose(draws, p, atol=0.015)


def test_negative_sampling_exhaustive_raises_target():
    m = _toy(seed=3)
    s = TrainingSample(0, (1, 2), 4)
    p0 = predict_distribution(m, hidden_vector(m, 0, s.context))[4]
    step_negative_sampling(m, s, 0.05, 4, NoiseSampler(np.ones(5), seed=0))
    p1 = predict_distribution(m, hidden_vector(m, 0, s.context))[4]
    assert p1 > p0


def test_negative_sampling_deterministic():
    a, b = _toy(seed=3), _toy(seed=3)
    s = TrainingSample(1, (0, 2), 3)
    la = step_negative_sampling(a, s, 0.1, 3, NoiseSampler(np.arange(1, 6), seed=11))
    lb = step_negative_sampling(b, s, 0.1, 3, NoiseSampler(np.arange(1, 6), seed=11))
    assert la == lb and np.array_equal(a.W_out, b.W_out) and np.array_equal(a.W_d, b.W_d)


def test_window_enumeration():
    got = list(iter_samples([10, 11, 12], 0, 1, 1))
    assert got == [TrainingSample(0, (11,), 10), TrainingSample(0, (10, 12), 11), TrainingSample(0, (11,), 12)]


def test_context_split():
    assert PvdmConfig(context=8).context_split() == (4, 4)
    assert PvdmConfig(context=3).context_split() == (2, 1)


def test_learning_rate_schedule():
    lrs = PvdmConfig(epochs=4, learning_rate=0.1).epoch_learning_rates()
    assert np.allclose(lrs, [0.1, 0.075, 0.05, 0.025])
    assert PvdmConfig(epochs=10000).epoch_learning_rates()[-1] >= 0.025 * 1e-4


def _random_docs(n, length, vocab, seed):
    rng = np.random.default_rng(seed)
    return [TokenizedDoc(i, rng.integers(0, vocab, size=length)) for i in range(n)]


@pytest.mark.parametrize("backend", ["full_softmax", "negative_sampling"])
def test_epoch_loss_decreases(backend, small_labeled):
    docs = small_labeled.docs[:50]
    cfg = PvdmConfig(dim=16, epochs=3, backend=backend)
    m = train(cfg, docs, small_labeled.vocab)
    assert len(m.history) == 3
    assert m.history[0] >= m.history[1] >= m.history[2]


def test_train_deterministic():
    docs = _random_docs(20, 12, 30, 0)
    a = train(PvdmConfig(dim=8, epochs=2, seed=4), docs, vocab_size=30)
    b = train(PvdmConfig(dim=8, epochs=2, seed=4), docs, vocab_size=30)
    assert np.array_equal(a.W_d, b.W_d) and np.array_equal(a.W, b.W)


def test_train_errors():
    with pytest.raises(ValueError):
        train(PvdmConfig(dim=4), [], vocab_size=3)
    with pytest.raises(ValueError):
        train(PvdmConfig(dim=4), [TokenizedDoc(0, [5])], vocab_size=3)


def test_infer_errors_and_determinism():
    docs = _random_docs(10, 10, 20, 1)
    m = train(PvdmConfig(dim=8, epochs=2), docs, vocab_size=20)
    with pytest.raises(ValueError):
        infer_doc_vector(m, [])
    a = infer_doc_vector(m, docs[0].tokens)
    b = infer_doc_vector(m, docs[0].tokens)
    assert np.array_equal(a, b)
    # words stay frozen
    w = m.W.copy()
    infer_doc_vector(m, docs[1].tokens)
    assert np.array_equal(m.W, w)


@pytest.mark.slow
def test_inferred_vector_close_to_trained(small_labeled):
    # holds once training has converged; at 20 epochs cosines sit around 0.7
    cfg = PvdmConfig(dim=16, epochs=200)
    m = train(cfg, small_labeled.docs, small_labeled.vocab)
    cos = []
    for i in range(30):
        v = infer_doc_vector(m, small_labeled.docs[i].tokens, cfg)
        w = m.W_d[i]
        cos.append(v @ w / np.linalg.norm(v) / np.linalg.norm(w))
    assert np.mean(cos) > 0.9


def test_model_round_trip(tmp_path):
    vocab = Vocabulary(["a", "b", "c", "d"], [4, 3, 2, 1])
    docs = [TokenizedDoc(0, [0, 1, 2]), TokenizedDoc(1, [3, 0])]
    m = train(PvdmConfig(dim=5, epochs=2), docs, vocab)
    save_model(m, tmp_path / "m.bin")
    again = load_model(tmp_path / "m.bin")
    for k in ("W", "W_out", "W_d"):
        assert np.array_equal(getattr(again, k), getattr(m, k))
        assert getattr(again, k).tobytes() == getattr(m, k).tobytes()
    assert again.vocab.tokens == vocab.tokens and again.config == m.config
    assert again.W_out.flags.f_contiguous


def test_model_file_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.bin")


def test_doc_vector_text_export(tmp_path):
    vecs = np.array([[0.5, -1.25], [3.0, 1e-7]])
    write_doc_vectors(vecs, ["p1", "p2"], tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text().splitlines()[0] == "p1 0.5 -1.25"
    ids, again = read_doc_vectors(tmp_path / "v.txt")
    assert ids == ["p1", "p2"] and np.array_equal(again, vecs)


def test_with_dim():
    assert pvdm.with_dim(PvdmConfig(), 7).dim == 7
