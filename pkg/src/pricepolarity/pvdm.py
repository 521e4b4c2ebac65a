"""Distributed-memory paragraph vectors (PV-DM).

The hidden layer averages the context word vectors with the document vector;
the output layer is either an exact softmax over the vocabulary or a
negative-sampling approximation.  ``W`` holds input word vectors as rows,
``W_out`` (N x |V|) holds output word vectors as columns and ``W_d`` holds
document vectors as rows.

Training runs in ``@njit`` epoch kernels; with ``PRICEPOLARITY_BACKEND=numpy``
the per-sample numpy steps below are looped in Python instead.  Both paths
draw negatives from the same 64-bit LCG so they see identical noise words.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import _accel
from ._accel import njit
from .textproc import TokenizedDoc, Vocabulary

log = logging.getLogger(__name__)

FULL_SOFTMAX = "full_softmax"
NEGATIVE_SAMPLING = "negative_sampling"
NOISE_EXPONENT = 0.75

_LCG_MUL = 6364136223846793005
_LCG_INC = 1442695040888963407
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class PvdmConfig:
    dim: int = 64
    context: int = 8
    epochs: int = 20
    learning_rate: float = 0.025
    min_learning_rate: float | None = None  # default 1e-4 * learning_rate
    backend: str = NEGATIVE_SAMPLING
    negative: int = 5
    seed: int = 0
    min_count: int = 2
    infer_epochs: int | None = None  # default: epochs

    def __post_init__(self):
        if self.dim < 1 or self.context < 1 or self.epochs < 1:
            raise ValueError("dim, context and epochs must all be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.backend not in (FULL_SOFTMAX, NEGATIVE_SAMPLING):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == NEGATIVE_SAMPLING and self.negative < 1:
            raise ValueError("negative sampling needs k >= 1")

    @property
    def lr_floor(self) -> float:
        return self.min_learning_rate if self.min_learning_rate is not None else 1e-4 * self.learning_rate

    def epoch_learning_rates(self, epochs: int | None = None) -> np.ndarray:
        """Learning rate per epoch, decaying linearly from the initial value toward the floor."""
        epochs = self.epochs if epochs is None else epochs
        e = np.arange(epochs, dtype=np.float64)
        return np.maximum(self.lr_floor, self.learning_rate * (1.0 - e / epochs))

    def context_split(self) -> tuple[int, int]:
        """Words taken (before, after) the target."""
        return (self.context + 1) // 2, self.context // 2


class TrainingSample(NamedTuple):
    doc: int
    context: tuple[int, ...]
    target: int


@dataclass
class PvdmModel:
    W: np.ndarray
    W_out: np.ndarray
    W_d: np.ndarray
    vocab: Vocabulary | None = None
    config: PvdmConfig = field(default_factory=PvdmConfig)
    history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.W.shape[0]

    @property
    def n_docs(self) -> int:
        return self.W_d.shape[0]

    @property
    def output_rows(self) -> np.ndarray:
        """|V| x N C-contiguous view of ``W_out``; row j is the output vector of word j."""
        return self.W_out.T

    def copy(self) -> "PvdmModel":
        return PvdmModel(self.W.copy(), np.asfortranarray(self.W_out.copy()), self.W_d.copy(),
                         self.vocab, self.config, list(self.history))


def init_model(config: PvdmConfig, vocab_size: int, n_docs: int, vocab: Vocabulary | None = None,
               dtype=np.float32) -> PvdmModel:
    """Uniform(-0.5/N, 0.5/N) input and document vectors, zero output vectors."""
    if vocab_size < 1 or n_docs < 1:
        raise ValueError("vocab_size and n_docs must be >= 1")
    n = config.dim
    rng = np.random.default_rng(config.seed)
    W = rng.uniform(-0.5 / n, 0.5 / n, size=(vocab_size, n)).astype(dtype)
    W_d = rng.uniform(-0.5 / n, 0.5 / n, size=(n_docs, n)).astype(dtype)
    W_out = np.zeros((n, vocab_size), dtype=dtype, order="F")
    return PvdmModel(W, W_out, W_d, vocab, config)


def hidden_vector(model: PvdmModel, doc: int, context: Sequence[int]) -> np.ndarray:
    if len(context) == 0:
        raise ValueError("context must contain at least one word")
    ctx = np.asarray(context, dtype=np.int64)
    return (model.W[ctx].sum(axis=0) + model.W_d[doc]) / (len(ctx) + 1)


def softmax(u: np.ndarray) -> np.ndarray:
    z = np.exp(u - np.max(u))
    return z / z.sum()


def predict_distribution(model: PvdmModel, h: np.ndarray) -> np.ndarray:
    return softmax(model.output_rows @ h)


def sample_loss(model: PvdmModel, sample: TrainingSample) -> float:
    """Negative log-probability of the target under the full softmax."""
    h = hidden_vector(model, sample.doc, sample.context)
    u = (model.output_rows @ h).astype(np.float64)
    m = u.max()
    return float(m + math.log(np.exp(u - m).sum()) - u[sample.target])


def full_softmax_gradients(model: PvdmModel, sample: TrainingSample) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and dense gradients with respect to ``W``, ``W_out`` and ``W_d``."""
    ctx = np.asarray(sample.context, dtype=np.int64)
    scale = 1.0 / (len(ctx) + 1)
    h = (model.W[ctx].sum(axis=0) + model.W_d[sample.doc]) * scale
    u = model.output_rows @ h
    y = softmax(u)
    loss = float(-math.log(y[sample.target]))
    err = y.copy()
    err[sample.target] -= 1.0
    grad_h = model.W_out @ err
    gW = np.zeros_like(model.W)
    np.add.at(gW, ctx, grad_h * scale)
    gWd = np.zeros_like(model.W_d)
    gWd[sample.doc] = grad_h * scale
    gWout = np.outer(h, err)
    return loss, {"W": gW, "W_out": gWout, "W_d": gWd}


def step_full_softmax(model: PvdmModel, sample: TrainingSample, lr: float) -> float:
    """One exact SGD step in place; returns the pre-step loss."""
    return _np_step_softmax(model.W, model.output_rows, model.W_d, sample.doc,
                            np.asarray(sample.context, dtype=np.int64), sample.target, lr, True)


def _np_step_softmax(W, out_rows, W_d, doc, ctx, target, lr, learn_words):
    scale = 1.0 / (len(ctx) + 1)
    h = (W[ctx].sum(axis=0) + W_d[doc]) * scale
    u = out_rows @ h
    m = u.max()
    z = np.exp(u - m)
    s = z.sum()
    loss = float(m + math.log(s) - u[target])
    err = z / s
    err[target] -= 1.0
    grad_h = err @ out_rows
    if learn_words:
        out_rows -= (lr * err)[:, None] * h[None, :]
        np.subtract.at(W, ctx, lr * scale * grad_h)
    W_d[doc] -= lr * scale * grad_h
    return loss


class NoiseSampler:
    """Unigram^0.75 noise distribution driven by a 64-bit LCG.

    ``state`` is a one-element uint64 array so numba kernels can advance it in place.
    """

    def __init__(self, counts: np.ndarray, seed: int = 0, exponent: float = NOISE_EXPONENT):
        p = np.asarray(counts, dtype=np.float64) ** exponent
        if p.size < 2 or p.sum() <= 0:
            raise ValueError("negative sampling needs at least two words with positive counts")
        self.cdf = np.cumsum(p / p.sum())
        self.cdf[-1] = 1.0
        self.state = np.array([(seed * 0x9E3779B97F4A7C15 + 1) & _MASK64], dtype=np.uint64)

    def uniform(self) -> float:
        s = (int(self.state[0]) * _LCG_MUL + _LCG_INC) & _MASK64
        self.state[0] = s
        return (s >> 11) * (1.0 / 9007199254740992.0)

    def draw(self, exclude: int) -> int:
        while True:
            w = int(np.searchsorted(self.cdf, self.uniform(), side="right"))
            w = min(w, self.cdf.size - 1)
            if w != exclude:
                return w


def _log_sigmoid(x: float) -> float:
    return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))


def step_negative_sampling(model: PvdmModel, sample: TrainingSample, lr: float, k: int,
                           sampler: NoiseSampler) -> float:
    """One negative-sampling SGD step in place; returns the sampled logistic loss."""
    return _np_step_negative(model.W, model.output_rows, model.W_d, sample.doc,
                             np.asarray(sample.context, dtype=np.int64), sample.target, lr, k,
                             sampler, True)


def _np_step_negative(W, out_rows, W_d, doc, ctx, target, lr, k, sampler, learn_words):
    scale = 1.0 / (len(ctx) + 1)
    h = (W[ctx].sum(axis=0) + W_d[doc]) * scale
    neu1e = np.zeros_like(h)
    loss = 0.0
    for i in range(k + 1):
        if i == 0:
            word, label = target, 1.0
        else:
            word, label = sampler.draw(target), 0.0
        f = float(out_rows[word] @ h)
        loss -= _log_sigmoid(f) if label else _log_sigmoid(-f)
        g = lr * (label - 1.0 / (1.0 + math.exp(-f)))
        neu1e += g * out_rows[word]
        if learn_words:
            out_rows[word] += g * h
    if learn_words:
        np.add.at(W, ctx, scale * neu1e)
    W_d[doc] += scale * neu1e
    return loss


# -- numba epoch kernels -----------------------------------------------------

@njit
def _nb_uniform(state):
    s = state[0] * np.uint64(6364136223846793005) + np.uint64(1442695040888963407)
    state[0] = s
    return np.float64(s >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit
def _nb_draw(cdf, state, exclude):
    v = cdf.shape[0]
    while True:
        w = np.searchsorted(cdf, _nb_uniform(state), side="right")
        if w > v - 1:
            w = v - 1
        if w != exclude:
            return w


@njit
def _nb_log_sigmoid(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit
def _nb_epoch(tokens, offsets, doc_rows, W, out_rows, W_d, lr, before, after,
              softmax_backend, k, cdf, state, learn_words):
    n = W.shape[1]
    v = out_rows.shape[0]
    h = np.zeros(n, dtype=np.float64)
    neu1e = np.zeros(n, dtype=np.float64)
    u = np.zeros(v, dtype=np.float64)
    total = 0.0
    count = 0
    for di in range(offsets.shape[0] - 1):
        start = offsets[di]
        stop = offsets[di + 1]
        d = doc_rows[di]
        for t in range(start, stop):
            lo = t - before
            if lo < start:
                lo = start
            hi = t + after
            if hi > stop - 1:
                hi = stop - 1
            ctx_n = hi - lo
            scale = 1.0 / (ctx_n + 1)
            for a in range(n):
                h[a] = W_d[d, a]
            for c in range(lo, hi + 1):
                if c != t:
                    w = tokens[c]
                    for a in range(n):
                        h[a] += W[w, a]
            for a in range(n):
                h[a] *= scale
                neu1e[a] = 0.0
            target = tokens[t]
            if softmax_backend:
                m = -np.inf
                for j in range(v):
                    s = 0.0
                    for a in range(n):
                        s += out_rows[j, a] * h[a]
                    u[j] = s
                    if s > m:
                        m = s
                ut = u[target]
                z = 0.0
                for j in range(v):
                    u[j] = math.exp(u[j] - m)
                    z += u[j]
                total += m + math.log(z) - ut
                for j in range(v):
                    e = u[j] / z
                    if j == target:
                        e -= 1.0
                    g = lr * e
                    for a in range(n):
                        neu1e[a] -= g * out_rows[j, a]
                    if learn_words:
                        for a in range(n):
                            out_rows[j, a] -= g * h[a]
            else:
                for i in range(k + 1):
                    if i == 0:
                        word = target
                        label = 1.0
                    else:
                        word = _nb_draw(cdf, state, target)
                        label = 0.0
                    f = 0.0
                    for a in range(n):
                        f += out_rows[word, a] * h[a]
                    if i == 0:
                        total -= _nb_log_sigmoid(f)
                    else:
                        total -= _nb_log_sigmoid(-f)
                    g = lr * (label - 1.0 / (1.0 + math.exp(-f)))
                    for a in range(n):
                        neu1e[a] += g * out_rows[word, a]
                    if learn_words:
                        for a in range(n):
                            out_rows[word, a] += g * h[a]
            if learn_words:
                for c in range(lo, hi + 1):
                    if c != t:
                        w = tokens[c]
                        for a in range(n):
                            W[w, a] += scale * neu1e[a]
            for a in range(n):
                W_d[d, a] += scale * neu1e[a]
            count += 1
    return total, count


def iter_samples(tokens: Sequence[int], doc: int, before: int, after: int):
    """Sliding windows with the target at the centre; edges use whatever context exists."""
    L = len(tokens)
    for t in range(L):
        ctx = tuple(int(tokens[c]) for c in range(max(0, t - before), min(L, t + after + 1)) if c != t)
        yield TrainingSample(doc, ctx, int(tokens[t]))


def _np_epoch(tokens, offsets, doc_rows, W, out_rows, W_d, lr, before, after,
              softmax_backend, k, sampler, learn_words):
    total, count = 0.0, 0
    for di in range(len(offsets) - 1):
        doc_tokens = tokens[offsets[di]:offsets[di + 1]]
        for s in iter_samples(doc_tokens, int(doc_rows[di]), before, after):
            ctx = np.asarray(s.context, dtype=np.int64)
            if softmax_backend:
                total += _np_step_softmax(W, out_rows, W_d, s.doc, ctx, s.target, lr, learn_words)
            else:
                total += _np_step_negative(W, out_rows, W_d, s.doc, ctx, s.target, lr, k,
                                           sampler, learn_words)
            count += 1
    return total, count


def _run_epochs(model: PvdmModel, config: PvdmConfig, tokens, offsets, doc_rows, lrs,
                sampler: NoiseSampler | None, learn_words: bool, use_numba: bool | None = None) -> list[float]:
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    before, after = config.context_split()
    softmax_backend = config.backend == FULL_SOFTMAX
    out_rows = model.output_rows
    cdf = sampler.cdf if sampler is not None else np.ones(1)
    state = sampler.state if sampler is not None else np.zeros(1, dtype=np.uint64)
    losses = []
    for lr in lrs:
        if use_numba:
            total, count = _nb_epoch(tokens, offsets, doc_rows, model.W, out_rows, model.W_d,
                                     float(lr), before, after, softmax_backend, config.negative,
                                     cdf, state, learn_words)
        else:
            total, count = _np_epoch(tokens, offsets, doc_rows, model.W, out_rows, model.W_d,
                                     float(lr), before, after, softmax_backend, config.negative,
                                     sampler, learn_words)
        losses.append(total / max(count, 1))
    return losses


def _flatten(docs: Sequence[np.ndarray]):
    lengths = np.array([len(d) for d in docs], dtype=np.int64)
    offsets = np.zeros(len(docs) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    if len(docs):
        tokens = np.concatenate([np.asarray(d, dtype=np.int64) for d in docs])
    else:
        tokens = np.zeros(0, dtype=np.int64)
    return tokens, offsets


def train(config: PvdmConfig, docs: Sequence[TokenizedDoc], vocab: Vocabulary | None = None,
          vocab_size: int | None = None, dtype=np.float32, use_numba: bool | None = None) -> PvdmModel:
    """Train word and document vectors; document ``i`` of ``docs`` gets row ``i`` of ``W_d``."""
    if not docs:
        raise ValueError("empty corpus")
    if vocab is None and vocab_size is None:
        raise ValueError("pass vocab or vocab_size")
    v = len(vocab) if vocab is not None else int(vocab_size)
    tokens, offsets = _flatten([d.tokens for d in docs])
    if tokens.size == 0:
        raise ValueError("corpus has no in-vocabulary tokens")
    if tokens.max() >= v or tokens.min() < 0:
        raise ValueError("token index out of vocabulary range")
    n_empty = int(np.sum(np.diff(offsets) == 0))
    if n_empty:
        log.warning("%d documents have no in-vocabulary tokens; their vectors stay at init", n_empty)

    model = init_model(config, v, len(docs), vocab, dtype=dtype)
    sampler = None
    if config.backend == NEGATIVE_SAMPLING:
        counts = vocab.counts if vocab is not None else np.bincount(tokens, minlength=v)
        sampler = NoiseSampler(counts, seed=config.seed)
    doc_rows = np.arange(len(docs), dtype=np.int64)
    model.history = _run_epochs(model, config, tokens, offsets, doc_rows,
                                config.epoch_learning_rates(), sampler, True, use_numba)
    return model


def infer_doc_vector(model: PvdmModel, tokens: Sequence[int], config: PvdmConfig | None = None,
                     use_numba: bool | None = None) -> np.ndarray:
    """Fit a fresh document vector with the word matrices frozen."""
    config = config or model.config
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.size == 0:
        raise ValueError("no in-vocabulary tokens to infer from")
    if toks.max() >= model.vocab_size or toks.min() < 0:
        raise ValueError("token index out of vocabulary range")
    n = model.dim
    rng = np.random.default_rng(config.seed)
    W_d = rng.uniform(-0.5 / n, 0.5 / n, size=(1, n)).astype(model.W.dtype)
    frozen = PvdmModel(model.W, model.W_out, W_d, model.vocab, config)
    sampler = None
    if config.backend == NEGATIVE_SAMPLING:
        counts = model.vocab.counts if model.vocab is not None else np.ones(model.vocab_size)
        sampler = NoiseSampler(counts, seed=config.seed)
    epochs = config.infer_epochs or config.epochs
    _run_epochs(frozen, config, toks, np.array([0, toks.size], dtype=np.int64),
                np.zeros(1, dtype=np.int64), config.epoch_learning_rates(epochs), sampler, False,
                use_numba)
    return W_d[0].copy()


# -- serialization -----------------------------------------------------------

MAGIC = b"PVDM"
FORMAT_VERSION = 1


def save_model(model: PvdmModel, path) -> None:
    """Binary container: magic, version, JSON header, then W, W_out, W_d as little-endian f32.

    ``W_out`` is stored row-major as N x |V|.
    """
    header = {
        "config": asdict(model.config),
        "shape": {"vocab": model.vocab_size, "dim": model.dim, "docs": model.n_docs},
        "vocab": None if model.vocab is None else {
            "tokens": model.vocab.tokens, "counts": model.vocab.counts.tolist()},
        "history": model.history,
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in (model.W, model.W_out, model.W_d):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path) -> PvdmModel:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a PV-DM model file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported PV-DM model version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        v, n, d = (header["shape"][k] for k in ("vocab", "dim", "docs"))

        def read(rows, cols):
            buf = fh.read(rows * cols * 4)
            if len(buf) != rows * cols * 4:
                raise ValueError(f"{path} is truncated")
            return np.frombuffer(buf, dtype="<f4").reshape(rows, cols).astype(np.float32)

        W = read(v, n)
        W_out = np.asfortranarray(read(n, v))
        W_d = read(d, n)
    vocab = None
    if header["vocab"] is not None:
        vocab = Vocabulary(header["vocab"]["tokens"], np.array(header["vocab"]["counts"], dtype=np.int64))
    config = PvdmConfig(**header["config"])
    return PvdmModel(W, W_out, W_d, vocab, config, list(header.get("history", [])))


def write_doc_vectors(vectors: np.ndarray, doc_ids: Sequence, path) -> None:
    """Text export: ``doc_id`` followed by N floats per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for did, row in zip(doc_ids, vectors):
            fh.write(str(did) + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_doc_vectors(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    return ids, np.array(rows, dtype=np.float64).reshape(len(ids), -1)


def with_dim(config: PvdmConfig, dim: int) -> PvdmConfig:
    return replace(config, dim=dim)
