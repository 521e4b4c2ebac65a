"""Experiments and measurements: accuracy, token ranking, agreement, sweeps."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import pvdm
from .corpus import EncodedMatrix, PropertyRecord, build_schema, encode_features, split_train_test
from .gbt import BoosterConfig, train_ensemble
from .labeling import build_labeled_dataset
from .textproc import TokenizedDoc, Vocabulary, build_vocabulary, index_documents, tokenize

log = logging.getLogger(__name__)

DOC2VEC_ONLY = "doc2vec_only"
FEATURES_ONLY = "features_only"
COMBINED = "combined"
MODEL_KINDS = (DOC2VEC_ONLY, FEATURES_ONLY, COMBINED)

TRANSDUCTIVE = "transductive"
INDUCTIVE = "inductive"


def _binary(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64).ravel()
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary")
    return arr


def accuracy(predictions, labels) -> float:
    """Correct predictions over total, both classes counted."""
    p, y = _binary(predictions, "predictions"), _binary(labels, "labels")
    if p.size != y.size:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} labels")
    if p.size == 0:
        raise ValueError("accuracy of an empty set")
    return int(np.sum(p == y)) / p.size


# -- chi-squared token ranking -----------------------------------------------

class Chi2Score(NamedTuple):
    token: int
    statistic: float
    a: int  # present, polarity 1
    b: int  # present, polarity 0
    c: int  # absent, polarity 1
    d: int  # absent, polarity 0


def chi2_statistic(a: int, b: int, c: int, d: int) -> float:
    """2x2 statistic; 0 when any marginal is empty."""
    n = a + b + c + d
    denom = (a + b) * (c + d) * (a + c) * (b + d)
    if denom == 0:
        return 0.0
    return n * (a * d - b * c) ** 2 / denom


def chi2_tokens(docs: Sequence[TokenizedDoc], labels, vocab_size: int | None = None) -> list[Chi2Score]:
    """Rank tokens by chi-squared dependence between presence and polarity.

    Presence is binary per document.  Ties keep ascending token index.
    """
    y = _binary(labels, "labels")
    if len(docs) != y.size:
        raise ValueError(f"{len(docs)} docs for {y.size} labels")
    n = len(docs)
    v = vocab_size
    if v is None:
        v = max((int(d.tokens.max()) + 1 for d in docs if d.tokens.size), default=0)
    present = np.zeros(v, dtype=np.int64)
    pos = np.zeros(v, dtype=np.int64)
    for doc, lab in zip(docs, y):
        u = np.unique(doc.tokens)
        present[u] += 1
        if lab:
            pos[u] += 1
    n1 = int(y.sum())
    a = pos
    b = present - pos
    c = n1 - a
    d = (n - n1) - b
    denom = ((a + b) * (c + d)).astype(np.float64) * ((a + c) * (b + d)).astype(np.float64)
    num = n * ((a * d - b * c).astype(np.float64) ** 2)
    stat = np.divide(num, denom, out=np.zeros(v), where=denom > 0)
    order = np.lexsort((np.arange(v), -stat))
    return [Chi2Score(int(t), float(stat[t]), int(a[t]), int(b[t]), int(c[t]), int(d[t])) for t in order]


# -- agreement and binned accuracy ------------------------------------------

@dataclass(frozen=True)
class AgreementStats:
    pct_same: float
    pct_both_correct: float
    pct_both_wrong: float


def agreement_stats(preds_a, preds_b, labels) -> AgreementStats:
    a, b, y = _binary(preds_a, "preds_a"), _binary(preds_b, "preds_b"), _binary(labels, "labels")
    if not (a.size == b.size == y.size):
        raise ValueError("length mismatch")
    if a.size == 0:
        raise ValueError("agreement of an empty set")
    n = a.size
    same = int(np.sum(a == b))
    both_correct = int(np.sum((a == b) & (a == y)))
    # both wrong is the same-prediction set minus the both-correct set; derived
    # from integer counts so the identity is exact in floating point too
    pct_same = 100.0 * same / n
    pct_correct = 100.0 * both_correct / n
    return AgreementStats(pct_same, pct_correct, pct_same - pct_correct)


@dataclass(frozen=True)
class AccuracyBin:
    lo: float
    hi: float
    count: int
    accuracy: float


@dataclass(frozen=True)
class BinnedAccuracy:
    bins: tuple[AccuracyBin, ...]

    def __len__(self):
        return len(self.bins)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([b.accuracy for b in self.bins])


def bin_sizes(n: int, n_bins: int = 20) -> list[int]:
    base, extra = divmod(n, n_bins)
    return [base + 1 if i < extra else base for i in range(n_bins)]


def binned_accuracy(diff_pcts, predictions, labels, n_bins: int = 20) -> BinnedAccuracy:
    x = np.asarray(diff_pcts, dtype=np.float64).ravel()
    p, y = _binary(predictions, "predictions"), _binary(labels, "labels")
    if not (x.size == p.size == y.size):
        raise ValueError("length mismatch")
    if x.size < n_bins:
        raise ValueError(f"need at least {n_bins} examples, got {x.size}")
    order = np.argsort(x, kind="stable")
    bins, start = [], 0
    for size in bin_sizes(x.size, n_bins):
        idx = order[start:start + size]
        start += size
        bins.append(AccuracyBin(float(x[idx].min()), float(x[idx].max()), int(size),
                                float(np.mean(p[idx] == y[idx]))))
    return BinnedAccuracy(tuple(bins))


# -- experiments -------------------------------------------------------------

@dataclass
class LabeledCorpus:
    """Labeled properties with row-aligned features, token documents and targets."""

    ids: list[str]
    labels: np.ndarray
    diff_pcts: np.ndarray
    features: EncodedMatrix
    docs: list[TokenizedDoc]
    vocab: Vocabulary
    schema_fingerprint: str = ""

    def __len__(self):
        return len(self.ids)

    def subset(self, rows) -> "LabeledCorpus":
        rows = np.asarray(rows, dtype=np.int64)
        docs = [TokenizedDoc(k, self.docs[i].tokens, self.docs[i].n_raw) for k, i in enumerate(rows)]
        return LabeledCorpus([self.ids[i] for i in rows], self.labels[rows], self.diff_pcts[rows],
                             self.features.take(rows), docs, self.vocab, self.schema_fingerprint)


def prepare_corpus(records: Sequence[PropertyRecord], min_count: int = 2,
                   strip_accents: bool = True) -> LabeledCorpus:
    """Label records and build the aligned feature matrix and token documents.

    The feature schema is inferred from all records; the vocabulary from the
    labeled descriptions only.
    """
    report = build_labeled_dataset(records)
    if not report.labeled:
        raise ValueError("no record has enough similar properties to be labeled")
    by_id = {r.id: r for r in records}
    recs = [by_id[lp.record_id] for lp in report.labeled]
    schema = build_schema(records)
    features = encode_features(schema, recs)
    token_lists = [tokenize(r.description, strip_accents=strip_accents) for r in recs]
    vocab = build_vocabulary(token_lists, min_count=min_count)
    return LabeledCorpus(
        ids=[r.id for r in recs],
        labels=np.array([lp.polarity for lp in report.labeled], dtype=np.int64),
        diff_pcts=np.array([lp.price_diff_pct for lp in report.labeled]),
        features=features,
        docs=index_documents(token_lists, vocab),
        vocab=vocab,
        schema_fingerprint=schema.fingerprint(),
    )


def embed_documents(corpus: LabeledCorpus, config: pvdm.PvdmConfig, mode: str = TRANSDUCTIVE,
                    train_rows=None) -> np.ndarray:
    """Document vectors aligned with the corpus rows, as float64.

    Transductive training fits every document without labels.  Inductive
    training fits ``train_rows`` only and infers the rest with frozen words;
    documents with no in-vocabulary token get a zero vector.
    """
    n = len(corpus)
    if mode == TRANSDUCTIVE:
        model = pvdm.train(config, corpus.docs, corpus.vocab)
        return model.W_d.astype(np.float64)
    if mode != INDUCTIVE:
        raise ValueError(f"unknown embedding mode {mode!r}")
    if train_rows is None:
        raise ValueError("inductive embedding needs the training rows")
    train_rows = np.asarray(train_rows, dtype=np.int64)
    model = pvdm.train(config, [corpus.docs[i] for i in train_rows], corpus.vocab)
    out = np.zeros((n, config.dim))
    out[train_rows] = model.W_d
    seen = np.zeros(n, dtype=bool)
    seen[train_rows] = True
    for i in np.flatnonzero(~seen):
        if corpus.docs[i].tokens.size:
            out[i] = pvdm.infer_doc_vector(model, corpus.docs[i].tokens, config)
    return out


def doc_matrix(vectors: np.ndarray) -> EncodedMatrix:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError("doc vectors must be a 2-D array")
    return EncodedMatrix.dense(vectors, [f"doc_{j}" for j in range(vectors.shape[1])])


def representation(kind: str, doc_vectors, features: EncodedMatrix | None) -> EncodedMatrix:
    if kind == FEATURES_ONLY:
        if features is None:
            raise ValueError("features_only needs the feature matrix")
        return features
    if doc_vectors is None:
        raise ValueError(f"{kind} needs doc vectors")
    docs = doc_matrix(doc_vectors)
    if kind == DOC2VEC_ONLY:
        return docs
    if kind == COMBINED:
        if features is None:
            raise ValueError("combined needs the feature matrix")
        return docs.hstack(features)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


@dataclass
class ExperimentResult:
    kind: str
    accuracy: float
    predictions: np.ndarray
    test_rows: np.ndarray
    config: dict = field(default_factory=dict)


def run_experiment(kind: str, labels, doc_vectors, features: EncodedMatrix | None,
                   split: tuple[np.ndarray, np.ndarray], booster: BoosterConfig = BoosterConfig(),
                   use_numba: bool | None = None) -> ExperimentResult:
    y = _binary(labels, "labels")
    X = representation(kind, doc_vectors, features)
    if X.n_rows != y.size:
        raise ValueError(f"alignment mismatch: {X.n_rows} rows for {y.size} labels")
    if doc_vectors is not None and features is not None and len(doc_vectors) != features.n_rows:
        raise ValueError("alignment mismatch between doc vectors and features")
    train_rows, test_rows = (np.asarray(s, dtype=np.int64) for s in split)
    ens = train_ensemble(X.take(train_rows), y[train_rows], booster, use_numba=use_numba)
    pred = ens.predict_label(X.take(test_rows)).astype(np.int64)
    echo = {"kind": kind, "n_train": int(train_rows.size), "n_test": int(test_rows.size),
            "n_columns": X.n_cols, "booster": asdict(booster)}
    return ExperimentResult(kind, accuracy(pred, y[test_rows]), pred, test_rows, echo)


# -- sweeps ------------------------------------------------------------------

DIM_SWEEP_COLUMNS = ("dim", "acc_d2v", "acc_feat", "acc_comb", "pct_same", "pct_both_correct")
MIN_TOKENS_COLUMNS = ("min_tokens", "n_docs", "acc_d2v", "acc_feat", "acc_comb", "pct_same",
                      "pct_both_correct")
PROFILE_COLUMNS = ("length", "mean_diff_pct", "std_diff_pct", "count")


def _three_way(corpus: LabeledCorpus, split, vectors, booster, feat: ExperimentResult | None = None):
    if feat is None:
        feat = run_experiment(FEATURES_ONLY, corpus.labels, None, corpus.features, split, booster)
    d2v = run_experiment(DOC2VEC_ONLY, corpus.labels, vectors, None, split, booster)
    comb = run_experiment(COMBINED, corpus.labels, vectors, corpus.features, split, booster)
    ag = agreement_stats(d2v.predictions, feat.predictions, corpus.labels[split[1]])
    return d2v, feat, comb, ag


def sweep_dimension(corpus: LabeledCorpus, dims: Sequence[int], pvdm_config: pvdm.PvdmConfig,
                    booster: BoosterConfig = BoosterConfig(), train_frac: float = 0.75,
                    split_seed: int = 0, mode: str = TRANSDUCTIVE) -> list[dict]:
    """One row per dimension, in input order; one split shared by all points."""
    if not dims:
        raise ValueError("dims must be non-empty")
    split = split_train_test(len(corpus), train_frac, split_seed)
    feat = run_experiment(FEATURES_ONLY, corpus.labels, None, corpus.features, split, booster)
    rows = []
    for dim in dims:
        vectors = embed_documents(corpus, pvdm.with_dim(pvdm_config, int(dim)), mode, split[0])
        d2v, _, comb, ag = _three_way(corpus, split, vectors, booster, feat)
        rows.append({"dim": int(dim), "acc_d2v": d2v.accuracy, "acc_feat": feat.accuracy,
                     "acc_comb": comb.accuracy, "pct_same": ag.pct_same,
                     "pct_both_correct": ag.pct_both_correct})
        log.info("dim %d: d2v %.4f feat %.4f comb %.4f", dim, d2v.accuracy, feat.accuracy, comb.accuracy)
    return rows


def sweep_min_tokens(corpus: LabeledCorpus, mins: Sequence[int], pvdm_config: pvdm.PvdmConfig,
                     dim: int = 64, booster: BoosterConfig = BoosterConfig(), train_frac: float = 0.75,
                     split_seed: int = 0, mode: str = TRANSDUCTIVE) -> list[dict]:
    """Refilter by raw description length, then rerun all three experiments.

    The train/test split is drawn once on the full corpus; each threshold drops
    short documents from both sides, so ``min_tokens=0`` is the unfiltered run.
    """
    if not mins:
        raise ValueError("mins must be non-empty")
    full_train, _ = split_train_test(len(corpus), train_frac, split_seed)
    in_train = np.zeros(len(corpus), dtype=bool)
    in_train[full_train] = True
    lengths = np.array([d.n_raw for d in corpus.docs])
    config = pvdm.with_dim(pvdm_config, dim)
    rows = []
    for m in mins:
        keep = np.flatnonzero(lengths >= m)
        if keep.size == 0:
            raise ValueError(f"min_tokens={m} excludes every document")
        sub = corpus.subset(keep)
        split = (np.flatnonzero(in_train[keep]), np.flatnonzero(~in_train[keep]))
        if split[0].size == 0 or split[1].size == 0:
            raise ValueError(f"min_tokens={m} leaves an empty train or test side")
        vectors = embed_documents(sub, config, mode, split[0])
        d2v, feat, comb, ag = _three_way(sub, split, vectors, booster)
        rows.append({"min_tokens": int(m), "n_docs": int(keep.size), "acc_d2v": d2v.accuracy,
                     "acc_feat": feat.accuracy, "acc_comb": comb.accuracy, "pct_same": ag.pct_same,
                     "pct_both_correct": ag.pct_both_correct})
    return rows


def description_length_profile(docs: Sequence[TokenizedDoc], diff_pcts) -> list[dict]:
    """Mean and population std of price difference per description length."""
    x = np.asarray(diff_pcts, dtype=np.float64).ravel()
    if len(docs) != x.size:
        raise ValueError("length mismatch")
    lengths = np.array([d.n_raw for d in docs], dtype=np.int64)
    rows = []
    for length in np.unique(lengths):
        vals = x[lengths == length]
        rows.append({"length": int(length), "mean_diff_pct": float(vals.mean()),
                     "std_diff_pct": float(vals.std()), "count": int(vals.size)})
    return rows


# -- table output ------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_table_csv(rows: Sequence[dict], columns: Sequence[str], fh, manifest_hash: str | None = None) -> None:
    if manifest_hash is not None:
        fh.write(f"# manifest={manifest_hash}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])


def write_table_jsonl(rows: Sequence[dict], fh) -> None:
    for r in rows:
        fh.write(json.dumps(r, sort_keys=True) + "\n")
