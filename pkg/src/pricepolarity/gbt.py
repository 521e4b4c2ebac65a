"""Second-order gradient-boosted regression trees for binary labels.

Trees are grown with exact greedy split search.  Rows whose split feature is
missing follow a per-node default direction, chosen by evaluating every
candidate threshold with the missing rows sent left and then right.

A tree of ``max_depth`` d has at most d levels of nodes, so ``max_depth=1``
is a single leaf.  Rows with ``value < threshold`` go left.

Growth and prediction have ``@njit`` kernels and vectorized numpy
fallbacks; both accumulate gradient sums in the same order and produce the
same trees.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _accel
from ._accel import njit
from .corpus import EncodedMatrix

log = logging.getLogger(__name__)

HESSIAN_FLOOR = 1e-16
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoosterConfig:
    n_trees: int = 300
    max_depth: int = 20
    reg_lambda: float = 1.0
    gamma: float = 0.0
    eta: float = 0.3
    min_child_hessian: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_hessian < 0:
            raise ValueError("lambda, gamma and min_child_hessian must be non-negative")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")


class GradientPair(NamedTuple):
    g: float
    h: float


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic_grad_hess(margin: float, label: int) -> GradientPair:
    p = float(sigmoid(margin))
    return GradientPair(p - label, max(p * (1.0 - p), HESSIAN_FLOOR))


def logistic_grad_hess_vec(margins: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = sigmoid(margins)
    return p - labels, np.maximum(p * (1.0 - p), HESSIAN_FLOOR)


def log_loss(margins: np.ndarray, labels: np.ndarray) -> float:
    m = np.asarray(margins, dtype=np.float64)
    # log(1 + exp(m)) - y*m, stable
    return float(np.mean(np.logaddexp(0.0, m) - labels * m))


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    if H + reg_lambda == 0:
        raise ZeroDivisionError("H + lambda must be positive")
    return -G / (H + reg_lambda)


def leaf_objective(G: float, H: float, reg_lambda: float) -> float:
    """Minimum of ``G*w + (H+lambda)*w**2/2``."""
    return -0.5 * G * G / (H + reg_lambda)


def split_gain(G_L, H_L, G_R, H_R, reg_lambda, gamma):
    if H_L + reg_lambda <= 0 or H_R + reg_lambda <= 0 or H_L + H_R + reg_lambda <= 0:
        raise ZeroDivisionError("degenerate hessian sums")
    return _gain(G_L, H_L, G_R, H_R, reg_lambda, gamma)


@njit
def _gain(gl, hl, gr, hr, lam, gamma):
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam)
                  - (gl + gr) * (gl + gr) / (hl + hr + lam)) - gamma


@njit
def _midpoint(lo, hi):
    mid = lo * 0.5 + hi * 0.5
    if mid <= lo:
        mid = hi
    return mid


@dataclass
class Tree:
    """Flat node arrays; node 0 is the root and ``left == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    def is_leaf(self, i: int) -> bool:
        return bool(self.left[i] < 0)

    def depth(self) -> int:
        depth = np.ones(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, matrix: EncodedMatrix) -> np.ndarray:
        """Leaf index reached by each row."""
        return _apply_tree(self, matrix.values, matrix.missing_mask)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "default_left": self.default_left.astype(int).tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "weight": self.weight.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        return cls(
            np.array(obj["feature"], dtype=np.int64),
            np.array(obj["threshold"], dtype=np.float64),
            np.array(obj["default_left"], dtype=np.bool_),
            np.array(obj["left"], dtype=np.int64),
            np.array(obj["right"], dtype=np.int64),
            np.array(obj["weight"], dtype=np.float64),
            np.array(obj["gain"], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, weight: float) -> "Tree":
        return cls(np.array([-1]), np.array([0.0]), np.array([True]), np.array([-1]),
                   np.array([-1]), np.array([float(weight)]), np.array([0.0]))


class SplitCandidate(NamedTuple):
    feature: int
    threshold: float
    default_left: bool
    gain: float


# -- presorting ----------------------------------------------------------------

def presort(matrix: EncodedMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per feature, present rows ordered by (value, row); CSR ``(rows, offsets)``."""
    n, m = matrix.values.shape
    parts = []
    offsets = np.zeros(m + 1, dtype=np.int64)
    for f in range(m):
        present = np.flatnonzero(~matrix.missing_mask[:, f])
        order = np.argsort(matrix.values[present, f], kind="stable")
        parts.append(present[order])
        offsets[f + 1] = offsets[f] + present.size
    rows = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return rows.astype(np.int64), offsets


# -- numba grower --------------------------------------------------------------

@njit
def _nb_grow(X, miss, g, h, rows, sorted_rows, sorted_off, max_depth, lam, gamma, mch):
    n, m = X.shape
    cap = 2 * rows.shape[0] + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    default_left = np.ones(cap, dtype=np.bool_)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    weight = np.zeros(cap, dtype=np.float64)
    gain = np.zeros(cap, dtype=np.float64)
    G = np.zeros(cap, dtype=np.float64)
    H = np.zeros(cap, dtype=np.float64)

    node_of = np.full(n, -1, dtype=np.int64)
    for r in rows:
        node_of[r] = 0
    cnt = np.zeros(cap, dtype=np.int64)
    for r in rows:
        G[0] += g[r]
        H[0] += h[r]
    cnt[0] = rows.shape[0]
    n_nodes = 1

    # working copy of the presorted lists, compacted each level to rows still in the frontier
    srt = sorted_rows.copy()
    sval = np.empty(srt.shape[0], dtype=np.float64)
    off = sorted_off.copy()
    live = np.zeros(cap, dtype=np.bool_)
    live[0] = True
    w = 0
    for f in range(m):
        start = w
        for i in range(sorted_off[f], sorted_off[f + 1]):
            r = srt[i]
            if node_of[r] >= 0:
                srt[w] = r
                sval[w] = X[r, f]
                w += 1
        off[f] = start
    off[m] = w

    frontier = np.zeros(1, dtype=np.int64)
    slot_of = np.full(cap, -1, dtype=np.int64)
    depth = 1
    while frontier.shape[0] > 0 and depth < max_depth:
        k = frontier.shape[0]
        for s in range(k):
            slot_of[frontier[s]] = s
        best_gain = np.zeros(k)
        best_feat = np.full(k, -1, dtype=np.int64)
        best_thr = np.zeros(k)
        best_left = np.ones(k, dtype=np.bool_)
        pg = np.zeros(k)
        ph = np.zeros(k)
        pc = np.zeros(k, dtype=np.int64)
        parent = np.empty(k)
        for s in range(k):
            nd = frontier[s]
            parent[s] = G[nd] * G[nd] / (H[nd] + lam)
        lg = np.zeros(k)
        lh = np.zeros(k)
        last = np.zeros(k)
        seen = np.zeros(k, dtype=np.bool_)
        for f in range(m):
            a0 = off[f]
            a1 = off[f + 1]
            pg[:] = 0.0
            ph[:] = 0.0
            pc[:] = 0
            lg[:] = 0.0
            lh[:] = 0.0
            seen[:] = False
            for i in range(a0, a1):
                r = srt[i]
                s = slot_of[node_of[r]]
                pg[s] += g[r]
                ph[s] += h[r]
                pc[s] += 1
            for i in range(a0, a1):
                r = srt[i]
                nd = node_of[r]
                s = slot_of[nd]
                x = sval[i]
                if seen[s] and x != last[s]:
                    gm = G[nd] - pg[s]
                    hm = H[nd] - ph[s]
                    thr = _midpoint(last[s], x)
                    # with no missing rows both directions give the same partition;
                    # evaluate it once and store it as default-left
                    nomiss = cnt[nd] == pc[s]
                    d0 = 1 if nomiss else 0
                    for d in range(d0, 2):
                        if d == 0:
                            gl = lg[s] + gm
                            hl = lh[s] + hm
                        else:
                            gl = lg[s]
                            hl = lh[s]
                        gr = G[nd] - gl
                        hr = H[nd] - hl
                        if hl >= mch and hr >= mch:
                            gn = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent[s]) - gamma
                            if gn > best_gain[s]:
                                best_gain[s] = gn
                                best_feat[s] = f
                                best_thr[s] = thr
                                best_left[s] = d == 0 or nomiss
                lg[s] += g[r]
                lh[s] += h[r]
                last[s] = x
                seen[s] = True
        n_split = 0
        for s in range(k):
            if best_feat[s] >= 0:
                n_split += 1
        new_frontier = np.zeros(2 * n_split, dtype=np.int64)
        j = 0
        for s in range(k):
            nd = frontier[s]
            if best_feat[s] >= 0:
                feature[nd] = best_feat[s]
                threshold[nd] = best_thr[s]
                default_left[nd] = best_left[s]
                gain[nd] = best_gain[s]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                new_frontier[j] = n_nodes
                new_frontier[j + 1] = n_nodes + 1
                j += 2
                n_nodes += 2
        for r in rows:
            nd = node_of[r]
            if left[nd] < 0 or slot_of[nd] < 0:
                continue
            f = feature[nd]
            if miss[r, f]:
                go_left = default_left[nd]
            else:
                go_left = X[r, f] < threshold[nd]
            child = left[nd] if go_left else right[nd]
            node_of[r] = child
            G[child] += g[r]
            H[child] += h[r]
            cnt[child] += 1
        for s in range(k):
            slot_of[frontier[s]] = -1
            live[frontier[s]] = False
        for s in range(new_frontier.shape[0]):
            live[new_frontier[s]] = True
        w = 0
        for f in range(m):
            start = w
            for i in range(off[f], off[f + 1]):
                r = srt[i]
                if live[node_of[r]]:
                    srt[w] = r
                    sval[w] = sval[i]
                    w += 1
            off[f] = start
        off[m] = w
        frontier = new_frontier
        depth += 1
    for i in range(n_nodes):
        if left[i] < 0:
            weight[i] = -G[i] / (H[i] + lam)
    return (feature[:n_nodes], threshold[:n_nodes], default_left[:n_nodes], left[:n_nodes],
            right[:n_nodes], weight[:n_nodes], gain[:n_nodes], node_of)


# -- numpy grower --------------------------------------------------------------

def _seq_sum(x: np.ndarray) -> float:
    # sequential left-to-right sum, matching the numba kernels bit for bit
    return float(np.cumsum(x)[-1]) if x.size else 0.0


def _np_best_split(rows, X, miss, g, h, Gn, Hn, lam, gamma, mch):
    best = None
    best_gain = 0.0
    for f in range(X.shape[1]):
        present = rows[~miss[rows, f]]
        if present.size < 2:
            continue
        vals = X[present, f]
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        cg = np.cumsum(g[present][order])
        ch = np.cumsum(h[present][order])
        b = np.flatnonzero(v[1:] != v[:-1])
        if b.size == 0:
            continue
        gm = Gn - cg[-1]
        hm = Hn - ch[-1]
        lo, hi = v[b], v[b + 1]
        thr = lo * 0.5 + hi * 0.5
        thr = np.where(thr <= lo, hi, thr)
        glp, hlp = cg[b], ch[b]
        gains = np.full((b.size, 2), -np.inf)
        parent = Gn * Gn / (Hn + lam)
        has_missing = present.size < rows.size
        for d, (gl, hl) in enumerate(((glp + gm, hlp + hm), (glp, hlp))):
            if d == 0 and not has_missing:
                continue
            gr = Gn - gl
            hr = Hn - hl
            ok = (hl >= mch) & (hr >= mch)
            with np.errstate(divide="ignore", invalid="ignore"):
                gn = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma
            gains[:, d] = np.where(ok, gn, -np.inf)
        flat = int(np.argmax(gains))  # row-major: threshold ascending, left before right
        top = gains.flat[flat]
        if top > best_gain:
            best_gain = float(top)
            i, d = divmod(flat, 2)
            best = SplitCandidate(f, float(thr[i]), d == 0 or not has_missing, best_gain)
    return best


def _np_grow(X, miss, g, h, rows, max_depth, lam, gamma, mch):
    feature, threshold, default_left, left, right, weight, gain = [], [], [], [], [], [], []
    node_rows = []

    def new_node(r):
        for arr, val in ((feature, -1), (threshold, 0.0), (default_left, True), (left, -1),
                         (right, -1), (weight, 0.0), (gain, 0.0)):
            arr.append(val)
        node_rows.append(r)
        return len(feature) - 1

    rows = np.sort(np.asarray(rows, dtype=np.int64))
    frontier = [new_node(rows)]
    depth = 1
    while frontier and depth < max_depth:
        nxt = []
        for nd in frontier:
            r = node_rows[nd]
            sp = _np_best_split(r, X, miss, g, h, _seq_sum(g[r]), _seq_sum(h[r]), lam, gamma, mch)
            if sp is None:
                continue
            m = miss[r, sp.feature]
            go_left = np.where(m, sp.default_left, X[r, sp.feature] < sp.threshold)
            feature[nd], threshold[nd], default_left[nd], gain[nd] = sp.feature, sp.threshold, sp.default_left, sp.gain
            left[nd] = new_node(r[go_left])
            right[nd] = new_node(r[~go_left])
            nxt.extend((left[nd], right[nd]))
        frontier = nxt
        depth += 1
    node_of = np.full(X.shape[0], -1, dtype=np.int64)
    for nd, r in enumerate(node_rows):
        if left[nd] < 0:
            weight[nd] = -_seq_sum(g[r]) / (_seq_sum(h[r]) + lam)
            node_of[r] = nd
    return (np.array(feature, dtype=np.int64), np.array(threshold), np.array(default_left, dtype=np.bool_),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(weight),
            np.array(gain), node_of)


def _grow(rows, g, h, matrix, max_depth, lam, gamma, mch, presorted=None, use_numba=None):
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    rows = np.sort(np.asarray(rows, dtype=np.int64))
    if rows.size == 0:
        raise ValueError("cannot grow a tree on zero rows")
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if use_numba:
        srows, soff = presorted if presorted is not None else presort(matrix)
        out = _nb_grow(matrix.values, matrix.missing_mask, g, h, rows, srows, soff,
                       max_depth, float(lam), float(gamma), float(mch))
    else:
        out = _np_grow(matrix.values, matrix.missing_mask, g, h, rows, max_depth,
                       float(lam), float(gamma), float(mch))
    return Tree(*out[:7]), out[7]


def find_best_split(rows, gradients, matrix: EncodedMatrix, reg_lambda: float, gamma: float,
                    min_child_hessian: float = 0.0, use_numba: bool | None = None) -> SplitCandidate | None:
    """Best positive-gain ``(feature, threshold, default_left, gain)`` or None.

    ``gradients`` is a sequence of :class:`GradientPair` or a ``(g, h)`` pair of arrays
    indexed by row.
    """
    g, h = _unpack_gradients(gradients)
    tree, _ = _grow(rows, g, h, matrix, 2, reg_lambda, gamma, min_child_hessian, use_numba=use_numba)
    if tree.is_leaf(0):
        return None
    return SplitCandidate(int(tree.feature[0]), float(tree.threshold[0]), bool(tree.default_left[0]),
                          float(tree.gain[0]))


def _unpack_gradients(gradients):
    if isinstance(gradients, tuple) and len(gradients) == 2 and not isinstance(gradients[0], GradientPair):
        return np.asarray(gradients[0], dtype=np.float64), np.asarray(gradients[1], dtype=np.float64)
    arr = np.asarray([(p.g, p.h) for p in gradients], dtype=np.float64).reshape(-1, 2)
    return arr[:, 0].copy(), arr[:, 1].copy()


def grow_tree(rows, gradients, matrix: EncodedMatrix, config: BoosterConfig,
              use_numba: bool | None = None) -> Tree:
    g, h = _unpack_gradients(gradients)
    tree, _ = _grow(rows, g, h, matrix, config.max_depth, config.reg_lambda, config.gamma,
                    config.min_child_hessian, use_numba=use_numba)
    return tree


# -- prediction ----------------------------------------------------------------

@njit
def _nb_apply(feature, threshold, default_left, left, right, X, miss):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        nd = 0
        while left[nd] >= 0:
            f = feature[nd]
            if miss[i, f]:
                nd = left[nd] if default_left[nd] else right[nd]
            elif X[i, f] < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = nd
    return out


def _np_apply(tree: Tree, X, miss):
    nd = np.zeros(X.shape[0], dtype=np.int64)
    idx = np.arange(X.shape[0])
    active = tree.left[nd] >= 0
    while active.any():
        a = idx[active]
        cur = nd[a]
        f = tree.feature[cur]
        m = miss[a, f]
        go_left = np.where(m, tree.default_left[cur], X[a, f] < tree.threshold[cur])
        nd[a] = np.where(go_left, tree.left[cur], tree.right[cur])
        active[a] = tree.left[nd[a]] >= 0
    return nd


def _apply_tree(tree: Tree, X, miss, use_numba=None):
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    if use_numba:
        return _nb_apply(tree.feature, tree.threshold, tree.default_left, tree.left, tree.right, X, miss)
    return _np_apply(tree, X, miss)


@dataclass
class Ensemble:
    trees: list[Tree] = field(default_factory=list)
    base_margin: float = 0.0
    eta: float = 0.3
    n_features: int | None = None
    config: BoosterConfig | None = None
    schema_fingerprint: str | None = None
    columns: list[str] | None = None
    train_loss: list[float] = field(default_factory=list)

    def _check(self, matrix: EncodedMatrix):
        if self.n_features is not None and matrix.n_cols != self.n_features:
            raise ValueError(f"row width {matrix.n_cols} does not match the ensemble's {self.n_features} features")

    def predict_margin(self, matrix: EncodedMatrix, use_numba: bool | None = None) -> np.ndarray:
        self._check(matrix)
        margin = np.full(matrix.n_rows, self.base_margin, dtype=np.float64)
        for tree in self.trees:
            margin += self.eta * tree.weight[_apply_tree(tree, matrix.values, matrix.missing_mask, use_numba)]
        return margin

    def predict_proba(self, matrix: EncodedMatrix) -> np.ndarray:
        return sigmoid(self.predict_margin(matrix))

    def predict_label(self, matrix: EncodedMatrix) -> np.ndarray:
        return (self.predict_margin(matrix) > 0).astype(np.int64)

    def to_json(self) -> dict:
        return {
            "format": "pricepolarity.gbt",
            "version": FORMAT_VERSION,
            "base_margin": self.base_margin,
            "eta": self.eta,
            "n_features": self.n_features,
            "config": None if self.config is None else asdict(self.config),
            "schema_fingerprint": self.schema_fingerprint,
            "columns": self.columns,
            "train_loss": self.train_loss,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Ensemble":
        if obj.get("format") != "pricepolarity.gbt":
            raise ValueError("not an ensemble file")
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported ensemble version {obj.get('version')}")
        return cls(
            trees=[Tree.from_json(t) for t in obj["trees"]],
            base_margin=float(obj["base_margin"]),
            eta=float(obj["eta"]),
            n_features=obj["n_features"],
            config=None if obj["config"] is None else BoosterConfig(**obj["config"]),
            schema_fingerprint=obj["schema_fingerprint"],
            columns=obj["columns"],
            train_loss=list(obj.get("train_loss", [])),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, expected_fingerprint: str | None = None) -> "Ensemble":
        with open(path, encoding="utf-8") as fh:
            ens = cls.from_json(json.load(fh))
        if expected_fingerprint is not None and ens.schema_fingerprint != expected_fingerprint:
            raise ValueError(
                f"ensemble was trained on schema {ens.schema_fingerprint}, inputs have {expected_fingerprint}")
        return ens


def predict_margin(ensemble: Ensemble, matrix: EncodedMatrix) -> np.ndarray:
    return ensemble.predict_margin(matrix)


def predict_label(ensemble: Ensemble, matrix: EncodedMatrix) -> np.ndarray:
    return ensemble.predict_label(matrix)


def train_ensemble(matrix: EncodedMatrix, labels: Sequence[int], config: BoosterConfig,
                   schema_fingerprint: str | None = None, use_numba: bool | None = None) -> Ensemble:
    """Additive training from a zero margin, one Newton-step tree per round."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (matrix.n_rows,):
        raise ValueError(f"{y.size} labels for {matrix.n_rows} rows")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.size and (y.min() == y.max()):
        log.warning("training labels contain a single class")
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    presorted = presort(matrix) if use_numba else None
    rows = np.arange(matrix.n_rows, dtype=np.int64)
    margin = np.zeros(matrix.n_rows)
    ens = Ensemble(base_margin=0.0, eta=config.eta, n_features=matrix.n_cols, config=config,
                   schema_fingerprint=schema_fingerprint, columns=list(matrix.columns))
    for _ in range(config.n_trees):
        g, h = logistic_grad_hess_vec(margin, y)
        tree, leaf_of = _grow(rows, g, h, matrix, config.max_depth, config.reg_lambda, config.gamma,
                              config.min_child_hessian, presorted=presorted, use_numba=use_numba)
        margin += config.eta * tree.weight[leaf_of]
        ens.trees.append(tree)
        ens.train_loss.append(log_loss(margin, y))
    return ens
