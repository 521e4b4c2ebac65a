"""Slow, obviously-correct reference implementations used by the tests.

Nothing here imports the package's kernels; each oracle recomputes its
answer from the definitions with plain Python loops or exact fractions.
"""
from __future__ import annotations

import datetime as dt
import math
from fractions import Fraction
from itertools import product


# -- gradient boosting ---------------------------------------------------------

def leaf_obj(G, H, lam):
    # min_w G*w + (H+lam)*w^2 / 2, evaluated at w = -G/(H+lam)
    w = -G / (H + lam)
    return G * w + 0.5 * (H + lam) * w * w


def enumerate_splits(values, missing, g, h, rows, lam, gamma, min_child_hessian=0.0):
    """Every (feature, threshold, default_left) candidate with its gain.

    ``values``/``missing`` are nested lists indexed [row][feature].  Thresholds
    are midpoints of consecutive distinct present values; a row goes left when
    its value is below the threshold.
    """
    out = []
    n_feat = len(values[0]) if values else 0
    G = sum(g[r] for r in rows)
    H = sum(h[r] for r in rows)
    for f in range(n_feat):
        present = sorted({values[r][f] for r in rows if not missing[r][f]})
        for lo, hi in zip(present, present[1:]):
            thr = lo * 0.5 + hi * 0.5
            if thr <= lo:
                thr = hi
            for default_left in (True, False):
                left = [r for r in rows
                        if (missing[r][f] and default_left) or (not missing[r][f] and values[r][f] < thr)]
                right = [r for r in rows if r not in left]
                if not left or not right:
                    continue
                GL, HL = sum(g[r] for r in left), sum(h[r] for r in left)
                GR, HR = G - GL, H - HL
                if HL < min_child_hessian or HR < min_child_hessian:
                    continue
                gain = leaf_obj(G, H, lam) - leaf_obj(GL, HL, lam) - leaf_obj(GR, HR, lam) - gamma
                out.append((f, thr, default_left, gain, tuple(left)))
    return out


def best_split(values, missing, g, h, rows, lam, gamma, min_child_hessian=0.0):
    """Highest positive gain; ties by feature, threshold, then left before right."""
    cands = [c for c in enumerate_splits(values, missing, g, h, rows, lam, gamma, min_child_hessian)
             if c[3] > 0]
    if not cands:
        return None
    best = max(c[3] for c in cands)
    return min((c for c in cands if c[3] == best), key=lambda c: (c[0], c[1], not c[2]))


def best_stump_objective(values, missing, g, h, rows, lam, gamma, min_child_hessian=0.0):
    """Minimum regularized objective over all trees with at most one split."""
    G = sum(g[r] for r in rows)
    H = sum(h[r] for r in rows)
    best = leaf_obj(G, H, lam) + gamma
    for f, thr, dl, gain, left in enumerate_splits(values, missing, g, h, rows, lam, 0.0, min_child_hessian):
        right = [r for r in rows if r not in left]
        GL, HL = sum(g[r] for r in left), sum(h[r] for r in left)
        obj = leaf_obj(GL, HL, lam) + leaf_obj(G - GL, H - HL, lam) + 2 * gamma
        best = min(best, obj)
    return best


def tree_objective(leaf_rows, g, h, lam, gamma):
    total = 0.0
    for rows in leaf_rows:
        total += leaf_obj(sum(g[r] for r in rows), sum(h[r] for r in rows), lam) + gamma
    return total


# -- labeling ------------------------------------------------------------------

def brute_force_labels(records, window_days=90, min_similar=6):
    """O(n^2) similar sets with exact rational means.

    Returns ``{id: (similar_ids, mean, polarity, diff_pct)}`` for labeled records.
    """
    out = {}
    for p in records:
        sims = []
        for q in records:
            if q.id == p.id:
                continue
            if (q.neighbourhood, q.age, q.property_type) != (p.neighbourhood, p.age, p.property_type):
                continue
            if not (p.publish_date - dt.timedelta(days=window_days) <= q.publish_date < p.publish_date):
                continue
            sims.append(q)
        if len(sims) < min_similar:
            continue
        ppa = Fraction(p.price / p.area)
        mean = sum(Fraction(q.price / q.area) for q in sims) / len(sims)
        polarity = 1 if ppa > mean else 0
        out[p.id] = (sorted(q.id for q in sims), mean, polarity, ppa / mean * 100)
    return out


# -- paragraph vectors ---------------------------------------------------------

def softmax_loss_by_hand(W, W_out, W_d, doc, context, target):
    """-log softmax(W_out^T h)[target] with explicit Python sums."""
    n = len(W[0])
    terms = [W[c] for c in context] + [W_d[doc]]
    hvec = [sum(t[k] for t in terms) / len(terms) for k in range(n)]
    V = len(W_out[0])
    u = [sum(W_out[k][j] * hvec[k] for k in range(n)) for j in range(V)]
    m = max(u)
    return m + math.log(sum(math.exp(x - m) for x in u)) - u[target]


def central_difference(f, arr, eps):
    """Numerical gradient of scalar ``f()`` with respect to every entry of ``arr`` (in place)."""
    grad = arr.copy()
    for idx in product(*[range(s) for s in arr.shape]):
        old = arr[idx]
        arr[idx] = old + eps
        up = f()
        arr[idx] = old - eps
        down = f()
        arr[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad
