"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--rows 3000] [--features 60] [--trees 5]

Both paths run in one process: the backend flag only picks the default, and
every kernel entry point accepts an explicit ``use_numba``.  The first numba
call per kernel is a warm-up that absorbs compilation.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from pricepolarity import _accel, pvdm
from pricepolarity.corpus import EncodedMatrix
from pricepolarity.gbt import BoosterConfig, train_ensemble
from pricepolarity.textproc import TokenizedDoc


def _timed(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_gbt(rows, features, trees, repeat):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(rows, features))
    values[:, : features // 2] = np.round(values[:, : features // 2])  # some low-cardinality columns
    mask = rng.random(values.shape) < 0.2
    values[mask] = np.nan
    y = (np.nan_to_num(values[:, 0]) + rng.normal(scale=0.5, size=rows) > 0).astype(int)
    X = EncodedMatrix(values, mask)
    cfg = BoosterConfig(n_trees=trees, max_depth=8)
    results = {}
    for use in (True, False):
        if use:
            warm = train_ensemble(X.take(np.arange(50)), y[:50], BoosterConfig(n_trees=1), use_numba=True)
            warm.predict_margin(X, use_numba=True)
        t_fit, ens = _timed(lambda: train_ensemble(X, y, cfg, use_numba=use), repeat)
        t_pred, margin = _timed(lambda: ens.predict_margin(X, use_numba=use), repeat)
        results[use] = (t_fit, t_pred, margin)
    same = np.array_equal(results[True][2], results[False][2])
    return results, same


def bench_pvdm(docs, length, vocab, dim, repeat):
    rng = np.random.default_rng(0)
    corpus = [TokenizedDoc(i, rng.zipf(1.3, size=length) % vocab) for i in range(docs)]
    cfg = pvdm.PvdmConfig(dim=dim, epochs=1)
    results = {}
    for use in (True, False):
        if use:
            pvdm.train(cfg, corpus[:2], vocab_size=vocab, use_numba=True)
        t, model = _timed(lambda: pvdm.train(cfg, corpus, vocab_size=vocab, use_numba=use), repeat)
        results[use] = (t, model.W_d)
    close = np.allclose(results[True][1], results[False][1], atol=1e-5)
    return results, close


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=3000)
    ap.add_argument("--features", type=int, default=60)
    ap.add_argument("--trees", type=int, default=5)
    ap.add_argument("--docs", type=int, default=300)
    ap.add_argument("--doc-length", type=int, default=40)
    ap.add_argument("--vocab", type=int, default=500)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    res, same = bench_gbt(args.rows, args.features, args.trees, args.repeat)
    print(f"gbt fit   {args.rows}x{args.features}, {args.trees} trees, depth 8")
    for use in (True, False):
        t_fit, t_pred, _ = res[use]
        print(f"  {'numba' if use else 'numpy':5s}  fit {t_fit * 1e3:9.1f} ms   predict {t_pred * 1e3:8.1f} ms")
    print(f"  speedup fit x{res[False][0] / res[True][0]:.1f}, predict x{res[False][1] / res[True][1]:.1f};"
          f" identical margins: {same}")

    res, close = bench_pvdm(args.docs, args.doc_length, args.vocab, args.dim, args.repeat)
    print(f"pvdm epoch {args.docs} docs x {args.doc_length} tokens, dim {args.dim}, negative sampling")
    for use in (True, False):
        print(f"  {'numba' if use else 'numpy':5s}  {res[use][0] * 1e3:9.1f} ms")
    print(f"  speedup x{res[False][0] / res[True][0]:.1f}; doc vectors agree: {close}")


if __name__ == "__main__":
    main()
