"""Acceptance criteria 1-9; each test prints one PASS/FAIL line."""
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import (
    best_split, best_stump_objective, brute_force_labels, central_difference, enumerate_splits, leaf_obj,
    softmax_loss_by_hand, tree_objective,
)
from pricepolarity import analysis, synth
from pricepolarity.cli import main
from pricepolarity.corpus import EncodedMatrix, split_train_test
from pricepolarity.gbt import BoosterConfig, find_best_split, grow_tree, leaf_weight, split_gain
from pricepolarity.labeling import build_labeled_dataset
from pricepolarity.pvdm import (
    PvdmConfig, full_softmax_gradients, init_model, iter_samples, predict_distribution, softmax,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def test_criterion_1_gradient_check(report):
    t0 = time.perf_counter()
    model = init_model(PvdmConfig(dim=3, context=2, seed=0), 5, 2, dtype=np.float64)
    rng = np.random.default_rng(0)
    for arr in (model.W, model.W_out, model.W_d):
        arr[:] = rng.normal(scale=0.5, size=arr.shape)
    before, after = PvdmConfig(context=2).context_split()
    samples = [s for d, toks in enumerate([[0, 1, 2, 3, 4, 1], [4, 3, 3, 0, 2]])
               for s in iter_samples(toks, d, before, after)]

    def total():
        return sum(softmax_loss_by_hand(model.W.tolist(), model.W_out.tolist(), model.W_d.tolist(),
                                        s.doc, list(s.context), s.target) for s in samples)

    worst = 0.0
    grads = {k: np.zeros_like(getattr(model, k)) for k in ("W", "W_out", "W_d")}
    for s in samples:
        for k, g in full_softmax_gradients(model, s)[1].items():
            grads[k] += g
    for k, g in grads.items():
        num = central_difference(total, getattr(model, k), 1e-4)
        rel = np.abs(g - num) / np.maximum(np.abs(g) + np.abs(num), 1e-12)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-5 and elapsed < 1.0, f"max rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_softmax_contract(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    model = init_model(PvdmConfig(dim=4), 7, 1, dtype=np.float64)
    worst_sum = worst_shift = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        u = rng.normal(scale=rng.choice([1.0, 10.0, 100.0]), size=n)
        shift = rng.uniform(-500, 500)
        p = softmax(u)
        worst_sum = max(worst_sum, abs(p.sum() - 1.0))
        worst_shift = max(worst_shift, float(np.abs(softmax(u + shift) - p).max()))
        assert np.all(p >= 0)
    # the model-level entry point too
    model.W_out[:] = rng.normal(size=model.W_out.shape)
    for _ in range(100):
        h = rng.normal(size=4)
        worst_sum = max(worst_sum, abs(predict_distribution(model, h).sum() - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_sum <= 1e-12 and worst_shift <= 1e-12 and elapsed < 1.0
    report(2, ok, f"sum err {worst_sum:.1e}, shift err {worst_shift:.1e}, {elapsed:.2f}s")


def _instance(rng):
    n, m = int(rng.integers(2, 21)), int(rng.integers(1, 6))
    vals = rng.integers(0, 5, size=(n, m)).astype(float) + rng.choice([0.0, 0.25])
    mask = rng.random((n, m)) < rng.uniform(0, 0.3)
    vals[mask] = np.nan
    return EncodedMatrix(vals, mask), rng.normal(size=n), rng.uniform(0.01, 1.0, size=n)


def test_criterion_3_gbt_oracle_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    bad = []
    for i in range(100):
        X, g, h = _instance(rng)
        lam, gamma = float(rng.choice([0.0, 1.0, 3.0])), float(rng.choice([0.0, 0.05]))
        rows = list(range(X.n_rows))
        vals, miss, gl, hl = X.values.tolist(), X.missing_mask.tolist(), g.tolist(), h.tolist()
        ref = best_split(vals, miss, gl, hl, rows, lam, gamma)
        got = find_best_split(rows, (g, h), X, lam, gamma)
        if (ref is None) != (got is None):
            bad.append((i, "split presence"))
        elif ref is not None:
            table = {(c[0], c[1], c[2]): c[3] for c in enumerate_splits(vals, miss, gl, hl, rows, lam, gamma)}
            key = (got.feature, got.threshold, got.default_left)
            if key not in table or abs(table[key] - ref[3]) > 1e-10 or abs(got.gain - ref[3]) > 1e-10:
                bad.append((i, "split"))
        mch = float(rng.choice([0.0, 0.3]))
        tree = grow_tree(rows, (g, h), X, BoosterConfig(max_depth=2, reg_lambda=lam, gamma=gamma,
                                                        min_child_hessian=mch))
        leaves = tree.apply(X)
        obj = tree_objective([np.flatnonzero(leaves == v).tolist() for v in np.unique(leaves)], gl, hl, lam, gamma)
        if abs(obj - best_stump_objective(vals, miss, gl, hl, rows, lam, gamma, mch)) > 1e-10:
            bad.append((i, "depth-2 objective"))
    elapsed = time.perf_counter() - t0
    report(3, not bad and elapsed < 30, f"{100 - len(bad)}/100 instances agree, {elapsed:.2f}s")


def test_criterion_4_leaf_weight_optimality(report):
    rng = np.random.default_rng(4)
    fails = 0
    worst = 0.0
    for _ in range(1000):
        G, H, lam = rng.normal(scale=10), rng.uniform(0, 20), rng.uniform(0.01, 5)
        w = leaf_weight(G, H, lam)

        def q(x):
            return G * x + 0.5 * (H + lam) * x * x

        fails += not (q(w) < q(w + 1e-3) and q(w) < q(w - 1e-3))
        gl, gr = rng.normal(scale=5, size=2)
        hl, hr = rng.uniform(0, 10, size=2)
        gamma = rng.uniform(0, 1)
        reduction = leaf_obj(gl + gr, hl + hr, lam) - leaf_obj(gl, hl, lam) - leaf_obj(gr, hr, lam) - gamma
        worst = max(worst, abs(split_gain(gl, hl, gr, hr, lam, gamma) - reduction))
    report(4, fails == 0 and worst <= 1e-10, f"{fails} weight failures, gain err {worst:.1e}")


def test_criterion_5_labeling_oracle(report):
    records, _ = synth.generate_corpus(synth.SynthConfig(n_properties=500, n_neighbourhoods=2, seed=11))
    t0 = time.perf_counter()
    ours = {lp.record_id: lp for lp in build_labeled_dataset(records).labeled}
    elapsed = time.perf_counter() - t0
    ref = brute_force_labels(records)
    bad = set(ours) ^ set(ref)
    for rid, (sims, mean, pol, diff) in ref.items():
        lp = ours.get(rid)
        if lp is None:
            continue
        if (lp.similar_count != len(sims) or lp.polarity != pol
                or abs(lp.similar_mean_price_per_area - float(mean)) > 1e-9 * float(mean)
                or abs(lp.price_diff_pct - float(diff)) > 1e-9):
            bad.add(rid)
    report(5, not bad and len(ref) > 0 and elapsed < 5,
           f"{len(ref)} labeled, {len(bad)} mismatches, {elapsed:.2f}s")


def _chi2_direct(a, b, c, d):
    n = a + b + c + d
    den = (a + b) * (c + d) * (a + c) * (b + d)
    return 0.0 if den == 0 else float(Fraction(n * (a * d - b * c) ** 2, den))


@pytest.fixture(scope="module")
def default_corpus():
    records, truth = synth.generate_corpus(synth.SynthConfig())
    return analysis.prepare_corpus(records)


def test_criterion_6_chi2(report, default_corpus):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        a, b, c, d = (int(v) for v in rng.integers(0, rng.choice([5, 50, 500]), size=4))
        ref = _chi2_direct(a, b, c, d)
        worst = max(worst, abs(analysis.chi2_statistic(a, b, c, d) - ref) / max(1.0, ref))
    corp = default_corpus
    top = [corp.vocab.tokens[s.token] for s in analysis.chi2_tokens(corp.docs, corp.labels, len(corp.vocab))[:5]]
    report(6, worst <= 1e-10 and "piscin" in top, f"formula err {worst:.1e}, top5 {top}")


@pytest.fixture(scope="module")
def trend_run(default_corpus):
    t0 = time.perf_counter()
    corp = default_corpus
    split = split_train_test(len(corp), 0.75, 0)
    booster = BoosterConfig()
    feat = analysis.run_experiment(analysis.FEATURES_ONLY, corp.labels, None, corp.features, split, booster)
    out = {"feat": feat}
    for dim in (2, 64):
        vecs = analysis.embed_documents(corp, PvdmConfig(dim=dim), analysis.TRANSDUCTIVE, split[0])
        out[f"d2v{dim}"] = analysis.run_experiment(analysis.DOC2VEC_ONLY, corp.labels, vecs, None, split, booster)
        if dim == 64:
            out["comb"] = analysis.run_experiment(analysis.COMBINED, corp.labels, vecs, corp.features, split, booster)
    y = corp.labels[split[1]]
    out["binned"] = analysis.binned_accuracy(corp.diff_pcts[split[1]], out["comb"].predictions, y)
    out["agree"] = analysis.agreement_stats(out["d2v64"].predictions, feat.predictions, y)
    out["seconds"] = time.perf_counter() - t0
    return out


def test_criterion_7_trend_reproduction(report, trend_run):
    r = trend_run
    acc = r["binned"].accuracies
    ag = r["agree"]
    feat, d2, d64, comb = r["feat"].accuracy, r["d2v2"].accuracy, r["d2v64"].accuracy, r["comb"].accuracy
    checks = {
        "a": feat >= 0.65,
        "b": d64 - d2 >= 0.05,
        "c": comb >= feat - 0.01,
        "d": min(acc[0], acc[-1]) > max(acc[9], acc[10]),
        "e": ag.pct_both_wrong == ag.pct_same - ag.pct_both_correct,
        "time": r["seconds"] <= 600,
    }
    detail = (f"feat {feat:.3f}, d2v@2 {d2:.3f}, d2v@64 {d64:.3f}, comb {comb:.3f}, "
              f"tails {acc[0]:.2f}/{acc[-1]:.2f} vs centre {acc[9]:.2f}/{acc[10]:.2f}, "
              f"both wrong {ag.pct_both_wrong:.2f}%, {r['seconds']:.0f}s; failed: "
              f"{[k for k, v in checks.items() if not v] or 'none'}")
    report(7, all(checks.values()), detail)


PIPELINE = [
    ["synth", "--n-properties", "1500", "--n-neighbourhoods", "4"],
    ["label"],
    ["embed"],
    ["train"],
    ["eval"],
    ["chi2"],
    ["profile-length"],
    ["sweep-dim", "--dims", "2,16"],
    ["sweep-min-tokens", "--mins", "0,10", "--dim", "16"],
]


def _csv_bodies(wd):
    return {p.name: "".join(l for l in p.read_text().splitlines(True) if not l.startswith("#"))
            for p in sorted(wd.glob("*.csv"))}


def test_criterion_8_determinism(report, tmp_path):
    runs = []
    for name in ("first", "second"):
        wd = tmp_path / name
        wd.mkdir()
        codes = [main(step + ["--workdir", str(wd)]) for step in PIPELINE]
        assert codes == [0] * len(PIPELINE), codes
        heads = {p.name: p.read_text().splitlines()[0] for p in wd.glob("*.csv")}
        runs.append((_csv_bodies(wd), heads))
    (b1, h1), (b2, h2) = runs
    expected = {"labeled.csv", "eval.csv", "binned.csv", "agreement.csv", "chi2.csv", "length_profile.csv",
                "sweep_dim.csv", "sweep_min_tokens.csv"}
    ok = b1 == b2 and h1 == h2 and set(b1) == expected
    report(8, ok, f"{len(b1)} CSV files, bodies identical: {b1 == b2}, manifest lines identical: {h1 == h2}")


def test_criterion_9_min_token_stability(report, default_corpus):
    rows = analysis.sweep_min_tokens(default_corpus, [0, 5, 10, 20], PvdmConfig(), dim=64)
    accs = [row["acc_feat"] for row in rows]
    spread = max(accs) - min(accs)
    report(9, spread <= 0.03, f"features_only {[round(a, 4) for a in accs]}, range {spread * 100:.2f} points")
