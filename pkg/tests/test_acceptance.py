"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The end-to-end direction checks (criteria 7 to 10) share one set of trained
models on the desk-scale long-tail scenario: 10 classes, n_max=200,
gamma=0.6, per-view edge quality (0.9, 0.7, 0.85), 32 input features,
seeds 1..5, default training configuration.
"""
import time

import numpy as np
import pytest

from oracles import (dense_forward, joint_mass_fusion, mc_expected_nll, psc_reference, random_graph,
                     random_opinion)
from uclsed import numkit as nk
from uclsed.boundary import MarginPolicy, ucl_loss
from uclsed.encoder import EdgeIndex, TemporalGnnLayer, ViewEncoder, encode
from uclsed.evidential import Opinion, combine_views, dempster_combine, error_loss
from uclsed.graphs import SyntheticConfig, generate_synthetic
from uclsed.harness import TrainConfig, score, train
from uclsed.harness.gradsuite import run_suite

SEEDS = (1, 2, 3, 4, 5)
SCENARIO = SyntheticConfig(classes=10, n_max=200, gamma=0.6, d_in=32, q_hashtag=0.9, q_entity=0.7, q_user=0.85)
VARIANTS = {
    "full": {},
    "psc": {"margin_policy": "none", "lambda1": 0.0},
    "no_euc": {"lambda1": 0.0},
}


def close(m1, m2, tol=1e-9):
    return np.max(np.abs(m1.beliefs - m2.beliefs)) < tol and abs(m1.uncertainty - m2.uncertainty) < tol


def test_criterion_01_opinion_algebra(criteria):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    ok = True
    for k in range(1000):
        c = (2, 3, 4, 10)[k % 4]
        # alternate diffuse and sharp opinions
        sharp = 0.3 if k % 2 else 2.0
        a, b, d = (Opinion(*random_opinion(rng, c, sharp)) for _ in range(3))
        ab = dempster_combine(a, b)
        worst = max(worst, abs(ab.beliefs.sum() + ab.uncertainty - 1.0))
        ok &= abs(ab.beliefs.sum() + ab.uncertainty - 1.0) < 1e-9 and (ab.beliefs >= 0).all()
        ok &= close(dempster_combine(a, Opinion.vacuous(c)), a) and close(dempster_combine(Opinion.vacuous(c), a), a)
        ok &= close(ab, dempster_combine(b, a))
        ok &= close(dempster_combine(ab, d), dempster_combine(a, dempster_combine(b, d)))
    secs = time.perf_counter() - t0
    criteria.record(1, ok and secs < 5, f"1000 pairs/triples, C in (2,3,4,10), max |sum-1|={worst:.1e}, {secs:.2f}s")
    assert ok
    assert secs < 5


def test_criterion_02_fusion_oracle(criteria):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = 0.0
    for k in range(200):
        c = 2 + k % 3
        trio = [random_opinion(rng, c, 0.3 if k % 2 else 1.5) for _ in range(3)]
        b, u = joint_mass_fusion(trio)
        out = combine_views([Opinion(*m) for m in trio])
        worst = max(worst, np.max(np.abs(out.beliefs - b)), abs(out.uncertainty - u))
    secs = time.perf_counter() - t0
    ok = worst < 1e-9 and secs < 10
    criteria.record(2, ok, f"200 instances, C<=4, max abs diff {worst:.1e}, {secs:.2f}s")
    assert worst < 1e-9
    assert secs < 10


def test_criterion_03_error_loss_oracle(criteria):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_mc = 0.0
    for _ in range(20):
        c = int(rng.integers(2, 6))
        alpha = 1.0 + rng.exponential(3.0, size=c)
        y = int(rng.integers(0, c))
        closed = float(error_loss(alpha, [y]).data)
        worst_mc = max(worst_mc, abs(closed - mc_expected_nll(alpha, y, 1_000_000, rng)))
    hand = [([2.0, 1.0, 1.0], 5 / 6), ([1.0, 1.0, 1.0], 1.5), ([101.0, 1.0, 1.0], 1 / 101 + 1 / 102)]
    worst_hand = max(abs(float(error_loss(np.array(a), [0]).data) - v) for a, v in hand)
    secs = time.perf_counter() - t0
    ok = worst_mc < 1e-2 and worst_hand < 1e-10 and secs < 60
    criteria.record(3, ok, f"MC max abs diff {worst_mc:.1e} (20 alphas, 1e6 draws), "
                           f"hand values {worst_hand:.1e}, {secs:.1f}s")
    assert worst_mc < 1e-2
    assert worst_hand < 1e-10
    assert secs < 60


def test_criterion_04_gradient_suite(criteria):
    t0 = time.perf_counter()
    results = run_suite(seed=4, tol=1e-4)
    secs = time.perf_counter() - t0
    failed = [name for name, r in results if not r.passed]
    worst = max(r.worst for _, r in results)
    names = [name for name, _ in results]
    assert {"ucl[none]", "ucl[fixed]", "ucl[error_rate]", "ucl[uncertainty]", "error", "euc", "common",
            "total[learned]", "total[centroid]"} <= set(names)
    criteria.record(4, not failed and secs < 60,
                    f"{len(results)} checks, worst rel error {worst:.1e}, failing {failed}, {secs:.1f}s")
    assert not failed
    assert secs < 60


def test_criterion_05_reduction_identities(criteria):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        c, n, d = int(rng.integers(2, 7)), int(rng.integers(1, 12)), 5
        z = rng.standard_normal((n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        protos = rng.standard_normal((c, d))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        labels = rng.integers(0, c, n)
        ref = psc_reference(z, labels, protos)
        beta0 = MarginPolicy("uncertainty", beta=0.0).margins(c, rng.uniform(size=c))
        u0 = MarginPolicy("uncertainty", beta=0.1).margins(c, np.zeros(c))
        for m in (beta0, u0, None):
            worst = max(worst, abs(float(ucl_loss(z, labels, protos, m).data) - ref))

    ds = generate_synthetic(SCENARIO, seed=1)
    a = train(ds, TrainConfig(epochs=5, seed=1, lambda1=0.0, lambda2=0.0, lambda3=0.0))
    b = train(ds, TrainConfig(epochs=5, seed=1, error_only=True))
    same = ([r["loss_error"] for r in a.history] == [r["loss_error"] for r in b.history]
            and [r["val_acc"] for r in a.history] == [r["val_acc"] for r in b.history])
    ok = worst < 1e-9 and same
    criteria.record(5, ok, f"UCL(beta=0 / u=0) vs PSC max diff {worst:.1e}; zero-weight trace "
                           f"{'identical' if same else 'differs'} to L_Error-only trace")
    assert worst < 1e-9
    assert same


def test_criterion_06_encoder_oracle(criteria):
    rng = np.random.default_rng(31)
    worst, worst_sum = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(1, 33))
        g = random_graph(rng, n, vocab=int(rng.integers(2, 8)))
        enc = ViewEncoder(5, hidden_dims=(7, 4), rng=rng)
        x = rng.standard_normal((n, 5))
        worst = max(worst, float(np.max(np.abs(encode(g, x, enc).data - dense_forward(g, x, enc)))))
        edges = EdgeIndex(g)
        layer = TemporalGnnLayer(5, 3, rng=rng)
        a = layer.attention(edges, nk.as_tensor(x) @ layer.W).data[:, 0]
        worst_sum = max(worst_sum, float(np.max(np.abs(np.bincount(edges.rows, a, n) - 1.0))))
    ok = worst < 1e-9 and worst_sum < 1e-9
    criteria.record(6, ok, f"50 graphs <=32 nodes, max abs diff {worst:.1e}, attention row-sum error {worst_sum:.1e}")
    assert worst < 1e-9
    assert worst_sum < 1e-9


@pytest.fixture(scope="module")
def scenario_runs():
    runs = {}
    t0 = time.perf_counter()
    for seed in SEEDS:
        ds = generate_synthetic(SCENARIO, seed=seed)
        per = {"dataset": ds}
        for name, kw in VARIANTS.items():
            res = train(ds, TrainConfig(seed=seed, **kw))
            per[name] = (res, res.model.infer(ds))
        runs[seed] = per
    runs["seconds"] = time.perf_counter() - t0
    return runs


def split_report(per, name, grouping_table):
    ds = per["dataset"]
    _, inf = per[name]
    idx = ds.test_idx
    return score(inf.preds[idx], ds.labels[idx], inf.uncertainty[idx], ds.num_classes, grouping_table)


@pytest.mark.slow
def test_criterion_07_uncertain_group_direction(scenario_runs, criteria):
    wins, rows = 0, []
    f1_full, f1_psc = [], []
    for seed in SEEDS:
        per = scenario_runs[seed]
        # both models are scored on the same class tertiles: those of the full model's training table
        table = per["full"][0].table.values
        full, psc = split_report(per, "full", table), split_report(per, "psc", table)
        uf, up = full.group_metrics["uncertain"]["f1"], psc.group_metrics["uncertain"]["f1"]
        wins += uf > up
        f1_full.append(full.macro_f1)
        f1_psc.append(psc.macro_f1)
        rows.append(f"s{seed}:{uf:.3f}/{up:.3f}")
    overall = np.mean(f1_full) >= np.mean(f1_psc)
    minutes = scenario_runs["seconds"] / 60
    # the shared fixture trains all three variants; the two compared here are two thirds of it
    ok = wins >= 4 and overall and minutes * 2 / 3 < 15
    criteria.record(7, ok, f"uncertain-tertile F1 full/psc {' '.join(rows)} -> {wins}/5 wins; "
                           f"mean macro-F1 {np.mean(f1_full):.4f} vs {np.mean(f1_psc):.4f}; "
                           f"{minutes * 2 / 3:.1f} min")
    assert wins >= 4
    assert overall
    assert minutes * 2 / 3 < 15


@pytest.mark.slow
def test_criterion_08_calibration_ablation_direction(scenario_runs, criteria):
    wins, rows = 0, []
    for seed in SEEDS:
        per = scenario_runs[seed]
        table = per["full"][0].table.values
        full, ablated = split_report(per, "full", table), split_report(per, "no_euc", table)
        wins += full.accuracy > ablated.accuracy
        rows.append(f"s{seed}:{full.accuracy:.3f}/{ablated.accuracy:.3f}")
    ok = wins >= 4
    criteria.record(8, ok, f"test ACC full/without-calibration {' '.join(rows)} -> {wins}/5 degrade")
    assert wins >= 4


@pytest.mark.slow
def test_criterion_09_uncertainty_of_errors(scenario_runs, criteria):
    wins, rows = 0, []
    for seed in SEEDS:
        per = scenario_runs[seed]
        ds = per["dataset"]
        _, inf = per["full"]
        v = ds.val_idx
        correct = inf.preds[v] == ds.labels[v]
        gap = inf.uncertainty[v][~correct].mean() - inf.uncertainty[v][correct].mean()
        wins += gap > 0
        rows.append(f"s{seed}:{gap:+.4f}")
    ok = wins >= 4
    criteria.record(9, ok, f"val mean u(wrong) - u(correct) {' '.join(rows)} -> {wins}/5 positive")
    assert wins >= 4


@pytest.mark.slow
def test_criterion_10_determinism(scenario_runs, criteria):
    per = scenario_runs[SEEDS[0]]
    first, _ = per["full"]
    again = train(generate_synthetic(SCENARIO, seed=SEEDS[0]), TrainConfig(seed=SEEDS[0]))
    strip = lambda h: [{k: v for k, v in row.items() if k != "seconds"} for row in h]
    same_log = strip(first.history) == strip(again.history)
    table = first.table.values
    m1 = split_report(per, "full", table).to_dict()
    inf2 = again.model.infer(per["dataset"])
    idx = per["dataset"].test_idx
    m2 = score(inf2.preds[idx], per["dataset"].labels[idx], inf2.uncertainty[idx], 10, again.table.values).to_dict()
    same_params = all(p.data.tobytes() == q.data.tobytes()
                      for p, q in zip(first.model.parameters(), again.model.parameters()))
    ok = same_log and m1 == m2 and same_params
    criteria.record(10, ok, f"epoch logs {'identical' if same_log else 'differ'}, "
                            f"metrics {'identical' if m1 == m2 else 'differ'}, "
                            f"parameters {'bit-identical' if same_params else 'differ'}")
    assert same_log
    assert m1 == m2
    assert same_params
