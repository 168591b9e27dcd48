"""Acceptance criteria, each checked at its stated tolerance.

Run with pytest, or directly (``python tests/test_acceptance.py``) to get
one PASS/FAIL line per criterion.
"""

import itertools
import json
import time

import networkx as nx
import numpy as np
import pytest

from conftest import ACCEPTANCE
from gridcct import experiments as ex
from gridcct.attack import attack_vectors, build_attack, enumerate_connected_subsets
from gridcct.attack import image_residual, stealthiness_check
from gridcct.case_io import GridCase, load_case
from gridcct.cct import tune_threshold
from gridcct.cli import main as cli_main
from gridcct.detect import conditional_kl
from gridcct.errors import TuningError
from gridcct.gmrf import (
    conditional_covariance_exact,
    precision_from_b,
    predicted_markov_graph,
    sample_gmrf,
    walk_summability_alpha,
)
from gridcct.grid_model import build_susceptance_matrix, hop_distances
from gridcct.stream_cov import CovAccumulator, conditional_covariance

CASES = ("case14", "case30")


def _model(name):
    sm = build_susceptance_matrix(load_case(name))
    return sm, precision_from_b(sm)


def criterion_1():
    """Exact covariance, first-neighbor reference, eta=2: tuned edit distance 0 in < 1 min."""
    ok, parts = True, []
    for name in CASES:
        sm, model = _model(name)
        t0 = time.perf_counter()
        try:
            res = tune_threshold(model.covariance, predicted_markov_graph(model), 2,
                                 variables=sm.variables)
        except TuningError as exc:
            res = exc.result
        dt = time.perf_counter() - t0
        ok &= res.distance == 0 and dt < 60
        parts.append(f"{name}: distance={res.distance} gap={res.witness_gap:.3g} "
                     f"misordered={res.misordered_pairs} t={dt:.1f}s")
    return ok, "; ".join(parts)


def _random_connected(n, rng):
    while True:
        g = nx.gnp_random_graph(n, min(1.0, 3.0 / n), seed=int(rng.integers(2**31)))
        if nx.is_connected(g):
            break
    branches = [(u + 1, v + 1, float(rng.uniform(1, 30))) for u, v in g.edges]
    return GridCase([(i + 1, 1) for i in range(n)], branches, 1)


def criterion_2():
    """|J_ij| <= 1e-9 whenever hop distance > 2 (bundled + 20 random graphs)."""
    rng = np.random.default_rng(2)
    cases = [load_case(c) for c in CASES]
    cases += [_random_connected(int(rng.integers(10, 41)), rng) for _ in range(20)]
    worst = 0.0
    for case in cases:
        sm = build_susceptance_matrix(case)
        J = precision_from_b(sm).J
        D = hop_distances(case)[np.ix_(sm.keep, sm.keep)]
        worst = max(worst, float(np.abs(J[D > 2]).max(initial=0.0)))
    return worst <= 1e-9, f"{len(cases)} graphs, max |J_ij| beyond two hops = {worst:.3g}"


def criterion_3():
    """Walk-summability alpha < 1 on both bundled cases."""
    alphas = {name: walk_summability_alpha(_model(name)[1].R) for name in CASES}
    return all(a < 1 for a in alphas.values()), ", ".join(
        f"{k}: alpha={v:.4f}" for k, v in alphas.items())


def _sweep_rates(manifest):
    tuned = ex.tune(manifest)
    rows = ex.sweep(manifest, tuned)
    return {c["corrupted_samples"]: c for c in ex.aggregate_curve(rows)}, tuned


def criterion_4():
    """IEEE-14: detection >= 0.80 at 30 corrupted samples and >= 0.95 at 130, < 15 min."""
    m = ex.ExperimentManifest(case="case14", seed=1, attack=ex.AttackSweep(
        kmin=2, subsets_per_k=5, reps=100, corrupted=[0, 30, 130]))
    t0 = time.perf_counter()
    curve, tuned = _sweep_rates(m)
    dt = time.perf_counter() - t0
    r = {c: curve[c]["detection_rate"] for c in curve}
    ok = r[30] >= 0.80 and r[130] >= 0.95 and dt < 900
    return ok, (f"rate@0={r[0]:.3f} rate@30={r[30]:.3f} rate@130={r[130]:.3f} "
                f"trials/point={curve[30]['trials']} clean D={tuned['global']['edit_distance']} "
                f"tol={tuned['global']['tolerance']} t={dt:.0f}s")


def criterion_5():
    """IEEE-30: detection >= 0.95 at 50 corrupted samples."""
    m = ex.ExperimentManifest(case="case30", seed=1, attack=ex.AttackSweep(
        kmin=2, subsets_per_k=2, reps=100, corrupted=[0, 50]))
    curve, tuned = _sweep_rates(m)
    r = {c: curve[c]["detection_rate"] for c in curve}
    return r[50] >= 0.95, (f"rate@0={r[0]:.3f} rate@50={r[50]:.3f} "
                           f"trials/point={curve[50]['trials']} "
                           f"tol={tuned['global']['tolerance']}")


def criterion_6():
    """IEEE-14 {4,5,6}, size 0.7: top-3 in >= 95% and exact flag at 0.3 in >= 95% of 100 reps."""
    m = ex.ExperimentManifest(case="case14", seed=1, anomaly=ex.AnomalyConfig(
        attacked=[4, 5, 6], sizes=[0.7], reps=100))
    res = ex.anomaly(m)["results"][0]
    ok = res["top_k_rate"] >= 0.95 and res["exact_flag_rate"] >= 0.95
    return ok, (f"top3_rate={res['top_k_rate']:.2f} exact_flag_rate={res['exact_flag_rate']:.2f} "
                f"false_flag_rate={res['false_flag_rate']:.3f}")


def criterion_7():
    """Every attack: ||(I - HH+)a|| <= 1e-9 and residual change <= 1e-9."""
    rng = np.random.default_rng(7)
    worst_img = worst_res = 0.0
    count = 0
    for name, kmax in (("case14", 6), ("case30", 4)):
        case = load_case(name)
        sm = build_susceptance_matrix(case)
        for i, subset in enumerate(enumerate_connected_subsets(case, 2, kmax)):
            spec = build_attack(sm, subset, float(rng.uniform(0.1, 2.0)), 5, [7, i])
            a = attack_vectors(spec, sm)
            z = rng.normal(size=a.shape)
            worst_img = max(worst_img, image_residual(a, sm))
            worst_res = max(worst_res, stealthiness_check(z + a, sm, z))
            count += 1
    ok = worst_img <= 1e-9 and worst_res <= 1e-9
    return ok, f"{count} attacks, max image residual={worst_img:.2g}, max delta={worst_res:.2g}"


def criterion_8():
    """1000 streamed updates vs batch <= 1e-10 Frobenius; conditionals vs Schur <= 1e-9."""
    rng = np.random.default_rng(8)
    _, model = _model("case14")
    frob = 0.0
    for X in (sample_gmrf(model, n=1000, seed=8).values,
              rng.normal(size=(1000, 10)) @ rng.normal(size=(10, 10)) + 5.0):
        acc = CovAccumulator(X.shape[1])
        for x in X:
            acc.update(x)
        frob = max(frob, float(np.linalg.norm(acc.covariance() - np.cov(X, rowvar=False))))
    worst = 0.0
    for name in CASES:
        Sigma = _model(name)[1].covariance
        p = len(Sigma)
        for _ in range(300):
            i, j, *S = (int(v) for v in rng.choice(p, 2 + int(rng.integers(0, 4)), replace=False))
            worst = max(worst, abs(conditional_covariance(Sigma, i, j, S)
                                   - conditional_covariance_exact(Sigma, i, j, S)))
    return frob <= 1e-10 and worst <= 1e-9, f"frobenius={frob:.2g}, conditional max err={worst:.2g}"


def _mc_conditional_kl(J_a, J_b, n, rng):
    """Monte Carlo E_A[log A(x_i|x_-i) - log B(x_i|x_-i)] from joint samples."""
    k = len(J_a)
    X = rng.multivariate_normal(np.zeros(k), np.linalg.inv(J_a), size=n)

    def cond_logpdf(J):
        lam = np.diag(J)
        mu = -(X @ J - X * lam) / lam
        return 0.5 * np.log(lam / (2 * np.pi)) - 0.5 * lam * (X - mu) ** 2

    L = cond_logpdf(J_a) - cond_logpdf(J_b)
    return L.mean(axis=0), L.std(axis=0, ddof=1) / np.sqrt(n)


def criterion_9():
    """Closed-form conditional KL within 3 standard errors of Monte Carlo on 20 PD pairs."""
    rng = np.random.default_rng(9)
    worst, total = 0.0, 0
    for _ in range(20):
        k = int(rng.integers(2, 11))
        mats = []
        for _ in range(2):
            A = rng.normal(size=(k, k))
            mats.append(A @ A.T + 0.5 * k * np.eye(k))
        J_a, J_b = mats
        d = conditional_kl(J_a, np.linalg.inv(J_a), J_b)
        mc, se = _mc_conditional_kl(J_a, J_b, 200_000, rng)
        worst = max(worst, float(np.max(np.abs(d - mc) / se)))
        total += k
    return worst <= 3, f"{total} per-variable scores, max |closed - MC| = {worst:.2f} SE"


def _cli_outputs(root, manifest_doc, tag):
    out = root / tag
    mpath = root / f"{tag}.json"
    mpath.write_text(json.dumps(manifest_doc))
    base = ["--manifest", str(mpath), "--out", str(out)]
    for argv in (["tune"], ["sweep", "--no-svg"], ["anomaly", "--no-svg"],
                 ["simulate", "-n", "200", "--attacked", "4,5,6", "--corrupted", "50"]):
        assert cli_main(argv[:1] + base + argv[1:]) == 0
    return {f: (out / f).read_bytes() for f in
            ("sweep.csv", "sweep_curve.csv", "anomaly.csv", "samples.csv")}


def criterion_10(tmp_root):
    """Identical manifest + seed give byte-identical CSVs (also across worker counts)."""
    doc = {"case": "case14", "seed": 5, "calibration_windows": 5,
           "attack": {"kmax": 4, "subsets_per_k": 2, "reps": 5, "corrupted": [0, 30]},
           "anomaly": {"reps": 5}}
    a = _cli_outputs(tmp_root, doc, "a")
    b = _cli_outputs(tmp_root, doc, "b")
    c = _cli_outputs(tmp_root, {**doc, "jobs": 2}, "c")
    same = all(a[f] == b[f] for f in a)
    par = all(a[f] == c[f] for f in a)
    return same and par, f"{len(a)} CSVs identical across runs={same}, across jobs={par}"


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}


def _record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


@pytest.mark.parametrize("n", list(range(1, 10)))
def test_criterion(n):
    ok, detail = CRITERIA[n]()
    assert _record(n, ok, detail), detail


def test_criterion_10(tmp_path):
    ok, detail = criterion_10(tmp_path)
    assert _record(10, ok, detail), detail


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for n, fn in CRITERIA.items():
        if n == 10:
            with tempfile.TemporaryDirectory() as d:
                _record(n, *fn(Path(d)))
        else:
            _record(n, *fn())
