"""End-to-end acceptance checks.

Each test prints a single ``criterion N: PASS/FAIL`` line (visible even under
pytest's capture) and then asserts. The full-scale benchmark runs are shared
through a module-scoped fixture so the expensive trainings happen once.
"""

import time

import numpy as np
import pytest
from scipy.stats import norm

from clusterkernel import (
    EnsembleSpec,
    GmmHyperParams,
    GmmParams,
    adjusted_rand_index,
    build_prior,
    clustering_accuracy,
    e_step,
    knn_classify,
    m_step,
    make_var1_benchmark,
    map_objective,
    spectral_cluster,
    train_tck,
)
from clusterkernel.dataset import (
    apply_standardization,
    concatenate_attributes,
    inject_missing,
    pooled_moments,
)
from clusterkernel.ensemble import test_kernel as out_of_sample_kernel
from clusterkernel.gmm import component_log_likelihoods, init_params, moments_from_arrays

from conftest import random_masked_dataset


def announce(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {number}: {detail}"


SEEDS = range(5)


@pytest.fixture(scope="module")
def full_scale():
    """Benchmark pipeline at full scale for five seeds.

    For each seed: standardize with training moments, train the ensemble on
    the clean training split, cluster the training kernel, classify the test
    split, then repeat training/classification with 50% values removed
    uniformly at random from both splits.
    """
    results = []
    clean_train_time = 0.0
    datasets_seed0 = None
    for seed in SEEDS:
        train_raw, test_raw = make_var1_benchmark(seed)
        mean, std = pooled_moments(train_raw)
        dtr = apply_standardization(train_raw, mean, std)
        dte = apply_standardization(test_raw, mean, std)

        t0 = time.perf_counter()
        model, kernel = train_tck(dtr, EnsembleSpec(seed=seed))
        res = spectral_cluster(kernel, 2, seed=seed)
        clean_train_time += time.perf_counter() - t0
        ca = clustering_accuracy(res.labels, dtr.labels)
        ari = adjusted_rand_index(res.labels, dtr.labels)

        kstar = out_of_sample_kernel(model, dte)
        acc0 = float((knn_classify(kstar, dtr.labels) == dte.labels).mean())

        dtr50 = inject_missing(dtr, "MCAR", 0.5, seed=1000 + seed)
        dte50 = inject_missing(dte, "MCAR", 0.5, seed=2000 + seed)
        model50, _ = train_tck(dtr50, EnsembleSpec(seed=seed))
        kstar50 = out_of_sample_kernel(model50, dte50)
        acc50 = float((knn_classify(kstar50, dtr.labels) == dte50.labels).mean())

        results.append({"seed": seed, "ca": ca, "ari": ari,
                        "acc0": acc0, "acc50": acc50})
        if seed == 0:
            datasets_seed0 = (dtr, dte)
    return {"per_seed": results, "clean_train_time": clean_train_time,
            "seed0": datasets_seed0}


# ---------------------------------------------------------------------------


def test_criterion_1_psd_kernel(capsys):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        n = int(rng.integers(10, 61))
        v = int(rng.integers(1, 7))
        t = int(rng.integers(8, 31))
        miss = float(rng.uniform(0.0, 0.5))
        d = random_masked_dataset(rng, n, v, t, missing=miss)
        _, kernel = train_tck(d, EnsembleSpec(q_initializations=2, c_max=5, seed=i))
        k = kernel.entries
        assert np.array_equal(k, k.T)
        eigs = np.linalg.eigvalsh(k)
        ratio = eigs[0] / k.diagonal().max()
        worst = min(worst, ratio)
        assert eigs[0] >= -1e-8 * k.diagonal().max()
    elapsed = time.perf_counter() - t0
    ok = elapsed < 300
    announce(capsys, 1, ok,
             f"50 kernels symmetric, worst min-eig/max-diag {worst:.2e}, {elapsed:.0f}s")


def test_criterion_2_train_test_consistency(capsys):
    rng = np.random.default_rng(202)
    worst = 0.0
    for i in range(10):
        n = int(rng.integers(10, 30))
        v = int(rng.integers(1, 4))
        t = int(rng.integers(8, 20))
        d = random_masked_dataset(rng, n, v, t, missing=float(rng.uniform(0, 0.4)))
        model, kernel = train_tck(d, EnsembleSpec(q_initializations=2, c_max=4, seed=i))
        kstar = out_of_sample_kernel(model, d)
        worst = max(worst, float(np.abs(kstar.entries - kernel.entries).max()))
    announce(capsys, 2, worst <= 1e-12,
             f"max train/test kernel discrepancy {worst:.2e} <= 1e-12")


def test_criterion_3_e_step_oracle(capsys):
    rng = np.random.default_rng(303)
    floor = norm.logpdf(3.0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        v = int(rng.integers(1, 4))
        t = int(rng.integers(1, 5))
        g = int(rng.integers(1, 4))
        x = rng.standard_normal((n, v, t)) * 2.0
        r = (rng.random((n, v, t)) < 0.7).astype(float)
        w = rng.random(g) + 0.1
        params = GmmParams(weights=w / w.sum(),
                           means=rng.standard_normal((g, v, t)),
                           stds=rng.uniform(0.3, 2.0, (g, v)))
        # oracle: per-cell clamped normal log density, direct product over
        # observed cells, softmax with the mixture weights
        want = np.empty((n, g))
        for i in range(n):
            for k in range(g):
                logp = np.log(params.weights[k])
                for a in range(v):
                    for s in range(t):
                        if r[i, a, s] > 0:
                            cell = norm.logpdf(x[i, a, s], loc=params.means[k, a, s],
                                               scale=params.stds[k, a])
                            logp += max(cell, floor)
                want[i, k] = logp
        want = np.exp(want - want.max(axis=1, keepdims=True))
        want /= want.sum(axis=1, keepdims=True)
        got = e_step(x, r, params)
        worst = max(worst, float(np.abs(got - want).max()))
    announce(capsys, 3, worst <= 1e-10,
             f"max posterior deviation {worst:.2e} <= 1e-10 over 100 instances")


def test_criterion_4_m_step_oracle(capsys):
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 6))
        v = int(rng.integers(1, 4))
        t = int(rng.integers(2, 5))
        g = int(rng.integers(1, 4))
        x = rng.standard_normal((n, v, t)) * 1.5
        r = (rng.random((n, v, t)) < 0.8).astype(float)
        r[0] = 1.0  # every (v, t) cell observed at least once
        post = rng.random((n, g))
        post /= post.sum(axis=1, keepdims=True)
        hp = GmmHyperParams(a0=float(rng.uniform(0.05, 0.5)),
                            b0=float(rng.uniform(0.05, 0.5)),
                            n0=float(rng.uniform(0.01, 0.2)))
        pm, sv = moments_from_arrays(x, r)
        prior = build_prior(pm, sv, hp)
        params = GmmParams(weights=np.full(g, 1.0 / g),
                           means=rng.standard_normal((g, v, t)),
                           stds=rng.uniform(0.5, 1.5, (g, v)))
        new = m_step(x, r, post, prior, hp, params)

        theta = post.sum(axis=0) / n
        worst = max(worst, float(np.abs(new.weights - theta).max()))
        for k in range(g):
            for a in range(v):
                s_inv = prior.prior_cov_inv[a]
                inv_var = 1.0 / params.stds[k, a] ** 2  # previous std
                counts = (post[:, k][:, None] * r[:, a, :]).sum(axis=0)
                wsum = (post[:, k][:, None] * r[:, a, :] * x[:, a, :]).sum(axis=0)
                mat = s_inv + inv_var * np.diag(counts)
                rhs = s_inv @ pm[a] + inv_var * wsum
                mu = np.linalg.solve(mat, rhs)
                worst = max(worst, float(np.abs(new.means[k, a] - mu).max()))
                num = hp.n0 * sv[a] ** 2 + (post[:, k][:, None] * r[:, a, :]
                                            * (x[:, a, :] - mu[None, :]) ** 2).sum()
                den = hp.n0 + counts.sum()
                sig = max(np.sqrt(num / den), 1e-6)
                worst = max(worst, float(abs(new.stds[k, a] - sig)))
    announce(capsys, 4, worst <= 1e-10,
             f"max update deviation {worst:.2e} <= 1e-10 over 50 instances")


def test_criterion_5_benchmark_clustering(capsys, full_scale):
    cas = [r["ca"] for r in full_scale["per_seed"]]
    aris = [r["ari"] for r in full_scale["per_seed"]]
    ca_med = float(np.median(cas))
    ari_med = float(np.median(aris))
    elapsed = full_scale["clean_train_time"]
    ok = ca_med >= 0.94 and ari_med >= 0.85 and elapsed < 600
    announce(capsys, 5, ok,
             f"median CA {ca_med:.3f} >= 0.94, median ARI {ari_med:.3f} >= 0.85, "
             f"clean trainings {elapsed:.0f}s < 600s")


def test_criterion_6_benchmark_classification(capsys, full_scale):
    acc0 = float(np.median([r["acc0"] for r in full_scale["per_seed"]]))
    acc50 = float(np.median([r["acc50"] for r in full_scale["per_seed"]]))
    drop = float(np.median([r["acc0"] - r["acc50"] for r in full_scale["per_seed"]]))
    ok = acc0 >= 0.97 and acc50 >= 0.92 and drop <= 0.06
    announce(capsys, 6, ok,
             f"median 1NN accuracy {acc0:.3f} >= 0.97 clean, {acc50:.3f} >= 0.92 "
             f"at 50% missing, median drop {drop:.3f} <= 0.06")


def test_criterion_7_interaction_effect(capsys, full_scale):
    correlated_ari = full_scale["per_seed"][0]["ari"]
    train_raw, _ = make_var1_benchmark(0)
    cat = concatenate_attributes(train_raw)
    mean, std = pooled_moments(cat)
    cat = apply_standardization(cat, mean, std)
    _, kernel = train_tck(cat, EnsembleSpec(seed=0))
    res = spectral_cluster(kernel, 2, seed=0)
    cat_ari = adjusted_rand_index(res.labels, cat.labels)
    margin = correlated_ari - cat_ari
    announce(capsys, 7, margin >= 0.2,
             f"ARI multivariate {correlated_ari:.3f} vs attribute-concatenated "
             f"{cat_ari:.3f}, margin {margin:.3f} >= 0.2")


def test_criterion_8_sensitivity(capsys, full_scale):
    dtr, dte = full_scale["seed0"]
    accs = {(40, 30): full_scale["per_seed"][0]["acc0"]}
    for c_max, q in [(20, 30), (40, 10), (40, 50)]:
        model, _ = train_tck(dtr, EnsembleSpec(q_initializations=q, c_max=c_max, seed=0))
        kstar = out_of_sample_kernel(model, dte)
        accs[(c_max, q)] = float((knn_classify(kstar, dtr.labels) == dte.labels).mean())
    spread = max(accs.values()) - min(accs.values())
    detail = ", ".join(f"C={c} Q={q}: {a:.3f}" for (c, q), a in sorted(accs.items()))
    announce(capsys, 8, spread <= 0.03,
             f"1NN accuracy spread {spread:.3f} <= 0.03 ({detail})")


def test_criterion_9_map_monotonicity(capsys):
    rng = np.random.default_rng(909)
    worst = 0.0
    for trial in range(20):
        n = int(rng.integers(8, 20))
        v = int(rng.integers(1, 4))
        t = int(rng.integers(4, 10))
        g = int(rng.integers(1, 4))
        x = rng.standard_normal((n, v, t))
        r = np.ones_like(x)
        hp = GmmHyperParams(a0=float(rng.uniform(0.05, 0.5)),
                            b0=float(rng.uniform(0.05, 0.5)),
                            n0=float(rng.uniform(0.01, 0.2)))
        pm, sv = moments_from_arrays(x, r)
        prior = build_prior(pm, sv, hp)
        params = init_params(prior, g, np.random.default_rng(trial))

        def posterior(p):
            ll = component_log_likelihoods(x, r, p, clamp=False)
            lp = np.log(p.weights)[None, :] + ll
            lp -= lp.max(axis=1, keepdims=True)
            e = np.exp(lp)
            return e / e.sum(axis=1, keepdims=True)

        prev = map_objective(x, r, params, prior, hp, clamp=False)
        post = posterior(params)
        for _ in range(20):
            params = m_step(x, r, post, prior, hp, params)
            cur = map_objective(x, r, params, prior, hp, clamp=False)
            worst = max(worst, prev - cur)
            assert cur >= prev - 1e-8
            prev = cur
            post = posterior(params)
    announce(capsys, 9, worst <= 1e-8,
             f"worst objective decrease {worst:.2e} <= 1e-8 over 20 fits")
