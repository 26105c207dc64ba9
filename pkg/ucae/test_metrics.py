"""
Tests for OT distances, the MMD permutation test and the consistency/bound checkers.
"""

from itertools import permutations

import numpy as np
import pytest

from ucae.domain_model import oracle_domain_model, with_latent_shift
from ucae.errors import BudgetError, ConvergenceError, DimensionError, PreconditionError
from ucae.linalg import Rng
from ucae.metrics import (EXACT_OT_BUDGET, CheckConfig, check_global_consistency, check_path_consistency,
                          check_transport_bound, cluster_agreement, empirical_lipschitz, latent_feature_correlation,
                          latent_prior_test, mmd_test, reconstruction_report, sinkhorn_divergence, translation_grid,
                          wasserstein1, wasserstein1_exact)
from ucae.sem_world import make_sem, sample_coupled

SMALL = CheckConfig(eval_samples=200, n_permutations=200, alpha=0.01, bound_samples=300)


def brute_force_w1(a, b):
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    n = a.shape[0]
    return min(cost[np.arange(n), list(p)].mean() for p in permutations(range(n)))


def test_w1_identical_measures_is_zero(rng):
    a = rng.normal(20, 3)
    assert wasserstein1_exact(a, a) == 0.0
    assert wasserstein1_exact(a, a[::-1]) == 0.0


def test_w1_two_diracs():
    assert wasserstein1_exact(np.array([[0.0]]), np.array([[3.0]])) == 3.0


def test_w1_matches_factorial_brute_force():
    for t in range(200):
        r = Rng(77).split(f"instance-{t}")
        n = 1 + int(r.split("n").integers(6, 1)[0])
        a, b = r.split("a").normal(n, 1), r.split("b").normal(n, 1)
        assert wasserstein1_exact(a, b) == pytest.approx(brute_force_w1(a, b), abs=1e-12)


def test_w1_budget_and_shape_guards(rng):
    with pytest.raises(DimensionError):
        wasserstein1_exact(rng.normal(3, 2), rng.normal(4, 2))
    big = np.zeros((EXACT_OT_BUDGET + 1, 1))
    with pytest.raises(BudgetError):
        wasserstein1_exact(big, big)


def test_sinkhorn_divergence_of_identical_sets_is_zero(rng):
    a = rng.normal(30, 2)
    assert abs(sinkhorn_divergence(a, a, 0.1)) < 1e-9


def test_sinkhorn_divergence_is_symmetric(rng):
    a, b = rng.split("a").normal(30, 2), rng.split("b").normal(25, 2) + 1.0
    assert abs(sinkhorn_divergence(a, b, 0.1) - sinkhorn_divergence(b, a, 0.1)) < 1e-9


def test_sinkhorn_close_to_exact_w1(rng):
    a = rng.split("a").normal(64, 1)
    b = rng.split("b").normal(64, 1) + 2.0
    exact = wasserstein1_exact(a, b)
    approx = sinkhorn_divergence(a, b, 1e-3)
    assert abs(approx - exact) <= 0.02 * exact


def test_sinkhorn_self_terms_converge_at_small_epsilon(rng):
    a = rng.split("a").normal(64, 2)
    assert abs(sinkhorn_divergence(a, a.copy(), 1e-3)) < 1e-6


def test_sinkhorn_reports_an_exhausted_budget(rng):
    a, b = rng.split("a").normal(64, 1), rng.split("b").normal(64, 1) + 2.0
    with pytest.raises(ConvergenceError):
        sinkhorn_divergence(a, b, 1e-3, max_iter=1, tol=1e-15)


def test_sinkhorn_rejects_nonpositive_epsilon(rng):
    with pytest.raises(ValueError):
        sinkhorn_divergence(rng.normal(3, 1), rng.normal(3, 1), 0.0)


def test_wasserstein1_dispatches_to_exact(rng):
    a, b = rng.split("a").normal(40, 2), rng.split("b").normal(40, 2)
    assert wasserstein1(a, b) == wasserstein1_exact(a, b)


def test_wasserstein1_of_unequal_sizes_recovers_a_translation(rng):
    # both sets are uniform measures on the same 50 points, one shifted by 3
    base = rng.normal(50, 2)
    a = np.tile(base, (6, 1))
    b = np.tile(base, (5, 1)) + np.array([3.0, 0.0])
    assert a.shape == (300, 2) and b.shape == (250, 2)
    assert wasserstein1(a, b) == pytest.approx(3.0, rel=0.02)


def test_w1_is_symmetric_and_satisfies_the_triangle_inequality():
    for t in range(20):
        r = Rng(91).split(f"triple-{t}")
        a, b, c = (r.split(tag).normal(40, 2) + shift for tag, shift in (("a", 0.0), ("b", 1.0), ("c", -0.5)))
        assert abs(wasserstein1(a, b) - wasserstein1(b, a)) <= 1e-9
        assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-9


def test_mmd_detects_shift():
    a = Rng(1).normal(200, 1)
    b = Rng(2).normal(200, 1) + 5.0
    assert mmd_test(a, b, Rng(3), 500).permutation_p <= 0.001 + 1e-12


def test_mmd_identical_samples():
    a = Rng(1).normal(50, 2)
    result = mmd_test(a, a.copy(), Rng(3), 200)
    assert result.statistic <= 1e-12
    assert result.permutation_p > 0.5


def test_mmd_is_calibrated_under_the_null():
    passes = 0
    for t in range(100):
        sample = Rng(500).split(f"rep-{t}").normal(200, 2)
        passes += mmd_test(sample[:100], sample[100:], Rng(600).split(f"rep-{t}"), 200).permutation_p > 0.01
    assert passes >= 97


def test_mmd_guards(rng):
    with pytest.raises(DimensionError):
        mmd_test(rng.normal(5, 2), rng.normal(5, 3), rng)
    with pytest.raises(PreconditionError):
        mmd_test(np.zeros((4, 1)), np.zeros((4, 1)), rng)


def test_path_consistency_with_noiseless_oracles(noiseless_world):
    models = [oracle_domain_model(noiseless_world, i) for i in range(3)]
    x = sample_coupled(noiseless_world, 300, Rng(1)).xs[0]
    result = check_path_consistency(models, [0, 1, 2], x, Rng(2), SMALL)
    assert result.pointwise_gap < 1e-8
    assert result.statistic <= 1e-8
    assert result.passed(SMALL.alpha)


def test_path_consistency_accepts_mappings(noiseless_world):
    models = {f"d{i + 1}": oracle_domain_model(noiseless_world, i) for i in range(3)}
    x = sample_coupled(noiseless_world, 100, Rng(1)).xs[1]
    assert check_path_consistency(models, ["d2", "d3", "d1"], x, Rng(2), SMALL).pointwise_gap < 1e-8


def test_path_consistency_needs_three_domains(noiseless_world):
    models = [oracle_domain_model(noiseless_world, i) for i in range(2)]
    with pytest.raises(PreconditionError):
        check_path_consistency(models, [0, 1], np.zeros((5, 4)), Rng(0), SMALL)


def test_path_consistency_with_noisy_oracles(w4_world):
    models = [oracle_domain_model(w4_world, i) for i in range(4)]
    x = sample_coupled(w4_world, 400, Rng(1)).xs[1]
    assert check_path_consistency(models, [1, 3, 0, 2], x, Rng(2), SMALL).permutation_p > 0.01


def test_global_consistency_of_oracles(w4_world):
    models = [oracle_domain_model(w4_world, i) for i in range(4)]
    samples = sample_coupled(w4_world, 600, Rng(1))
    marginals = [x for x, _ in samples.marginals(Rng(2))]
    cfg = CheckConfig(eval_samples=200, n_permutations=2000)
    table = check_global_consistency(models, marginals, Rng(3), cfg)
    assert sorted(table) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    assert all(result.permutation_p > 0.001 for result in table.values())


def test_global_consistency_detects_a_corrupted_encoder(w4_world):
    models = [oracle_domain_model(w4_world, i) for i in range(2)]
    models[1] = with_latent_shift(models[1], 3.0)
    samples = sample_coupled(w4_world, 600, Rng(1))
    marginals = [x for x, _ in samples.marginals(Rng(2))][:2]
    table = check_global_consistency(models, marginals, Rng(3), SMALL)
    assert table[(0, 1)].permutation_p <= 0.01


def test_transport_bound_holds_for_oracles(w4_world):
    models = [oracle_domain_model(w4_world, i) for i in range(4)]
    samples = sample_coupled(w4_world, 600, Rng(1))
    marginals = [x for x, _ in samples.marginals(Rng(2))]
    report = check_transport_bound(models[0], models[2], (marginals[0], marginals[2]), None, Rng(3), SMALL)
    assert report.gamma == pytest.approx(1.5)
    assert report.recon < 1e-8
    assert report.holds


def test_transport_bound_term_grows_with_latent_shift(w4_world):
    src, dst = oracle_domain_model(w4_world, 0), oracle_domain_model(w4_world, 2)
    samples = sample_coupled(w4_world, 600, Rng(1))
    marginals = [x for x, _ in samples.marginals(Rng(2))]
    terms = []
    for shift in (0.5, 1.0, 2.0):
        report = check_transport_bound(with_latent_shift(src, shift), dst, (marginals[0], marginals[2]),
                                       None, Rng(3), SMALL)
        terms.append(report.term_src)
        assert report.holds
    assert terms[0] < terms[1] < terms[2]


def test_empirical_lipschitz_of_a_linear_map(rng):
    x = rng.split("x").normal(300, 2)
    assert empirical_lipschitz(lambda v: 3.0 * v, x, rng.split("pairs"), 1000) == pytest.approx(3.0)


def test_reconstruction_and_latent_reports_of_oracle(w4_world):
    model = oracle_domain_model(w4_world, 1)
    x = sample_coupled(w4_world, 500, Rng(1)).xs[1]
    report = reconstruction_report(model, x)
    assert report["mse"] < 1e-16 and report["relative"] < 1e-16
    assert latent_prior_test(model, x, Rng(2), SMALL).permutation_p > 0.01


def test_translation_grid_covers_ordered_pairs(noiseless_world):
    models = [oracle_domain_model(noiseless_world, i) for i in range(3)]
    samples = sample_coupled(noiseless_world, 50, Rng(1))
    grid = translation_grid(models, samples.xs, Rng(2))
    assert len(grid) == 6
    for (i, j), out in grid.items():
        assert np.max(np.abs(out - samples.xs[j])) < 1e-8


def test_latent_feature_correlation_table(w4_world):
    model = oracle_domain_model(w4_world, 0)
    x = sample_coupled(w4_world, 500, Rng(1)).xs[0]
    table = latent_feature_correlation(model, x, alpha=0.01)
    assert list(table.columns) == ["feature", "latent", "r", "p", "significant"]
    assert len(table) == 6 * 2
    assert table["significant"].any()
    assert table["r"].abs().max() <= 1.0


def test_cluster_agreement_of_oracles():
    spec = make_sem(2, [(4, 0), (5, 0)], 0.3, Rng(3), cluster_sep=4.0)
    samples = sample_coupled(spec, 400, Rng(4))
    src, dst = oracle_domain_model(spec, 0), oracle_domain_model(spec, 1)
    agreement = cluster_agreement(src, dst, samples.xs[0], samples.labels, samples.xs[1], samples.labels, Rng(5))
    assert agreement > 0.95
