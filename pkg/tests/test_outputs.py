import numpy as np
import pytest

from flexpt.geometry import Decision, GroupedDataset
from flexpt.message_passing import compute_messages
from flexpt.models import (
    AdaptiveSmoothnessModel,
    PlainPTModel,
    TwoSampleCouplingModel,
)
from flexpt.outputs import (
    effect_size,
    finish_fit,
    fit_density,
    fit_twosample,
    leaf_masses,
    population_null_probability,
    predictive_density_at,
    predictive_masses,
    predictive_score,
    two_sample_report,
)
from flexpt.priors import TreePriorConfig
from flexpt.smc import SMCConfig, run
from flexpt.tree import PartitionTree, StopConfig
from oracles import enumerated_predictive_masses


def midpoint_tree(data, depth, stop=None):
    stop = stop or StopConfig(max_depth=depth, min_count=1)
    tree = PartitionTree(data, stop)
    while (nid := tree.next_to_divide()) is not None:
        tree.apply_decision(nid, Decision(0, 1, 2), stop)
    return tree


def test_no_data_predictive_is_uniform():
    data = GroupedDataset([np.empty((0, 1))])
    stop = StopConfig(max_depth=3, min_count=0)
    tree = midpoint_tree(data, 3, stop)
    model = PlainPTModel(alpha_fn=lambda k: (1.0, 1.0))
    ms = compute_messages(tree, model)
    masses = predictive_masses(tree, ms, model)
    leaves, lm = leaf_masses(tree, masses)
    vols = np.exp(tree._log_volume[leaves])
    assert np.allclose(lm, vols, atol=1e-12)


def test_depth_one_conjugate_mean_mass():
    data = GroupedDataset.single(np.array([[0.1], [0.2], [0.3], [0.9]]))
    stop = StopConfig(max_depth=1, min_count=1)
    tree = PartitionTree(data, stop)
    tree.apply_decision(0, Decision(0, 1, 2), stop)
    model = PlainPTModel(alpha_fn=lambda k: (1.0, 1.0))
    ms = compute_messages(tree, model)
    masses = predictive_masses(tree, ms, model)
    assert masses[1].sum() == pytest.approx(4 / 6, rel=1e-12)
    assert masses[2].sum() == pytest.approx(2 / 6, rel=1e-12)


def test_masses_match_enumeration_multistate():
    rng = np.random.default_rng(3)
    data = GroupedDataset.single(rng.random((14, 2)) * 0.98 + 0.01)
    model = AdaptiveSmoothnessModel(n_states=3, log10_nu_range=(-1, 2), grid_points=2)
    stop = StopConfig(max_depth=2, min_count=3)
    tree = PartitionTree(data, stop)
    rng2 = np.random.default_rng(5)
    while (nid := tree.next_to_divide()) is not None:
        tree.apply_decision(
            nid, Decision(int(rng2.integers(0, 2)), int(rng2.integers(1, 4)), 4), stop
        )
    ms = compute_messages(tree, model)
    got = predictive_masses(tree, ms, model)
    want = enumerated_predictive_masses(tree, model)
    assert np.allclose(got, want, atol=1e-10)


def test_leaf_mass_conservation_across_fits():
    rng = np.random.default_rng(8)
    fit = fit_density(
        rng.random((60, 2)) * 0.98 + 0.01,
        model="apt",
        prior_cfg=TreePriorConfig(n_grid=4, eta=0.01),
        smc_cfg=SMCConfig(n_particles=10, max_depth=3, min_count=3, seed=2),
    )
    for tree, ms in zip(fit.trees, fit.message_sets):
        masses = predictive_masses(tree, ms, fit.model)
        _, lm = leaf_masses(tree, masses)
        assert lm.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(lm >= 0)


def test_density_integrates_to_one_and_positive():
    rng = np.random.default_rng(4)
    fit = fit_density(
        rng.random((50, 1)) * 0.98 + 0.01,
        model="pt",
        prior_cfg=TreePriorConfig(n_grid=4, eta=0.0),
        smc_cfg=SMCConfig(n_particles=8, max_depth=4, min_count=2, seed=3),
    )
    # exact integral: particle-weighted sum of leaf masses is one; a fine
    # Riemann grid agrees to the grid resolution
    grid = (np.arange(1, 4001) - 0.5) / 4000
    dens = predictive_density_at(grid.reshape(-1, 1), fit)
    assert np.all(dens > 0)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=5e-3)


def test_density_rejects_points_outside_domain():
    rng = np.random.default_rng(9)
    fit = fit_density(
        rng.random((20, 1)) * 0.98 + 0.01,
        model="pt",
        smc_cfg=SMCConfig(n_particles=4, max_depth=2, min_count=2, seed=0),
    )
    with pytest.raises(ValueError):
        predictive_density_at(np.array([[1.2]]), fit)


def test_score_invariant_to_order():
    rng = np.random.default_rng(10)
    fit = fit_density(
        rng.random((40, 1)) * 0.98 + 0.01,
        model="pt",
        smc_cfg=SMCConfig(n_particles=6, max_depth=3, min_count=2, seed=1),
    )
    pts = rng.random((25, 1)) * 0.98 + 0.01
    a = predictive_score(pts, fit)
    b = predictive_score(pts[::-1], fit)
    assert a == pytest.approx(b, abs=1e-12)


def test_uniform_truth_scores_near_zero():
    rng = np.random.default_rng(11)
    fit = fit_density(
        rng.random((2000, 1)) * 0.999 + 0.0005,
        model="apt",
        prior_cfg=TreePriorConfig(n_grid=4, eta=0.01),
        smc_cfg=SMCConfig(n_particles=30, max_depth=4, min_count=5, seed=6),
    )
    test_pts = rng.random((500, 1)) * 0.999 + 0.0005
    assert abs(predictive_score(test_pts, fit)) < 0.05


def step_density_sample(n, rng):
    left = rng.random(n) < 0.8
    x = np.where(left, rng.random(n) * 0.25, 0.25 + rng.random(n) * 0.75)
    return np.clip(x, 1e-9, 1.0).reshape(-1, 1)


def test_step_density_pointwise_accuracy():
    rng = np.random.default_rng(12)
    data = step_density_sample(2000, rng)
    fit = fit_density(
        data,
        model="pt",
        prior_cfg=TreePriorConfig(n_grid=4, eta=0.01),
        smc_cfg=SMCConfig(n_particles=300, max_depth=6, min_count=5, seed=7),
    )
    dens = predictive_density_at(np.array([[0.1]]), fit)[0]
    assert dens == pytest.approx(3.2, rel=0.15)


def two_group_fit(seed, shift=0.0, n=80):
    rng = np.random.default_rng(seed)
    g1 = rng.random((n, 2)) * 0.98 + 0.01
    g2 = rng.random((n, 2)) * 0.98 + 0.01
    if shift:
        g2[:, 0] = np.clip(g2[:, 0] * 0.3 + shift, 1e-6, 1.0)
    return fit_twosample(
        g1,
        g2,
        prior_cfg=TreePriorConfig(n_grid=4, eta=0.1),
        smc_cfg=SMCConfig(n_particles=12, max_depth=3, min_count=4, seed=seed),
    )


def test_effect_size_zero_cases():
    fit = two_group_fit(1)
    tree = fit.map_tree
    ms = fit.message_sets[fit.map_index]
    nid = int(tree.internal_ids()[0])
    # pmap of exactly zero forces a zero marginal effect
    ms.state_marginals[nid, 0] = 0.0
    assert effect_size(tree, ms, fit.model, nid, n_draws=50, seed=0) == 0.0


def test_effect_size_against_large_draw_oracle():
    # counts g1=(30,10), g2=(10,30) under Beta(1,1): the conditional mean
    # of |logit t1 - logit t2| is pinned by an independent large-draw MC
    rng = np.random.default_rng(0)
    t1 = rng.beta(31, 11, size=400_000)
    t2 = rng.beta(11, 31, size=400_000)
    oracle = np.abs(np.log(t1 / (1 - t1)) - np.log(t2 / (1 - t2)))
    want = float(oracle.mean())
    se = float(oracle.std() / np.sqrt(oracle.size))
    model = TwoSampleCouplingModel(nu0=2.0)  # Beta(1,1) at the midpoint
    data = GroupedDataset(
        [
            np.concatenate([np.full(30, 0.25), np.full(10, 0.75)]).reshape(-1, 1),
            np.concatenate([np.full(10, 0.25), np.full(30, 0.75)]).reshape(-1, 1),
        ]
    )
    stop = StopConfig(max_depth=1, min_count=1)
    tree = PartitionTree(data, stop)
    tree.apply_decision(0, Decision(0, 1, 2), stop)
    ms = compute_messages(tree, model)
    got = effect_size(tree, ms, model, 0, n_draws=200_000, seed=3, conditional=True)
    mc_se = 3 * (se + want / np.sqrt(200_000))
    assert got == pytest.approx(want, abs=mc_se)
    # marginal version scales by the decoupling probability
    marg = effect_size(tree, ms, model, 0, n_draws=200_000, seed=3)
    assert marg == pytest.approx(ms.state_marginals[0, 0] * got, rel=1e-12)


def test_effect_size_monotone_in_imbalance():
    model = TwoSampleCouplingModel(nu0=2.0)
    vals = []
    for c in (10, 20, 40, 80):
        data = GroupedDataset(
            [
                np.concatenate([np.full(c, 0.25), np.full(10, 0.75)]).reshape(-1, 1),
                np.concatenate([np.full(10, 0.25), np.full(c, 0.75)]).reshape(-1, 1),
            ]
        )
        stop = StopConfig(max_depth=1, min_count=1)
        tree = PartitionTree(data, stop)
        tree.apply_decision(0, Decision(0, 1, 2), stop)
        ms = compute_messages(tree, model)
        vals.append(effect_size(tree, ms, model, 0, n_draws=4000, seed=1, conditional=True))
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_report_rows_filter_and_sort():
    fit = two_group_fit(5, n=120)
    full = two_sample_report(fit, min_node_size=0, n_draws=50)
    tree = fit.map_tree
    assert len(full.rows) == len(tree.internal_ids())
    effs = [r["effect_size"] for r in full.rows]
    assert effs == sorted(effs, reverse=True)

    threshold = 50
    filtered = two_sample_report(fit, min_node_size=threshold, n_draws=50)
    want = sum(1 for nid in tree.internal_ids() if tree.total_count(int(nid)) >= threshold)
    assert len(filtered.rows) == want
    assert 0.0 <= full.p_h0 <= 1.0


def test_population_null_matches_weighted_average():
    from flexpt.message_passing import global_null_probability

    fit = two_group_fit(6)
    want = sum(
        w * global_null_probability(t, ms, fit.model)
        for w, t, ms in zip(fit.weights, fit.trees, fit.message_sets)
    )
    assert population_null_probability(fit) == pytest.approx(want, rel=1e-12)


def test_masses_require_single_group():
    fit = two_group_fit(7)
    with pytest.raises(ValueError):
        predictive_masses(fit.map_tree, fit.message_sets[fit.map_index], fit.model)
