import numpy as np
import pytest

from flexpt.models import (
    AdaptiveSmoothnessModel,
    PlainPTModel,
    TwoSampleCouplingModel,
    beta_binomial_log_marginal,
    make_model,
)
from oracles import quadrature_beta_binomial


def test_beta_binomial_no_data_is_one():
    assert beta_binomial_log_marginal(1.0, 1.0, 0, 0) == pytest.approx(0.0, abs=1e-15)


def test_beta_binomial_single_point_uniform_prior():
    assert beta_binomial_log_marginal(1.0, 1.0, 1, 0) == pytest.approx(np.log(0.5))


def test_beta_binomial_matches_quadrature():
    # closed form log B(3,2)/B(1,1) = log(1/12), checked against quadrature
    val = beta_binomial_log_marginal(1.0, 1.0, 2, 1)
    assert val == pytest.approx(np.log(1 / 12), rel=1e-12)
    assert np.exp(val) == pytest.approx(quadrature_beta_binomial(1.0, 1.0, 2, 1), rel=1e-9)


def test_beta_binomial_quadrature_grid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        al, ar = rng.uniform(0.2, 5.0, 2)
        nl, nr = rng.integers(0, 15, 2)
        got = np.exp(beta_binomial_log_marginal(al, ar, int(nl), int(nr)))
        want = quadrature_beta_binomial(al, ar, int(nl), int(nr))
        assert got == pytest.approx(want, rel=1e-9)


class TestPlainPT:
    def test_single_state_identity(self):
        model = PlainPTModel()
        assert model.n_states == 1
        assert np.allclose(model.transition(3), [[1.0]])

    def test_marginal_closed_form_vs_quadrature(self):
        model = PlainPTModel(alpha_fn=lambda depth: (1.0, 1.0))
        got = model.log_marginal(np.array([3]), np.array([2]), 0.5, 0)[0]
        assert got == pytest.approx(np.log(1 / 60), rel=1e-12)
        assert np.exp(got) == pytest.approx(quadrature_beta_binomial(1, 1, 3, 2), rel=1e-9)

    def test_default_depth_scaled_alphas_finite(self):
        model = PlainPTModel(alpha_scale=0.1)
        for depth in range(0, 16):
            val = model.log_marginal(np.array([7]), np.array([0]), 0.5, depth)
            assert np.isfinite(val).all()
            assert np.exp(val[0]) > 0

    def test_grid_matches_single(self):
        model = PlainPTModel()
        rng = np.random.default_rng(1)
        n_left = rng.integers(0, 8, size=(2, 3, 5))
        n_node = np.array([10, 6])
        fracs = np.arange(1, 6) / 6
        grid = model.log_marginal_grid(n_left, n_node, fracs, 2)
        for j in range(3):
            for li in range(5):
                single = model.log_marginal(
                    n_left[:, j, li], n_node - n_left[:, j, li], fracs[li], 2
                )
                assert grid[0, j, li] == pytest.approx(single[0], rel=1e-12)

    def test_conjugate_mean(self):
        model = PlainPTModel(alpha_fn=lambda depth: (1.0, 1.0))
        mean = model.expected_theta(0, np.array([3]), np.array([1]), 0.5, 0)
        assert mean[0] == pytest.approx(4 / 6)


class TestAdaptiveSmoothness:
    def setup_method(self):
        self.model = AdaptiveSmoothnessModel()

    def test_transition_rows_stochastic_and_absorbing(self):
        t = self.model.transition(0)
        assert np.allclose(t.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(t[-1], [0, 0, 0, 0, 1])
        assert np.all(np.tril(t, -1) == 0)

    def test_zero_counts_marginal_one(self):
        got = self.model.log_marginal(np.array([0]), np.array([0]), 0.25, 3)
        assert np.allclose(got, 0.0, atol=1e-12)

    def test_pinned_state_is_volume_splitting(self):
        got = self.model.log_marginal(np.array([10]), np.array([10]), 0.5, 0)
        assert got[-1] == pytest.approx(-20 * np.log(2), rel=1e-12)

    def test_finite_states_average_five_closed_forms(self):
        # oracle: direct 5-term average of beta-binomial closed forms
        model = self.model
        frac, nl, nr = 0.5, 10, 10
        got = model.log_marginal(np.array([nl]), np.array([nr]), frac, 0)
        for state in range(model.n_states - 1):
            nus = model.nu_grid[state]
            terms = [
                beta_binomial_log_marginal(frac * nu, (1 - frac) * nu, nl, nr) for nu in nus
            ]
            want = np.log(np.mean(np.exp(terms)))
            assert got[state] == pytest.approx(want, rel=1e-10)

    def test_grid_collapse_approaches_pinned_state(self):
        model = AdaptiveSmoothnessModel(log10_nu_range=(7.9, 8.0), n_states=2, grid_points=1)
        got = model.log_marginal(np.array([6]), np.array([4]), 0.25, 0)
        assert got[0] == pytest.approx(got[1], rel=1e-3)

    def test_nu_grid_right_endpoints(self):
        # state 1 covers (-1, 0.25] in log10; five points end at the endpoint
        assert np.log10(self.model.nu_grid[0][-1]) == pytest.approx(0.25)
        assert np.log10(self.model.nu_grid[-1][-1]) == pytest.approx(4.0)

    def test_requires_single_group(self):
        with pytest.raises(ValueError):
            self.model.check_groups(2)

    def test_pinned_theta_constant(self):
        th = self.model.expected_theta(4, np.array([50]), np.array([0]), 0.25, 0)
        assert th[0] == 0.25


class TestTwoSampleCoupling:
    def setup_method(self):
        self.model = TwoSampleCouplingModel()

    def test_transition_matches_stated_form(self):
        t = self.model.transition(2)
        g, r = 0.3, 0.3
        gk = g / 4
        assert np.allclose(t[0], [(1 - r) * g, (1 - r) * (1 - g), r])
        assert np.allclose(t[1], [(1 - r) * gk, (1 - r) * (1 - gk), r])
        assert np.allclose(t[2], [0, 0, 1])
        for depth in range(16):
            assert np.allclose(self.model.transition(depth).sum(axis=1), 1.0, atol=1e-12)

    def test_identical_splits_prefer_coupling(self):
        model = TwoSampleCouplingModel(nu0=2.0)  # Beta(1,1) at the midpoint
        got = model.log_marginal(np.array([5, 5]), np.array([5, 5]), 0.5, 0)
        want_dec = 2 * beta_binomial_log_marginal(1.0, 1.0, 5, 5)
        want_cpl = beta_binomial_log_marginal(1.0, 1.0, 10, 10)
        assert got[0] == pytest.approx(want_dec, rel=1e-12)
        assert got[1] == pytest.approx(want_cpl, rel=1e-12)
        assert got[2] == got[1]
        assert got[1] > got[0]

    def test_opposite_splits_prefer_decoupling(self):
        model = TwoSampleCouplingModel(nu0=2.0)
        got = model.log_marginal(np.array([10, 0]), np.array([0, 10]), 0.5, 0)
        assert got[0] > got[1] + 5.0

    def test_group_swap_symmetry(self):
        got = self.model.log_marginal(np.array([7, 2]), np.array([3, 8]), 0.5, 1)
        swapped = self.model.log_marginal(np.array([2, 7]), np.array([8, 3]), 0.5, 1)
        assert np.allclose(got, swapped, atol=1e-12)

    def test_zero_counts_marginal_one(self):
        got = self.model.log_marginal(np.array([0, 0]), np.array([0, 0]), 0.125, 4)
        assert np.allclose(got, 0.0, atol=1e-12)

    def test_coupled_theta_shared(self):
        th = self.model.expected_theta(1, np.array([4, 1]), np.array([2, 3]), 0.5, 0)
        assert th[0] == th[1]
        rng = np.random.default_rng(0)
        draw = self.model.sample_theta(2, np.array([4, 1]), np.array([2, 3]), 0.5, 0, rng)
        assert draw[0] == draw[1]

    def test_requires_two_groups(self):
        with pytest.raises(ValueError):
            self.model.check_groups(1)


def test_make_model_registry():
    assert make_model("pt").kind == "pt"
    assert make_model("apt", {"states": 5, "beta": 0.1}).n_states == 5
    assert make_model("mrs", {"gamma": 0.2, "rho": 0.4}).gamma == 0.2
    with pytest.raises(ValueError):
        make_model("nope")


def test_zero_count_coherence_all_models():
    cases = [
        (PlainPTModel(), np.array([0]), np.array([0])),
        (AdaptiveSmoothnessModel(), np.array([0]), np.array([0])),
        (TwoSampleCouplingModel(), np.array([0, 0]), np.array([0, 0])),
    ]
    for model, nl, nr in cases:
        for frac in (0.125, 0.5, 0.96875):
            got = model.log_marginal(nl, nr, frac, 2)
            assert np.allclose(got, 0.0, atol=1e-12), type(model).__name__
