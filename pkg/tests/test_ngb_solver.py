"""Solver tests: closed-form updates, lasso oracles, and fit behavior."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvcflm.basis import make_basis
from tvcflm.design import CoefficientSurface, DesignMatrix, build_design, unvec, vec
from tvcflm.ngb_solver import (
    ETA_CLAMP,
    PenaltyConfig,
    adaptive_weights,
    build_augmented,
    fit_ngb,
    group_bridge_value,
    lambda_from_tau,
    lasso_cd,
    penalty_root,
    ridge_init,
    suffix_group_norms,
    tau_from_lambda,
    update_eta,
    update_g,
    update_sigma,
)
from tvcflm.smoothing import FunctionalSample


def small_design(n=40, m1=6, m2=3, seed=0, noise=0.05, zero_tail_rows=0):
    """Synthetic centered design with optionally truncated truth."""
    rng = np.random.default_rng(seed)
    s_basis = make_basis((0.0, 1.0), m1, min(4, m1))
    t_basis = make_basis((0.0, 1.0), m2, min(4, m2)) if m2 > 1 else make_basis((0.0, 1.0), 1, 1)
    B = rng.standard_normal((m1, m2))
    if zero_tail_rows:
        B[-zero_tail_rows:, :] = 0.0
    samples = []
    for _ in range(n):
        w = rng.standard_normal(m1)
        t = float(rng.uniform())
        samples.append(FunctionalSample(w=w, t=t, y=0.0))
    design = build_design(samples, s_basis, t_basis)
    y = design.Z @ vec(B) + noise * rng.standard_normal(n)
    design.y = y - y.mean()
    return design, B


def config_for(design, kappa=1e-6, tau=1e-4, gamma=0.5, weights=None):
    m1, m2 = design.s_basis.num_basis, design.t_basis.num_basis
    if weights is None:
        weights = np.ones((m1, m2))
    return PenaltyConfig(kappa=kappa, tau=tau, gamma=gamma, weights=weights)


class TestRidgeInit:
    def test_identity_design_recovers_y(self):
        s_basis = make_basis((0.0, 1.0), 2, 2)
        t_basis = make_basis((0.0, 1.0), 2, 2)
        y = np.array([1.0, -2.0, 0.5, 3.0])
        design = DesignMatrix(Z=np.eye(4), y=y, s_basis=s_basis, t_basis=t_basis)
        b = ridge_init(design, kappa=0.0, ridge=1e-12)
        assert np.max(np.abs(b - y)) < 1e-9

    def test_huge_ridge_shrinks_to_zero(self):
        design, _ = small_design()
        b = ridge_init(design, kappa=0.0, ridge=1e12)
        assert np.max(np.abs(b)) < 1e-9

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(1)
        s_basis = make_basis((0.0, 1.0), 3, 3)
        t_basis = make_basis((0.0, 1.0), 1, 1)
        Z = rng.standard_normal((3, 3))
        y = rng.standard_normal(3)
        design = DesignMatrix(Z=Z, y=y, s_basis=s_basis, t_basis=t_basis)
        kappa, ridge, n = 0.37, 0.11, 3
        pen = np.kron(np.eye(1), s_basis.gram2)
        expected = np.linalg.inv(Z.T @ Z + n * kappa * pen + n * ridge * np.eye(3)) @ Z.T @ y
        assert np.max(np.abs(ridge_init(design, kappa, ridge) - expected)) < 1e-10

    def test_rejects_nonpositive_ridge(self):
        design, _ = small_design()
        with pytest.raises(ValueError):
            ridge_init(design, 0.0, 0.0)


class TestAdaptiveWeights:
    def test_all_equal_pilot_gives_unit_weights(self):
        # Suffix group k has size m1-k+1 and l1 norm m1-k+1, so every ratio
        # is c = size^(1/2) / size^(1/2) = 1 at gamma = 1/2.
        c = adaptive_weights(np.ones(4), gamma=0.5, m1=4, m2=1)
        assert np.max(np.abs(c - 1.0)) < 1e-14
        c3 = adaptive_weights(np.ones(3), gamma=0.5, m1=3, m2=1)
        assert np.max(np.abs(c3 - 1.0)) < 1e-14

    def test_gamma_near_one_is_adaptive_lasso_weight(self):
        rng = np.random.default_rng(2)
        b = rng.uniform(0.5, 2.0, 6)
        c = adaptive_weights(b, gamma=1.0 - 1e-9, m1=6, m2=1)
        norms = suffix_group_norms(b.reshape(6, 1))
        assert np.max(np.abs(c * norms - 1.0)) < 1e-6

    def test_dead_pilot_group_is_clamped(self):
        c = adaptive_weights(np.zeros(3), gamma=0.5, m1=3, m2=1)
        assert np.all(np.isfinite(c))
        assert np.all(c > 0)

    def test_rejects_gamma_one(self):
        with pytest.raises(ValueError):
            adaptive_weights(np.ones(3), gamma=1.0, m1=3, m2=1)


class TestEtaUpdate:
    def test_zero_group_gives_zero(self):
        config = config_for_dims(3, 2, tau=0.5)
        eta = update_eta(np.zeros(6), config)
        assert np.array_equal(eta, np.zeros((3, 2)))

    def test_hand_value(self):
        config = PenaltyConfig(kappa=0.0, tau=0.5, gamma=0.5, weights=np.ones((1, 1)))
        eta = update_eta(np.array([1.0]), config)
        assert eta[0, 0] == pytest.approx(np.sqrt(2.0), abs=1e-14)

    def test_matches_stationarity_form(self):
        # The printed update and the stationarity solution are the same
        # expression in two algebraic forms.
        rng = np.random.default_rng(3)
        for gamma in (0.3, 0.5, 0.7):
            m1, m2 = 4, 3
            weights = rng.uniform(0.5, 2.0, (m1, m2))
            tau = float(rng.uniform(0.1, 2.0))
            config = PenaltyConfig(kappa=0.0, tau=tau, gamma=gamma, weights=weights)
            b = rng.standard_normal(m1 * m2)
            eta = update_eta(b, config)
            norms = suffix_group_norms(unvec(b, m1, m2))
            alt = tau ** (-gamma) * (1.0 / gamma - 1.0) ** gamma * weights * norms**gamma
            assert np.max(np.abs(eta - alt)) < 1e-14

    def test_zero_gradient_of_profiled_terms(self):
        rng = np.random.default_rng(4)
        for gamma in (0.3, 0.5, 0.7):
            m1, m2 = 5, 2
            weights = rng.uniform(0.5, 2.0, (m1, m2))
            tau = float(rng.uniform(0.1, 2.0))
            config = PenaltyConfig(kappa=0.0, tau=tau, gamma=gamma, weights=weights)
            b = rng.standard_normal(m1 * m2)
            eta = update_eta(b, config)
            norms = suffix_group_norms(unvec(b, m1, m2))
            grad = (1.0 - 1.0 / gamma) * weights ** (1.0 / gamma) * eta ** (
                -1.0 / gamma
            ) * norms + tau
            assert np.max(np.abs(grad)) < 1e-10


def config_for_dims(m1, m2, kappa=0.0, tau=1.0, gamma=0.5, weights=None):
    if weights is None:
        weights = np.ones((m1, m2))
    return PenaltyConfig(kappa=kappa, tau=tau, gamma=gamma, weights=weights)


class TestGUpdate:
    def test_single_term(self):
        config = config_for_dims(3, 1, gamma=0.5)
        eta = np.array([[2.0], [1.0], [1.0]])
        g = update_g(eta, config)
        assert g[0, 0] == pytest.approx(1.0 ** 2.0 * 2.0 ** (1 - 2.0), abs=1e-14)

    def test_unit_inputs_give_prefix_counts(self):
        config = config_for_dims(4, 2, gamma=0.5)
        g = update_g(np.ones((4, 2)), config)
        assert np.allclose(g, np.arange(1, 5, dtype=float)[:, None])

    def test_dead_first_group_pins_whole_column(self):
        config = config_for_dims(3, 2, gamma=0.5)
        eta = np.ones((3, 2))
        eta[0, 1] = 0.0
        g = update_g(eta, config)
        assert np.all(g[:, 1] >= 1.0 / ETA_CLAMP)
        assert np.all(g[:, 0] < 10)

    def test_prefix_sums_are_nondecreasing(self):
        rng = np.random.default_rng(5)
        config = config_for_dims(6, 3, gamma=0.3, weights=rng.uniform(0.5, 2, (6, 3)))
        g = update_g(rng.uniform(0, 2, (6, 3)), config)
        assert np.all(np.diff(g, axis=0) >= 0)


class TestBridgeWeightConversion:
    def test_hand_value(self):
        assert lambda_from_tau(1.0, 0.5) == pytest.approx(2.0, abs=1e-14)

    def test_monotone_in_tau(self):
        taus = np.logspace(-3, 3, 25)
        lams = [lambda_from_tau(t, 0.5) for t in taus]
        assert np.all(np.diff(lams) > 0)

    def test_round_trip(self):
        for gamma in (0.3, 0.5, 0.7):
            for tau in (1e-4, 0.1, 1.0, 25.0):
                lam = lambda_from_tau(tau, gamma)
                assert tau_from_lambda(lam, gamma) == pytest.approx(tau, rel=1e-12)

    def test_rejects_degenerate_gamma(self):
        for gamma in (0.0, 1.0):
            with pytest.raises(ValueError):
                lambda_from_tau(1.0, gamma)


class TestGroupBridgeValue:
    def test_zero_vector(self):
        config = config_for_dims(3, 2, tau=0.7)
        assert group_bridge_value(np.zeros(6), config) == 0.0

    def test_hand_example(self):
        # Single nonzero entry in a 2-row column at lam = 1: the first
        # suffix group contributes 1^(1/2) = 1, the second is empty.
        config = config_for_dims(2, 1, tau=tau_from_lambda(1.0, 0.5))
        value = group_bridge_value(np.array([1.0, 0.0]), config, n=1)
        assert value == pytest.approx(1.0, rel=1e-12)

    def test_equals_profiled_reformulation_penalty(self):
        rng = np.random.default_rng(6)
        for gamma in (0.3, 0.5, 0.7):
            m1, m2 = 5, 3
            weights = rng.uniform(0.5, 2.0, (m1, m2))
            tau = float(rng.uniform(0.05, 5.0))
            config = PenaltyConfig(kappa=0.0, tau=tau, gamma=gamma, weights=weights)
            b = rng.standard_normal(m1 * m2)
            b[rng.uniform(size=m1 * m2) < 0.3] = 0.0
            assert profiled_penalty(b, config, n=7) == pytest.approx(
                group_bridge_value(b, config, n=7), abs=1e-10
            )


def profiled_penalty(b, config, n=1):
    """Reformulated penalty terms with the multipliers profiled out."""
    gamma = config.gamma
    eta = update_eta(b, config)
    norms = suffix_group_norms(unvec(b, config.m1, config.m2))
    alive = eta > 0
    bridge = np.zeros_like(eta)
    bridge[alive] = (
        config.weights[alive] ** (1.0 / gamma)
        * eta[alive] ** (1.0 - 1.0 / gamma)
        * norms[alive]
    )
    return n * float(np.sum(bridge) + config.tau * np.sum(eta))


class TestAugmentedSystem:
    def test_zero_kappa_pads_zero_rows(self):
        design, _ = small_design()
        y_aug, U = build_augmented(design, kappa=0.0, sigma2=1.3)
        p = design.p
        assert np.array_equal(U[: design.n], design.Z)
        assert np.array_equal(U[design.n :], np.zeros((p, p)))
        assert np.array_equal(y_aug, np.concatenate([design.y, np.zeros(p)]))

    def test_absorption_identity(self):
        rng = np.random.default_rng(7)
        design, _ = small_design(seed=3)
        pen = np.kron(np.eye(design.t_basis.num_basis), design.s_basis.gram2)
        for kappa, sigma2 in [(1e-3, 0.5), (0.2, 2.0), (5.0, 0.01)]:
            y_aug, U = build_augmented(design, kappa, sigma2)
            for _ in range(5):
                b = rng.standard_normal(design.p)
                lhs = np.sum((y_aug - U @ b) ** 2) - np.sum((design.y - design.Z @ b) ** 2)
                rhs = design.n * sigma2 * kappa * (b @ pen @ b)
                assert lhs == pytest.approx(rhs, abs=1e-8)

    def test_identity_penalty_root(self):
        W = penalty_root(np.eye(3), 2)
        assert np.max(np.abs(W @ W.T - np.eye(6))) < 1e-12


def lasso_objective(U, y, sigma2, weights, b):
    r = y - U @ b
    return (r @ r) / sigma2 + float(weights @ np.abs(b))


def lasso_sign_oracle(U, y, sigma2, weights):
    """Global minimum by exhaustive KKT sign-pattern enumeration."""
    p = U.shape[1]
    best = np.inf
    for signs in itertools.product((-1, 0, 1), repeat=p):
        active = [j for j in range(p) if signs[j] != 0]
        b = np.zeros(p)
        if active:
            sa = np.array([signs[j] for j in active], dtype=float)
            Ua = U[:, active]
            rhs = Ua.T @ y - 0.5 * sigma2 * weights[active] * sa
            try:
                ba = np.linalg.solve(Ua.T @ Ua, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(np.sign(ba) != sa):
                continue
            b[active] = ba
        grad = (2.0 / sigma2) * (U.T @ (y - U @ b))
        inactive_ok = all(
            abs(grad[j]) <= weights[j] * (1 + 1e-9) for j in range(p) if signs[j] == 0
        )
        if not inactive_ok:
            continue
        best = min(best, lasso_objective(U, y, sigma2, weights, b))
    return best


class TestLassoCD:
    def test_orthonormal_design_soft_threshold(self):
        rng = np.random.default_rng(8)
        q, _ = np.linalg.qr(rng.standard_normal((12, 5)))
        y = rng.standard_normal(12)
        g = np.abs(rng.uniform(0.5, 2.0, (5, 1)))
        b = lasso_cd(q, y, sigma2=1.0, g=g, n_samples=1, tol=1e-12)
        rho = q.T @ y
        thr = 0.5 * g.ravel()
        expected = np.sign(rho) * np.maximum(np.abs(rho) - thr, 0.0)
        assert np.max(np.abs(b - expected)) < 1e-8

    def test_huge_weights_give_zero(self):
        rng = np.random.default_rng(9)
        U = rng.standard_normal((20, 6))
        y = rng.standard_normal(20)
        b = lasso_cd(U, y, sigma2=1.0, g=np.full((6, 1), 1e12), n_samples=1)
        assert np.array_equal(b, np.zeros(6))

    def test_objective_matches_sign_pattern_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            p = int(rng.integers(2, 6))
            n = p + int(rng.integers(3, 10))
            U = rng.standard_normal((n, p))
            y = rng.standard_normal(n)
            sigma2 = float(rng.uniform(0.2, 3.0))
            g = rng.uniform(0.05, 1.0, (p, 1))
            b = lasso_cd(U, y, sigma2, g, n_samples=1, tol=1e-10)
            ours = lasso_objective(U, y, sigma2, g.ravel(), b)
            oracle = lasso_sign_oracle(U, y, sigma2, g.ravel())
            assert ours == pytest.approx(oracle, abs=1e-7)

    def test_kkt_conditions(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            U = rng.standard_normal((25, 8))
            y = rng.standard_normal(25)
            sigma2 = float(rng.uniform(0.5, 2.0))
            g = rng.uniform(0.02, 0.5, (8, 1))
            weights = g.ravel()
            b = lasso_cd(U, y, sigma2, g, n_samples=1, tol=1e-10)
            grad = (2.0 / sigma2) * (U.T @ (y - U @ b))
            for j in range(8):
                if b[j] == 0.0:
                    assert abs(grad[j]) <= weights[j] + 1e-6 * (1 + weights[j])
                else:
                    assert grad[j] == pytest.approx(
                        weights[j] * np.sign(b[j]), abs=1e-6 * (1 + weights[j])
                    )

    def test_pinned_coordinates_stay_exactly_zero(self):
        # Sentinel weights from a dead group must hold coefficients at zero
        # even when the data are strongly correlated with those columns.
        rng = np.random.default_rng(12)
        U = rng.standard_normal((30, 4))
        beta = np.array([1.0, 2.0, 0.0, 0.0])
        y = U @ beta + 0.01 * rng.standard_normal(30)
        g = np.array([[0.01], [0.01], [1.0 / ETA_CLAMP], [1.0 / ETA_CLAMP]])
        b = lasso_cd(U, y, sigma2=0.5, g=g, n_samples=1, warm_start=np.zeros(4))
        assert b[2] == 0.0 and b[3] == 0.0
        assert abs(b[0]) > 0.1 and abs(b[1]) > 0.1

    def test_rejects_bad_weights(self):
        U = np.eye(3)
        with pytest.raises(ValueError):
            lasso_cd(U, np.ones(3), 1.0, np.zeros((3, 1)), 1)


class TestUpdateSigma:
    def test_exact_fit_floors(self):
        U = np.eye(3)
        y = np.array([1.0, 2.0, 3.0])
        assert update_sigma(y, U, y, 3) == 1e-12

    def test_zero_coefficients(self):
        y = np.array([3.0, 4.0])
        assert update_sigma(y, np.eye(2), np.zeros(2), 2) == pytest.approx(12.5)

    def test_three_point_hand_computation(self):
        y_aug = np.array([1.0, 2.0, 3.0])
        U = np.eye(3)
        b = np.array([0.0, 1.0, 1.0])
        assert update_sigma(y_aug, U, b, 3) == pytest.approx(2.0)


class TestFitNgb:
    def test_tau_zero_matches_tiny_tau(self):
        # Soft-threshold shifts scale like sqrt(tau) at gamma = 1/2, so a
        # deep-limit tau makes the two fixed points agree to 1e-6.
        design, _ = small_design(seed=13, noise=0.1)
        ridge_fit = fit_ngb(design, config_for(design, kappa=1e-3, tau=0.0), outer_tol=1e-10)
        near_fit = fit_ngb(
            design,
            config_for(design, kappa=1e-3, tau=1e-18),
            outer_tol=1e-10,
            cd_tol=1e-11,
        )
        assert np.max(np.abs(ridge_fit.b - near_fit.b)) < 1e-6
        assert ridge_fit.active.size == design.p

    def test_tau_zero_solves_penalized_normal_equations(self):
        design, _ = small_design(seed=14, noise=0.1)
        kappa = 1e-2
        fit = fit_ngb(design, config_for(design, kappa=kappa, tau=0.0), outer_tol=1e-12)
        pen = np.kron(np.eye(design.t_basis.num_basis), design.s_basis.gram2)
        lhs = design.Z.T @ design.Z + design.n * fit.sigma2 * kappa * pen
        resid = lhs @ fit.b - design.Z.T @ design.y
        assert np.max(np.abs(resid)) < 1e-8

    def test_constant_t_direction_runs(self):
        design, _ = small_design(m2=1, seed=15, noise=0.05)
        config = config_for(design, kappa=1e-4, tau=1e-4)
        fit = fit_ngb(design, config)
        assert fit.converged
        grid_t = np.linspace(0, 1, 9)
        values = np.array(
            [
                [float(v) for v in row]
                for row in _surface_on_grid(fit.surface, np.linspace(0, 1, 7), grid_t)
            ]
        )
        assert np.max(values.max(axis=1) - values.min(axis=1)) < 1e-12

    def test_truncated_truth_recovered_within_tolerance(self):
        # Median per-column truncation error over seeds stays within 3
        # basis indices of the truth.
        errors = []
        for seed in (20, 21, 22):
            design, B = small_design(
                n=150, m1=10, m2=3, seed=seed, noise=0.02, zero_tail_rows=5
            )
            pilot = ridge_init(design, 1e-6, _rel_ridge(design))
            weights = adaptive_weights(pilot, 0.5, 10, 3)
            config = PenaltyConfig(kappa=1e-6, tau=2e-4, gamma=0.5, weights=weights)
            fit = fit_ngb(design, config, b_init=pilot)
            true_trunc = 5
            errors.extend(abs(int(k) - true_trunc) for k in fit.truncation)
        assert np.median(errors) <= 3

    def test_zero_pattern_suffix_closed_under_pinning(self):
        design, B = small_design(n=120, m1=8, m2=2, seed=23, noise=0.02, zero_tail_rows=4)
        pilot = ridge_init(design, 1e-6, _rel_ridge(design))
        weights = adaptive_weights(pilot, 0.5, 8, 2)
        config = PenaltyConfig(kappa=1e-6, tau=2e-4, gamma=0.5, weights=weights)
        fit = fit_ngb(design, config, b_init=pilot)
        coef = unvec(fit.b, 8, 2)
        eta = update_eta(fit.b, config)
        for l in range(2):
            for k in range(8):
                if eta[k, l] <= ETA_CLAMP:
                    assert np.all(coef[k:, l] == 0.0)

    def test_objective_history_matches_monotone_flag(self):
        design, _ = small_design(seed=24, noise=0.2)
        fit = fit_ngb(design, config_for(design, kappa=1e-4, tau=1e-4))
        increases = np.diff(fit.objective_history) > 1e-8
        assert fit.monotone == (not increases.any())

    def test_diverged_sigma_raises(self):
        design, _ = small_design(seed=25)
        design.y = design.y * 1e10
        # A huge response scale inflates sigma2 beyond the divergence guard.
        with pytest.raises(RuntimeError):
            fit_ngb(design, config_for(design, kappa=0.0, tau=1e-4))


def _rel_ridge(design):
    from tvcflm.ngb_solver import relative_ridge

    return relative_ridge(design)


def _surface_on_grid(surface, s_values, t_values):
    from tvcflm.design import eval_surface_grid

    return eval_surface_grid(surface, s_values, t_values)


class TestSuffixGroups:
    def test_norms_monotone(self):
        rng = np.random.default_rng(26)
        norms = suffix_group_norms(rng.standard_normal((7, 3)))
        assert np.all(np.diff(norms, axis=0) <= 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=12))
    def test_norms_match_direct_sum(self, values):
        col = np.array(values).reshape(-1, 1)
        norms = suffix_group_norms(col)
        for k in range(col.shape[0]):
            assert norms[k, 0] == pytest.approx(np.sum(np.abs(col[k:, 0])), rel=1e-12)


def test_proposition_equivalence_random_draws():
    rng = np.random.default_rng(27)
    for i in range(60):
        gamma = (0.3, 0.5, 0.7)[i % 3]
        m1, m2 = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        weights = rng.uniform(0.3, 3.0, (m1, m2))
        tau = float(rng.uniform(0.05, 5.0))
        config = PenaltyConfig(kappa=0.0, tau=tau, gamma=gamma, weights=weights)
        b = rng.standard_normal(m1 * m2)
        b[rng.uniform(size=b.size) < 0.25] = 0.0
        lam = lambda_from_tau(tau, gamma)
        norms = suffix_group_norms(unvec(b, m1, m2))
        bridge = lam * float(np.sum(weights * norms**gamma))
        assert profiled_penalty(b, config, n=1) == pytest.approx(bridge, abs=1e-10)
