import dataclasses

import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import simpson

from fofpls.basis import Grid, make_bspline_basis, project_curve
from fofpls.design import (
    BlockDiagonal,
    FunctionalSample,
    TermSet,
    build_design,
    design_columns_for_new,
)
from fofpls.metrics import CurveNorm, mse
from fofpls.pls import (
    ConvergenceError,
    fit_model,
    nipals_fit,
    predict,
    prediction_path,
    reconstruct_surfaces,
)

GRID = Grid.uniform(100)
BASIS_X = make_bspline_basis(6, 4, GRID)
BASIS_Y = make_bspline_basis(6, 4, GRID)


def in_span_predictors(n, n_pred, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    out = []
    for m in range(n_pred):
        coefs = scale * rng.standard_normal((n, BASIS_X.n_basis))
        out.append(
            FunctionalSample(GRID, coefs @ BASIS_X.eval_matrix.T, label=f"x{m + 1}")
        )
    return out


def linear_response(design_matrix, seed, noise=0.0):
    """Response curves generated exactly linearly in the design columns."""
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((design_matrix.shape[1], BASIS_Y.n_basis))
    c = design_matrix @ b
    if noise:
        c = c + noise * rng.standard_normal(c.shape)
    return FunctionalSample(GRID, c @ BASIS_Y.eval_matrix.T, label="y")


class TestNipalsFit:
    def test_single_column_response_weight_is_cross_covariance(self):
        # With a one-dimensional transformed response the first weight has
        # the closed form: the normalized cross-covariance vector.
        rng = np.random.default_rng(0)
        d = rng.standard_normal((50, 8))
        d -= d.mean(axis=0)
        c = rng.standard_normal((50, 1))
        c -= c.mean(axis=0)
        fit = nipals_fit(d, c, np.eye(8), np.eye(1), 1)
        expected = d.T @ c[:, 0]
        expected /= np.linalg.norm(expected)
        cosine = abs(expected @ fit.weights[:, 0])
        assert cosine > 1.0 - 1e-8

    def test_first_weight_matches_functional_closed_form(self):
        # Function-space oracle: the first weight function is the
        # normalized integrated cross-covariance; mapping its basis
        # coefficients through the metric square root must give the
        # NIPALS weight vector.
        n = 80
        xs = in_span_predictors(n, 1, seed=1)
        rng = np.random.default_rng(2)
        basis_y1 = make_bspline_basis(1, 1, GRID)  # constant response curves
        y_scalar = rng.standard_normal(n)
        y = FunctionalSample(GRID, np.repeat(y_scalar[:, None], len(GRID), axis=1), "y")
        design = build_design(xs, TermSet(main=(1,)), BASIS_X)
        y_mean = y.values.mean(axis=0)
        c = project_curve(y.values - y_mean, basis_y1)
        fit = nipals_fit(design.matrix, c, design.metric_sqrt, basis_y1.gram_sqrt, 1)

        x_centered = xs[0].values - xs[0].values.mean(axis=0)
        y_centered = y_scalar - y_scalar.mean()
        # integral over t of E[Y(t) X(s)] reduces to mean of y_i * X_i(s)
        kappa = (y_centered[:, None] * x_centered).mean(axis=0)
        w_oracle = BASIS_X.gram_sqrt @ project_curve(kappa, BASIS_X)
        w_oracle /= np.linalg.norm(w_oracle)
        cosine = abs(w_oracle @ fit.weights[:, 0])
        assert cosine > 1.0 - 1e-8

    def test_full_rank_equals_least_squares(self):
        xs = in_span_predictors(40, 1, seed=3)
        design = build_design(xs, TermSet(main=(1,)), BASIS_X)
        y = linear_response(design.matrix, seed=4)
        model = fit_model(y, xs, TermSet(main=(1,)), BASIS_Y, BASIS_X, BASIS_X.n_basis)
        assert model.training_mse < 1e-8

    @pytest.mark.parametrize("seed", [3, 4, 5])
    def test_score_variance_ordering_on_simulated_data(self, seed):
        # The leading component grabs the dominant cross-covariance
        # direction, which on the simulated interaction data also carries
        # the largest score variance.
        from fofpls.sim import SimConfig, setting_terms, simulate_dataset

        data = simulate_dataset(SimConfig(setting=1, lag=2, n_curves=100, seed=seed))
        model = fit_model(
            data.y_observed, data.x_true, setting_terms(1), BASIS_Y, BASIS_X, 5
        )
        variances = model.fit.scores.var(axis=0)
        assert np.all(variances[0] >= variances[1:])

    def test_rejects_too_many_components(self):
        rng = np.random.default_rng(7)
        d = rng.standard_normal((10, 4))
        c = rng.standard_normal((10, 2))
        with pytest.raises(ValueError, match="too many components"):
            nipals_fit(d, c, np.eye(4), np.eye(2), 5)

    def test_degenerate_design_raises(self):
        c = np.random.default_rng(8).standard_normal((10, 2))
        with pytest.raises(ValueError, match="degenerate design"):
            nipals_fit(np.zeros((10, 4)), c, np.eye(4), np.eye(2), 1)

    def test_inner_loop_iteration_cap_raises(self):
        rng = np.random.default_rng(9)
        d = rng.standard_normal((30, 6))
        d -= d.mean(axis=0)
        c = rng.standard_normal((30, 3))
        c -= c.mean(axis=0)
        with pytest.raises(ConvergenceError, match="component 1"):
            nipals_fit(d, c, np.eye(6), np.eye(3), 1, max_iter=1)

    def test_sign_convention(self):
        rng = np.random.default_rng(10)
        d = rng.standard_normal((40, 6))
        d -= d.mean(axis=0)
        c = rng.standard_normal((40, 3))
        c -= c.mean(axis=0)
        fit = nipals_fit(d, c, np.eye(6), np.eye(3), 3)
        for k in range(3):
            w = fit.weights[:, k]
            assert w[np.argmax(np.abs(w))] > 0


class TestProposition1Invariants:
    @pytest.fixture()
    def fitted(self):
        xs = in_span_predictors(50, 2, seed=11)
        terms = TermSet(main=(1, 2), inter=((1, 2),))
        design = build_design(xs, terms, BASIS_X)
        y = linear_response(design.matrix, seed=12, noise=0.5)
        model = fit_model(y, xs, terms, BASIS_Y, BASIS_X, 6)
        return model, y

    def test_score_orthogonality(self, fitted):
        model, _ = fitted
        t = model.fit.scores
        g = t.T @ t
        off = np.abs(g - np.diag(np.diag(g))).max()
        assert off < 1e-8 * np.abs(np.diag(g)).max()

    def test_residuals_orthogonal_to_scores(self, fitted):
        model, y = fitted
        fit = model.fit
        pi0 = fit.design.metric_sqrt.rmatmul(fit.design.matrix)
        pi_resid = pi0 - fit.scores @ fit.x_loadings.T
        assert np.abs(fit.scores.T @ pi_resid).max() < 1e-8 * np.linalg.norm(pi0)

        c = project_curve(y.values - y.values.mean(axis=0), BASIS_Y)
        lam0 = c @ BASIS_Y.gram_sqrt
        lam_resid = lam0 - fit.scores @ fit.y_loadings.T
        assert np.abs(fit.scores.T @ lam_resid).max() < 1e-8 * np.linalg.norm(lam0)

    def test_theta_reproduction(self, fitted):
        fitted = fitted[0]
        fit = fitted.fit
        theta = fit.weights @ np.linalg.inv(fit.x_loadings.T @ fit.weights) @ fit.y_loadings.T
        assert np.abs(theta - fit.theta).max() < 1e-10

    def test_training_mse_monotone_in_components(self):
        xs = in_span_predictors(60, 2, seed=13)
        terms = TermSet(main=(1, 2), inter=((1, 1),))
        design = build_design(xs, terms, BASIS_X)
        y = linear_response(design.matrix, seed=14, noise=1.0)
        norm = CurveNorm.trapezoid(GRID)
        last = np.inf
        model = fit_model(y, xs, terms, BASIS_Y, BASIS_X, 10)
        path = prediction_path(model.fit, model.fit.design.matrix)
        for k in range(10):
            val = mse(y.values, path[k], norm)
            assert val <= last * (1 + 1e-9)
            last = val


class TestPredict:
    def test_training_design_reproduces_fitted(self):
        xs = in_span_predictors(30, 1, seed=15)
        design = build_design(xs, TermSet(main=(1,)), BASIS_X)
        y = linear_response(design.matrix, seed=16, noise=0.2)
        model = fit_model(y, xs, TermSet(main=(1,)), BASIS_Y, BASIS_X, 3)
        npt.assert_array_equal(model.predict(xs), model.fitted())

    def test_zero_row_predicts_mean_curve(self):
        xs = in_span_predictors(30, 1, seed=17)
        y = linear_response(
            build_design(xs, TermSet(main=(1,)), BASIS_X).matrix, seed=18, noise=0.2
        )
        model = fit_model(y, xs, TermSet(main=(1,)), BASIS_Y, BASIS_X, 3)
        pred = predict(model.fit, np.zeros((1, model.fit.design.n_columns)))
        npt.assert_array_equal(pred[0], model.fit.y_mean)

    def test_column_mismatch_raises(self):
        xs = in_span_predictors(30, 1, seed=19)
        y = linear_response(
            build_design(xs, TermSet(main=(1,)), BASIS_X).matrix, seed=20, noise=0.2
        )
        model = fit_model(y, xs, TermSet(main=(1,)), BASIS_Y, BASIS_X, 2)
        with pytest.raises(ValueError, match="design mismatch"):
            predict(model.fit, np.zeros((1, 3)))

    def test_metric_factor_invariance(self):
        # Any factor F with F F' = metric spans the same fitted subspace,
        # so predictions cannot depend on choosing the symmetric root.
        xs = in_span_predictors(40, 2, seed=21)
        terms = TermSet(main=(1, 2), inter=((1, 2),))
        design = build_design(xs, terms, BASIS_X)
        y = linear_response(design.matrix, seed=22, noise=0.4)
        y_mean = y.values.mean(axis=0)
        c = project_curve(y.values - y_mean, BASIS_Y)

        chol = BlockDiagonal([np.linalg.cholesky(b) for b in design.metric.blocks])
        fit_sym = nipals_fit(design.matrix, c, design.metric_sqrt, BASIS_Y.gram_sqrt, 4)
        fit_chl = nipals_fit(design.matrix, c, chol, BASIS_Y.gram_sqrt, 4)

        d_new = design.matrix[:7]
        pred_sym = (design.metric_sqrt.rmatmul(d_new) @ fit_sym.theta) @ BASIS_Y.gram_inv_sqrt
        pred_chl = (chol.rmatmul(d_new) @ fit_chl.theta) @ BASIS_Y.gram_inv_sqrt
        npt.assert_allclose(
            pred_sym @ BASIS_Y.eval_matrix.T,
            pred_chl @ BASIS_Y.eval_matrix.T,
            atol=1e-8,
        )


class TestReconstruction:
    def test_zero_theta_gives_zero_surfaces(self):
        xs = in_span_predictors(30, 1, seed=23)
        terms = TermSet(main=(1,), inter=((1, 1),))
        design = build_design(xs, terms, BASIS_X)
        y = linear_response(design.matrix, seed=24, noise=0.2)
        model = fit_model(y, xs, terms, BASIS_Y, BASIS_X, 2)
        zeroed = dataclasses.replace(model.fit, theta=np.zeros_like(model.fit.theta))
        surf = reconstruct_surfaces(zeroed, GRID.points, GRID.points, GRID.points)
        assert np.abs(surf.betas[1]).max() == 0.0
        assert np.abs(surf.gammas[(1, 1)]).max() == 0.0

    def test_recovers_product_coefficient_surface(self):
        # Recovery experiment: data generated with beta(s, t) = s t and no
        # noise; the reconstructed surface must land within 10% relative
        # L2 error.
        n = 120
        rng = np.random.default_rng(25)
        basis_rich = make_bspline_basis(10, 4, GRID)
        coefs = rng.standard_normal((n, basis_rich.n_basis))
        x = FunctionalSample(GRID, coefs @ basis_rich.eval_matrix.T, "x1")
        w = CurveNorm.trapezoid(GRID).weights
        # y_i(t) = t * integral of s * x_i(s) ds
        moments = (x.values * w) @ GRID.points
        y = FunctionalSample(GRID, np.outer(moments, GRID.points), "y")
        model = fit_model(y, [x], TermSet(main=(1,)), BASIS_Y, basis_rich, 8)
        surf = model.surfaces(GRID.points, GRID.points, GRID.points)
        est = surf.betas[1]
        truth = np.outer(GRID.points, GRID.points)
        rel = np.sqrt(
            simpson(simpson((est - truth) ** 2, x=GRID.points), x=GRID.points)
            / simpson(simpson(truth ** 2, x=GRID.points), x=GRID.points)
        )
        assert rel < 0.1

    def test_surface_prediction_matches_theta_prediction(self):
        # Quadrature route: evaluate the reconstructed coefficient
        # surfaces pointwise on a dense knot-aligned grid and integrate
        # them against the centered predictor curves with Simpson's rule;
        # must agree with the coefficient-space prediction.
        from fofpls.pls import coefficient_blocks

        n = 50
        xs = in_span_predictors(n, 2, seed=26)
        terms = TermSet(main=(1, 2), inter=((1, 2), (2, 2)))
        design = build_design(xs, terms, BASIS_X)
        y = linear_response(design.matrix, seed=27, noise=0.3)
        model = fit_model(y, xs, terms, BASIS_Y, BASIS_X, 5)

        x_new = in_span_predictors(10, 2, seed=28)
        direct = model.predict(x_new)

        dense = np.linspace(0.0, 1.0, 601)  # interior knots land on grid points
        e_dense = BASIS_X.evaluate(dense)
        et = BASIS_Y.eval_matrix
        blocks = coefficient_blocks(model.fit)
        curves = {
            m: project_curve(s.values, BASIS_X) @ e_dense.T
            for m, s in enumerate(x_new, start=1)
        }
        means = {
            m: project_curve(design.x_mean_curves[m - 1], BASIS_X) @ e_dense.T
            for m in (1, 2)
        }

        quad = np.zeros((10, len(GRID)))
        for m in terms.main:
            beta_dense = e_dense @ blocks[("main", m)] @ et.T
            xc = curves[m] - means[m]
            quad += simpson(xc[:, :, None] * beta_dense[None, :, :], x=dense, axis=1)
        for idx, (m, nn) in enumerate(terms.inter):
            prod = curves[m][:, :, None] * curves[nn][:, None, :]
            k = BASIS_X.n_basis
            prod = prod - e_dense @ design.inter_col_means[idx].reshape(k, k) @ e_dense.T
            block = blocks[("inter", (m, nn))]
            for q in range(len(GRID)):
                gamma_t = e_dense @ (block @ et[q]) @ e_dense.T
                quad[:, q] += simpson(
                    simpson(prod * gamma_t[None], x=dense, axis=2), x=dense, axis=1
                )
        quad += model.fit.y_mean
        assert np.abs(quad - direct).max() < 1e-5


class TestPredictionPath:
    def test_path_matches_truncated_refits(self):
        xs = in_span_predictors(40, 2, seed=29)
        terms = TermSet(main=(1, 2))
        design = build_design(xs, terms, BASIS_X)
        y = linear_response(design.matrix, seed=30, noise=0.5)
        model = fit_model(y, xs, terms, BASIS_Y, BASIS_X, 6)
        x_new = in_span_predictors(8, 2, seed=31)
        d_new = design_columns_for_new(x_new, model.fit.design)
        path = prediction_path(model.fit, d_new)
        for h in (1, 3, 6):
            truncated = fit_model(y, xs, terms, BASIS_Y, BASIS_X, h)
            npt.assert_allclose(path[h - 1], truncated.predict(x_new), atol=1e-10)
