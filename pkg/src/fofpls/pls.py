"""NIPALS partial least squares in the metric-weighted coefficient space.

The functional regression of a response curve on the stacked predictor
function is carried out as an ordinary multivariate PLS between
``D @ metric_sqrt`` (predictor coefficients pushed through the square
root of the block Gram metric) and ``C @ gram_sqrt`` (response
coefficients through the response Gram root).  Working in that weighted
space makes Euclidean covariances equal to the functional L2 covariances,
so the scores coincide with the functional PLS components.  Coefficient
surfaces are mapped back with the inverse roots.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSystem, Grid, project_curve
from .design import (
    FunctionalSample,
    StackedDesign,
    TermSet,
    build_design,
    design_columns_for_new,
)

__all__ = [
    "ConvergenceError",
    "PLSFit",
    "CoefficientSurfaces",
    "FittedModel",
    "nipals_fit",
    "predict",
    "prediction_path",
    "reconstruct_surfaces",
    "fit_model",
]


class ConvergenceError(RuntimeError):
    """Raised when a NIPALS inner loop fails to converge."""


def _nipals_core(
    pi,
    lam,
    n_components,
    tol=1e-10,
    max_iter=500,
    allow_early_stop=False,
    on_max_iter="raise",
):
    """Sequential NIPALS with response deflation.

    Returns (W, T, P, Q) where columns h hold, respectively, the weight,
    score, predictor loading and response regression loading of component
    h.  With ``allow_early_stop`` the loop returns fewer components once
    the residual is numerically exhausted instead of raising.  The inner
    power iteration stagnates when the two leading cross-covariance
    directions are nearly tied; ``on_max_iter='accept'`` keeps the last
    iterate in that case (the fitted subspace after the next deflation is
    insensitive to which of the tied directions is taken first).
    """
    pi = np.array(pi, dtype=float)
    lam = np.array(lam, dtype=float)
    n, p = pi.shape
    k_y = lam.shape[1]
    scale = np.linalg.norm(pi)
    floor = (max(scale, 1e-300) * 1e-13) ** 2

    ws, ts, ps, qs = [], [], [], []
    for comp in range(n_components):
        col_norms = np.linalg.norm(lam, axis=0)
        if not np.any(col_norms > 0):
            if allow_early_stop:
                break
            raise ValueError(
                f"degenerate design: response residual vanished at component {comp + 1}"
            )
        u = lam[:, int(np.argmax(col_norms))].copy()
        t_old = None
        for _ in range(max_iter):
            w = pi.T @ u
            w_norm = np.linalg.norm(w)
            if w_norm == 0.0:
                if allow_early_stop:
                    w = None
                    break
                raise ValueError(
                    f"degenerate design: zero cross-covariance at component {comp + 1}"
                )
            w /= w_norm
            t = pi @ w
            tq = lam.T @ t
            tq_norm = np.linalg.norm(tq)
            if tq_norm > 0.0:
                u = lam @ (tq / tq_norm)
            if t_old is not None:
                denom = np.linalg.norm(t_old)
                if denom == 0.0 or np.linalg.norm(t - t_old) <= tol * denom:
                    break
            t_old = t
        else:
            if on_max_iter != "accept":
                raise ConvergenceError(
                    f"NIPALS inner loop did not converge for component {comp + 1}"
                )
            warnings.warn(
                f"NIPALS component {comp + 1}: inner loop stopped at "
                f"{max_iter} iterations (near-tied directions); keeping the iterate",
                stacklevel=2,
            )
        if w is None:
            break
        # NIPALS signs are arbitrary; pin the largest-magnitude weight positive.
        j = int(np.argmax(np.abs(w)))
        if w[j] < 0.0:
            w = -w
            t = -t
        tt = float(t @ t)
        if tt <= floor:
            if allow_early_stop:
                break
            raise ValueError(
                f"degenerate design: zero-variance score at component {comp + 1}"
            )
        p_load = pi.T @ t / tt
        q_load = lam.T @ t / tt
        pi -= np.outer(t, p_load)
        lam -= np.outer(t, q_load)
        ws.append(w)
        ts.append(t)
        ps.append(p_load)
        qs.append(q_load)

    if not ws:
        raise ValueError("degenerate design: no component could be extracted")
    return (
        np.column_stack(ws),
        np.column_stack(ts),
        np.column_stack(ps),
        np.column_stack(qs),
    )


def _theta_from_loadings(w, p_load, q_load) -> np.ndarray:
    """Regression matrix W (P'W)^-1 Q' of the transformed-space model."""
    m = p_load.T @ w
    return np.linalg.solve(m.T, w.T).T @ q_load.T


@dataclass(frozen=True, eq=False)
class PLSFit:
    """Fitted PLS regression between transformed coefficient spaces.

    Attributes
    ----------
    n_components : int
    weights : np.ndarray
        (P, h) weight matrix; scores are extracted along these directions.
    scores : np.ndarray
        (N, h) mutually orthogonal training scores.
    x_loadings, y_loadings : np.ndarray
        (P, h) and (K_Y, h) loadings from regressing the residual blocks
        on each score.
    theta : np.ndarray
        (P, K_Y) regression matrix of the transformed response
        coefficients on the transformed design.
    design : StackedDesign
        Metadata (terms, bases, centering means) required for prediction.
    basis_y : BasisSystem
    y_mean : np.ndarray
        Training mean response curve, added back to predictions.
    """

    n_components: int
    weights: np.ndarray = field(repr=False)
    scores: np.ndarray = field(repr=False)
    x_loadings: np.ndarray = field(repr=False)
    y_loadings: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    design: StackedDesign = None
    basis_y: BasisSystem = None
    y_mean: np.ndarray = None


def nipals_fit(
    d: np.ndarray,
    c: np.ndarray,
    metric_x_sqrt,
    metric_y_sqrt: np.ndarray,
    n_components: int,
    tol: float = 1e-10,
    max_iter: int = 500,
    on_max_iter: str = "raise",
    early_stop: bool = False,
) -> PLSFit:
    """Run NIPALS on centered coefficient matrices through their metrics.

    Parameters
    ----------
    d : np.ndarray
        (N, P) centered design coefficients.
    c : np.ndarray
        (N, K_Y) centered response coefficients.
    metric_x_sqrt : BlockDiagonal or np.ndarray
        Square root of the design metric.
    metric_y_sqrt : np.ndarray
        Square root of the response Gram matrix.
    n_components : int
        Number of components h; requires ``1 <= h <= min(N - 1, P)``.
    on_max_iter : {'raise', 'accept'}
        Whether hitting the iteration cap raises :class:`ConvergenceError`
        or keeps the last iterate with a warning.
    early_stop : bool
        Return however many components the data supports instead of
        raising when the residual rank is exhausted before
        ``n_components`` (design matrices built from curves that live in
        a lower-dimensional span do this legitimately).
    """
    d = np.asarray(d, dtype=float)
    c = np.asarray(c, dtype=float)
    n, p = d.shape
    if n_components < 1:
        raise ValueError("too many components: h must be >= 1")
    if n_components > min(n - 1, p):
        raise ValueError(
            f"too many components: h={n_components} exceeds min(N-1, P)={min(n - 1, p)}"
        )
    pi = metric_x_sqrt.rmatmul(d) if hasattr(metric_x_sqrt, "rmatmul") else d @ metric_x_sqrt
    lam = c @ metric_y_sqrt
    w, t, p_load, q_load = _nipals_core(
        pi,
        lam,
        n_components,
        tol=tol,
        max_iter=max_iter,
        on_max_iter=on_max_iter,
        allow_early_stop=early_stop,
    )
    if early_stop and w.shape[1] < n_components:
        warnings.warn(
            f"residual rank exhausted: kept {w.shape[1]} of {n_components} components",
            stacklevel=2,
        )
    theta = _theta_from_loadings(w, p_load, q_load)
    return PLSFit(
        n_components=w.shape[1],
        weights=w,
        scores=t,
        x_loadings=p_load,
        y_loadings=q_load,
        theta=theta,
    )


def predict(fit: PLSFit, d_new: np.ndarray) -> np.ndarray:
    """Predict response curves for new design rows.

    ``d_new`` must come from :func:`design_columns_for_new` so the
    training centering is applied; the output is on the response grid
    with the training mean curve added back.
    """
    d_new = np.asarray(d_new, dtype=float)
    if d_new.shape[1] != fit.design.n_columns:
        raise ValueError(
            f"design mismatch: expected {fit.design.n_columns} columns, got {d_new.shape[1]}"
        )
    pi_new = fit.design.metric_sqrt.rmatmul(d_new)
    c_hat = (pi_new @ fit.theta) @ fit.basis_y.gram_inv_sqrt
    return c_hat @ fit.basis_y.eval_matrix.T + fit.y_mean


def prediction_path(fit: PLSFit, d_new: np.ndarray) -> np.ndarray:
    """Predicted curves for every component count 1..h in one pass.

    Returns an (h, N_new, L) array; slice ``[k - 1]`` equals the
    prediction of a fit truncated to k components.  Used by the
    cross-validation component search so a single NIPALS run covers the
    whole path.
    """
    d_new = np.asarray(d_new, dtype=float)
    pi = fit.design.metric_sqrt.rmatmul(d_new)
    h = fit.n_components
    lam_hat = np.zeros((d_new.shape[0], fit.y_loadings.shape[0]))
    out = np.empty((h, d_new.shape[0], len(fit.basis_y.grid)))
    back = fit.basis_y.gram_inv_sqrt @ fit.basis_y.eval_matrix.T
    for k in range(h):
        t = pi @ fit.weights[:, k]
        pi = pi - np.outer(t, fit.x_loadings[:, k])
        lam_hat = lam_hat + np.outer(t, fit.y_loadings[:, k])
        out[k] = lam_hat @ back + fit.y_mean
    return out


@dataclass(frozen=True, eq=False)
class CoefficientSurfaces:
    """Grid evaluations of the estimated coefficient functions.

    ``betas`` maps a main-effect index m to the (len(s), len(t)) surface;
    ``gammas`` maps a pair (m, n) to the (len(s), len(r), len(t)) array.
    ``coef_blocks`` holds the underlying basis-coefficient blocks keyed
    the same way (K x K_Y for mains, K x K x K_Y for interactions).
    """

    s_grid: np.ndarray
    r_grid: np.ndarray
    t_grid: np.ndarray
    betas: dict
    gammas: dict
    coef_blocks: dict


def coefficient_blocks(fit: PLSFit) -> dict:
    """Back-transformed coefficient blocks, one per model term."""
    gamma = fit.design.metric_inv_sqrt.matmul(fit.theta) @ fit.basis_y.gram_inv_sqrt
    k = fit.design.basis_x.n_basis
    k_y = fit.basis_y.n_basis
    blocks = {}
    for kind, term, sl in fit.design.block_slices():
        if kind == "main":
            blocks[("main", term)] = gamma[sl]
        else:
            blocks[("inter", term)] = gamma[sl].reshape(k, k, k_y)
    return blocks


def reconstruct_surfaces(fit: PLSFit, s_grid, r_grid, t_grid) -> CoefficientSurfaces:
    """Evaluate the estimated coefficient surfaces on given grids.

    Main-effect surfaces beta_m(s, t) are evaluated on ``s_grid`` x
    ``t_grid``; interaction surfaces gamma_mn(s, r, t) on the full 3-D
    grid.  All evaluations are plain basis expansions of the
    back-transformed coefficient blocks.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    r_grid = np.asarray(r_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    es = fit.design.basis_x.evaluate(s_grid)
    er = fit.design.basis_x.evaluate(r_grid)
    et = fit.basis_y.evaluate(t_grid)
    blocks = coefficient_blocks(fit)
    betas = {}
    gammas = {}
    for (kind, term), block in blocks.items():
        if kind == "main":
            betas[term] = es @ block @ et.T
        else:
            gammas[term] = np.einsum("sj,rl,jlk,tk->srt", es, er, block, et)
    return CoefficientSurfaces(
        s_grid=s_grid,
        r_grid=r_grid,
        t_grid=t_grid,
        betas=betas,
        gammas=gammas,
        coef_blocks=blocks,
    )


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A fully specified function-on-function interaction model.

    Wraps the PLS fit with everything needed to score new data: term
    set, both bases, response mean curve and the design centering means.
    """

    fit: PLSFit
    training_mse: float = np.nan

    @property
    def terms(self) -> TermSet:
        return self.fit.design.terms

    @property
    def basis_x(self) -> BasisSystem:
        return self.fit.design.basis_x

    @property
    def basis_y(self) -> BasisSystem:
        return self.fit.basis_y

    def predict(self, predictors) -> np.ndarray:
        """Predict response curves for new predictor samples."""
        d_new = design_columns_for_new(predictors, self.fit.design)
        return predict(self.fit, d_new)

    def fitted(self) -> np.ndarray:
        """Training-set fitted curves."""
        return predict(self.fit, self.fit.design.matrix)

    def surfaces(self, s_grid=None, r_grid=None, t_grid=None) -> CoefficientSurfaces:
        """Coefficient surfaces on evaluation grids (default 50 points each)."""
        if s_grid is None:
            s_grid = np.linspace(0.0, 1.0, 50)
        if r_grid is None:
            r_grid = s_grid
        if t_grid is None:
            t_grid = np.linspace(0.0, 1.0, 50)
        return reconstruct_surfaces(self.fit, s_grid, r_grid, t_grid)


def fit_model(
    y: FunctionalSample,
    predictors,
    terms: TermSet,
    basis_y: BasisSystem,
    basis_x: BasisSystem,
    n_components: int,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    design: StackedDesign | None = None,
) -> FittedModel:
    """Fit the interaction model end to end.

    Centers the response, builds the stacked design, runs metric-space
    NIPALS and returns a :class:`FittedModel`.  The inner-loop budget is
    larger than the :func:`nipals_fit` default because deflated residuals
    of noisy data often leave near-tied cross-covariance directions where
    the power iteration needs a few thousand passes to settle.

    Parameters
    ----------
    y : FunctionalSample
        Response curves; the grid must match ``basis_y.grid``.
    predictors : list of FunctionalSample
    terms : TermSet
    basis_y, basis_x : BasisSystem
    n_components : int
    design : StackedDesign, optional
        Reuse a design already built from the same predictors and terms
        (a response-basis search refits many times against one design).
    """
    if not y.grid.matches(basis_y.grid):
        raise ValueError("grid mismatch: response is not on the response-basis grid")
    if design is None:
        design = build_design(predictors, terms, basis_x)
    if y.n_curves != design.matrix.shape[0]:
        raise ValueError("response and predictors have differing curve counts")
    y_mean = y.values.mean(axis=0)
    c = project_curve(y.values - y_mean, basis_y)
    raw = nipals_fit(
        design.matrix,
        c,
        design.metric_sqrt,
        basis_y.gram_sqrt,
        n_components,
        tol=tol,
        max_iter=max_iter,
        on_max_iter="accept",
        early_stop=True,
    )
    fit = replace(raw, design=design, basis_y=basis_y, y_mean=y_mean)
    from .metrics import CurveNorm, mse  # local import to avoid a cycle

    training_mse = mse(y.values, predict(fit, design.matrix), CurveNorm.trapezoid(y.grid))
    return FittedModel(fit=fit, training_mse=training_mse)
