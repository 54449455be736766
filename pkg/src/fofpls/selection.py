"""Forward model selection and cross-validated hyperparameter choices.

Main effects are selected first, then quadratic/interaction pairs drawn
from the selected mains; a candidate enters only while it strictly
improves the training MSE.  The number of PLS components is chosen by a
50/50 split of the training data, and basis counts by a small grid
search.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSystem, make_bspline_basis
from .design import FunctionalSample, TermSet, build_design, design_columns_for_new
from .metrics import CurveNorm, mse, mspe
from .pls import fit_model, prediction_path

__all__ = [
    "SelectionTrace",
    "forward_select_main",
    "forward_select_interactions",
    "select_components",
    "select_basis_counts",
]

# Strictness guard for greedy acceptance: improvements below this relative
# size are floating-point ghosts (e.g. a duplicated predictor reshuffles
# rounding), not model improvements.
_IMPROVEMENT_RTOL = 1e-12


def _improves(candidate_mse: float, current_mse: float) -> bool:
    return candidate_mse < current_mse * (1.0 - _IMPROVEMENT_RTOL)


@dataclass(frozen=True)
class SelectionTrace:
    """Log of a forward-selection pass.

    ``steps`` records every candidate evaluation as (term, mse,
    accepted), where the MSE is the training criterion that ranks the
    candidates within a greedy round.  ``mse_path`` holds the held-out
    MSE of the model after each accepted term and is strictly decreasing
    by construction; ``baseline_mse`` is the held-out MSE of the model
    the pass started from (the intercept-only model for the main-effect
    pass).
    """

    steps: tuple
    final_terms: TermSet
    h_fixed: int
    mse_path: tuple
    baseline_mse: float


def _capped_components(h_fixed: int, n_curves: int, n_cols: int) -> int:
    return max(1, min(h_fixed, n_curves - 1, n_cols))


class _FoldGate:
    """Cross-validated acceptance gate for the greedy passes.

    Candidates are ranked by their full-sample training MSE (the greedy
    criterion), but a round's winner enters the model only if its K-fold
    cross-validated MSE strictly improves on the incumbent's.  Judging
    acceptance in-sample would admit every term: extra coefficient blocks
    almost always shave the training MSE a little, signal or not.
    """

    def __init__(self, y, predictors, basis_x, basis_y, h_fixed, split_seed, n_folds=5):
        n = y.n_curves
        if n < 2 * n_folds:
            raise ValueError(
                f"insufficient data: need at least {2 * n_folds} curves for "
                f"{n_folds}-fold stopping"
            )
        rng = np.random.default_rng(split_seed)
        self.folds = [np.sort(f) for f in np.array_split(rng.permutation(n), n_folds)]
        self.y = y
        self.predictors = predictors
        self.basis_x = basis_x
        self.basis_y = basis_y
        self.h_fixed = h_fixed
        self.norm = CurveNorm.trapezoid(y.grid)

    def cv_mse(self, terms: TermSet | None) -> float:
        """K-fold MSE of a term set; None scores the intercept-only model."""
        n = self.y.n_curves
        total = 0.0
        for hold in self.folds:
            keep = np.setdiff1d(np.arange(n), hold)
            y_fit = FunctionalSample(self.y.grid, self.y.values[keep], self.y.label)
            if terms is None:
                pred = np.broadcast_to(
                    y_fit.values.mean(axis=0), (hold.size, len(self.y.grid))
                )
            else:
                x_fit = [
                    FunctionalSample(p.grid, p.values[keep], p.label)
                    for p in self.predictors
                ]
                x_val = [
                    FunctionalSample(p.grid, p.values[hold], p.label)
                    for p in self.predictors
                ]
                n_cols = (
                    len(terms.main) * self.basis_x.n_basis
                    + len(terms.inter) * self.basis_x.n_basis ** 2
                )
                h = _capped_components(self.h_fixed, keep.size, n_cols)
                model = fit_model(y_fit, x_fit, terms, self.basis_y, self.basis_x, h)
                pred = model.predict(x_val)
            total += mse(self.y.values[hold], pred, self.norm) * hold.size
        return total / n


def _train_mse(y, predictors, terms, basis_x, basis_y, h_fixed) -> float:
    n_cols = len(terms.main) * basis_x.n_basis + len(terms.inter) * basis_x.n_basis ** 2
    h = _capped_components(h_fixed, y.n_curves, n_cols)
    return fit_model(y, predictors, terms, basis_y, basis_x, h).training_mse


def _greedy_rounds(y, predictors, basis_x, basis_y, h_fixed, gate, candidates, terms_of, current_cv):
    """Shared greedy loop: rank candidates by training MSE on the full
    sample, accept by cross-validated improvement."""
    accepted_terms: list = []
    steps: list = []
    cv_path: list = []
    remaining = list(candidates)
    while remaining:
        best, best_train = None, None
        scored = []
        for cand in remaining:
            train = _train_mse(
                y, predictors, terms_of(accepted_terms + [cand]), basis_x, basis_y, h_fixed
            )
            scored.append((cand, train))
            if best_train is None or train < best_train:
                best, best_train = cand, train
        cv = gate.cv_mse(terms_of(accepted_terms + [best]))
        accepted = _improves(cv, current_cv)
        for cand, train in scored:
            steps.append((cand, train, accepted and cand == best))
        if not accepted:
            break
        accepted_terms.append(best)
        remaining.remove(best)
        current_cv = cv
        cv_path.append(cv)
    return accepted_terms, steps, cv_path


def forward_select_main(
    y: FunctionalSample,
    predictors,
    basis_x: BasisSystem,
    basis_y: BasisSystem,
    h_fixed: int = 8,
    split_seed: int = 0,
) -> SelectionTrace:
    """Greedy forward selection of main-effect terms.

    Each round fits every remaining predictor alongside the accepted ones
    (at ``h_fixed`` components) and ranks them by training MSE, ties
    toward the lower index; the winner enters only while the
    cross-validated MSE strictly improves, starting against the
    intercept-only model.
    """
    if not predictors:
        raise ValueError("invalid input: empty predictor list")
    if h_fixed < 1:
        raise ValueError("invalid input: h_fixed must be >= 1")
    gate = _FoldGate(y, predictors, basis_x, basis_y, h_fixed, split_seed)
    baseline = gate.cv_mse(None)
    accepted, steps, cv_path = _greedy_rounds(
        y,
        predictors,
        basis_x,
        basis_y,
        h_fixed,
        gate,
        range(1, len(predictors) + 1),
        lambda mains: TermSet(main=tuple(mains)),
        baseline,
    )
    return SelectionTrace(
        steps=tuple(steps),
        final_terms=TermSet(main=tuple(accepted)),
        h_fixed=h_fixed,
        mse_path=tuple(cv_path),
        baseline_mse=baseline,
    )


def forward_select_interactions(
    y: FunctionalSample,
    predictors,
    main_terms: TermSet,
    basis_x: BasisSystem,
    basis_y: BasisSystem,
    h_fixed: int = 8,
    split_seed: int = 0,
) -> SelectionTrace:
    """Greedy forward selection of quadratic/interaction pairs.

    The candidate pool is every pair (m, n) with m <= n and both indices
    among the selected mains; rounds work as in
    :func:`forward_select_main`, starting from the mains-only model.
    """
    if not main_terms.main:
        raise ValueError("nothing to extend: empty main-term set")
    mains = main_terms.main
    ordered = sorted(mains)
    pool = [(m, n) for i, m in enumerate(ordered) for n in ordered[i:]]
    gate = _FoldGate(y, predictors, basis_x, basis_y, h_fixed, split_seed)
    baseline = gate.cv_mse(TermSet(main=mains))
    accepted, steps, cv_path = _greedy_rounds(
        y,
        predictors,
        basis_x,
        basis_y,
        h_fixed,
        gate,
        pool,
        lambda pairs: TermSet(main=mains, inter=tuple(pairs)),
        baseline,
    )
    return SelectionTrace(
        steps=tuple(steps),
        final_terms=TermSet(main=mains, inter=tuple(accepted)),
        h_fixed=h_fixed,
        mse_path=tuple(cv_path),
        baseline_mse=baseline,
    )


def select_components(
    y_train: FunctionalSample,
    predictors_train,
    terms: TermSet,
    basis_x: BasisSystem,
    basis_y: BasisSystem,
    h_max: int,
    split_seed: int = 0,
):
    """Pick the component count minimizing held-out MSPE on a 50/50 split.

    The supplied training data is split in half at random (seeded); the
    whole component path 1..h_max is fitted once on the first half and
    scored on the second.  Returns ``(h_opt, mspe_path)`` with ties going
    to the smaller count.
    """
    if h_max < 1:
        raise ValueError("invalid input: h_max must be >= 1")
    n = y_train.n_curves
    if n < 4:
        raise ValueError("insufficient data: need at least 4 curves to split 50/50")
    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(n)
    half = n // 2
    idx_fit, idx_val = np.sort(perm[:half]), np.sort(perm[half:])

    def subset(sample, idx):
        return FunctionalSample(sample.grid, sample.values[idx], sample.label)

    y_fit = subset(y_train, idx_fit)
    x_fit = [subset(p, idx_fit) for p in predictors_train]
    n_cols = len(terms.main) * basis_x.n_basis + len(terms.inter) * basis_x.n_basis ** 2
    h_cap = _capped_components(h_max, len(idx_fit), n_cols)
    model = fit_model(y_fit, x_fit, terms, basis_y, basis_x, h_cap)

    x_val = [subset(p, idx_val) for p in predictors_train]
    d_val = design_columns_for_new(x_val, model.fit.design)
    path_curves = prediction_path(model.fit, d_val)
    norm = CurveNorm.trapezoid(y_train.grid)
    y_val = y_train.values[idx_val]
    path = [mspe(y_val, path_curves[k], norm) for k in range(path_curves.shape[0])]
    h_opt = int(np.argmin(path)) + 1
    return h_opt, path


def select_basis_counts(
    y_train: FunctionalSample,
    predictors_train,
    terms: TermSet,
    candidates_y,
    candidates_x,
    h_fixed: int = 8,
    order: int = 4,
):
    """Grid-search basis counts by training MSE.

    Candidates exceeding the data resolution (or smaller than the spline
    order) are skipped with a warning; ties break toward the smaller
    predictor count, then the smaller response count.
    """
    if not list(candidates_y) or not list(candidates_x):
        raise ValueError("invalid input: empty candidate list")
    l_y = len(y_train.grid)
    l_x = len(predictors_train[0].grid)
    best = None
    best_mse = None
    for kx in sorted(set(int(k) for k in candidates_x)):
        if kx < order or kx > l_x:
            warnings.warn(f"skipping K_X={kx}: outside [{order}, {l_x}]", stacklevel=2)
            continue
        basis_x = make_bspline_basis(kx, order, predictors_train[0].grid)
        design = build_design(predictors_train, terms, basis_x)
        h = _capped_components(h_fixed, y_train.n_curves, design.n_columns)
        for ky in sorted(set(int(k) for k in candidates_y)):
            if ky < order or ky > l_y:
                warnings.warn(f"skipping K_Y={ky}: outside [{order}, {l_y}]", stacklevel=2)
                continue
            basis_y = make_bspline_basis(ky, order, y_train.grid)
            val = fit_model(
                y_train, predictors_train, terms, basis_y, basis_x, h, design=design
            ).training_mse
            if best_mse is None or val < best_mse:
                best, best_mse = (ky, kx), val
    if best is None:
        raise ValueError("no feasible basis-count candidates")
    return best
