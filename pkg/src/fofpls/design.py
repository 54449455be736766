"""Stacked design assembly for main and quadratic/interaction effects.

Every curve is projected onto the predictor basis once; a main term
contributes its centered coefficient vector, and an interaction term
(m, n) contributes the row-major flattened outer product of the two
uncentered coefficient vectors, centered column-wise afterwards.  The
matching metric is block diagonal: the basis Gram on main blocks and the
Kronecker Gram on interaction blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSystem, Grid, TensorMetric, project_curve, tensor_metric

__all__ = [
    "FunctionalSample",
    "TermSet",
    "StackedDesign",
    "BlockDiagonal",
    "center_sample",
    "build_design",
    "design_columns_for_new",
]


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """N curves observed on a common grid.

    Parameters
    ----------
    grid : Grid
        Shared observation grid.
    values : np.ndarray
        (N, L) array; row i holds curve i at the grid points.
    label : str
        Free-text variable name used in reports and files.
    """

    grid: Grid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2:
            raise ValueError("values must be a (N, L) array")
        if vals.shape[0] < 1:
            raise ValueError("sample needs at least one curve")
        if vals.shape[1] != len(self.grid):
            raise ValueError(
                f"values have {vals.shape[1]} columns but the grid has {len(self.grid)} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"sample '{self.label}' contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def n_curves(self) -> int:
        return self.values.shape[0]


def center_sample(x: FunctionalSample):
    """Subtract the pointwise mean curve from every curve.

    Returns the centered sample together with the mean curve, which is
    needed later to center prediction-time data the same way.
    """
    mean_curve = x.values.mean(axis=0)
    return (
        FunctionalSample(grid=x.grid, values=x.values - mean_curve, label=x.label),
        mean_curve,
    )


@dataclass(frozen=True)
class TermSet:
    """Index sets of main effects and quadratic/interaction pairs.

    Indices are 1-based, matching the variable naming x1..xM used in data
    files.  Interaction pairs (m, n) are stored with m <= n; (m, m) is a
    quadratic term.
    """

    main: tuple = ()
    inter: tuple = ()

    def __post_init__(self):
        main = tuple(int(m) for m in self.main)
        inter = tuple((int(m), int(n)) for m, n in self.inter)
        if any(m < 1 for m in main):
            raise ValueError("invalid term: main indices are 1-based")
        if len(set(main)) != len(main):
            raise ValueError("invalid term: duplicate main index")
        for m, n in inter:
            if m < 1 or n < 1:
                raise ValueError("invalid term: interaction indices are 1-based")
            if m > n:
                raise ValueError(f"invalid term: pair ({m},{n}) must have m <= n")
        if len(set(inter)) != len(inter):
            raise ValueError("invalid term: duplicate interaction pair")
        object.__setattr__(self, "main", main)
        object.__setattr__(self, "inter", inter)

    def validate_against(self, n_predictors: int) -> None:
        used = set(self.main) | {m for p in self.inter for m in p}
        bad = sorted(i for i in used if i > n_predictors)
        if bad:
            raise ValueError(
                f"invalid term: predictor indices {bad} exceed the {n_predictors} supplied"
            )

    @property
    def n_terms(self) -> int:
        return len(self.main) + len(self.inter)


class BlockDiagonal:
    """Block-diagonal matrix kept in factored form.

    The full design metric is P x P with P up to a few thousand, but all
    its structure lives in small per-term blocks, so products with it are
    done block by block and the dense matrix is only materialized on
    request.
    """

    def __init__(self, blocks):
        self.blocks = [np.asarray(b, dtype=float) for b in blocks]
        self.sizes = [b.shape[0] for b in self.blocks]
        for b in self.blocks:
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise ValueError("blocks must be square matrices")
        bounds = np.cumsum([0] + self.sizes)
        self.slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        self.shape = (int(bounds[-1]), int(bounds[-1]))

    def rmatmul(self, a: np.ndarray) -> np.ndarray:
        """Compute ``a @ self`` for a (N, P) array."""
        a = np.asarray(a, dtype=float)
        if a.shape[-1] != self.shape[0]:
            raise ValueError("column count does not match the metric size")
        out = np.empty_like(a)
        for sl, b in zip(self.slices, self.blocks):
            out[..., sl] = a[..., sl] @ b
        return out

    def matmul(self, b: np.ndarray) -> np.ndarray:
        """Compute ``self @ b`` for a (P, M) array."""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError("row count does not match the metric size")
        out = np.empty_like(b)
        for sl, blk in zip(self.slices, self.blocks):
            out[sl] = blk @ b[sl]
        return out

    def toarray(self) -> np.ndarray:
        full = np.zeros(self.shape)
        for sl, b in zip(self.slices, self.blocks):
            full[sl, sl] = b
        return full


@dataclass(frozen=True, eq=False)
class StackedDesign:
    """Per-curve coefficient rows for every model term, plus the metric.

    Attributes
    ----------
    terms : TermSet
    basis_x : BasisSystem
        Shared predictor basis (K columns per main block, K^2 per
        interaction block).
    tensor : TensorMetric
        Kronecker metric of ``basis_x`` used on interaction blocks.
    matrix : np.ndarray or None
        (N, P) design; column blocks follow ``terms.main`` then
        ``terms.inter``.  None when the design was restored from an
        archive only to serve predictions.
    metric, metric_sqrt, metric_inv_sqrt : BlockDiagonal
    x_mean_curves : np.ndarray
        (M, L) training mean curve of every supplied predictor.
    main_col_means : np.ndarray
        (len(main), K) column means removed from each main block.
    inter_col_means : np.ndarray
        (len(inter), K^2) column means removed from each interaction block.
    n_predictors : int
        Number of predictors the design was built from.
    grid : Grid
        Training predictor grid.
    """

    terms: TermSet
    basis_x: BasisSystem
    tensor: TensorMetric
    matrix: np.ndarray | None
    metric: BlockDiagonal = field(repr=False)
    metric_sqrt: BlockDiagonal = field(repr=False)
    metric_inv_sqrt: BlockDiagonal = field(repr=False)
    x_mean_curves: np.ndarray = field(repr=False)
    main_col_means: np.ndarray = field(repr=False)
    inter_col_means: np.ndarray = field(repr=False)
    n_predictors: int = 0
    grid: Grid = None

    @property
    def n_columns(self) -> int:
        return self.metric.shape[0]

    def block_slices(self):
        """Yield (kind, term, slice) per block in design-column order."""
        for (kind, term), sl in zip(self._block_keys(), self.metric.slices):
            yield kind, term, sl

    def _block_keys(self):
        return [("main", m) for m in self.terms.main] + [
            ("inter", p) for p in self.terms.inter
        ]


def _metric_blocks(terms: TermSet, basis_x: BasisSystem, tensor: TensorMetric):
    grams = [basis_x.gram] * len(terms.main) + [tensor.gram2] * len(terms.inter)
    sqrts = [basis_x.gram_sqrt] * len(terms.main) + [tensor.gram2_sqrt] * len(terms.inter)
    inv_sqrts = [basis_x.gram_inv_sqrt] * len(terms.main) + [
        tensor.gram2_inv_sqrt
    ] * len(terms.inter)
    return BlockDiagonal(grams), BlockDiagonal(sqrts), BlockDiagonal(inv_sqrts)


def _check_predictors(predictors, grid: Grid | None = None):
    if not predictors:
        raise ValueError("invalid input: empty predictor list")
    ref = grid if grid is not None else predictors[0].grid
    n = predictors[0].n_curves
    for p in predictors:
        if not p.grid.matches(ref):
            raise ValueError(f"grid mismatch: predictor '{p.label}' is on a different grid")
        if p.n_curves != n:
            raise ValueError("predictors have differing curve counts")
    return ref, n


def _raw_blocks(predictors, terms: TermSet, basis_x: BasisSystem, coef_cache=None):
    """Uncentered coefficient blocks in design-column order."""
    if coef_cache is None:
        coef_cache = {}
    used = sorted(set(terms.main) | {m for p in terms.inter for m in p})
    for m in used:
        if m not in coef_cache:
            coef_cache[m] = project_curve(predictors[m - 1].values, basis_x)
    mains = [coef_cache[m] for m in terms.main]
    inters = []
    k = basis_x.n_basis
    for m, n in terms.inter:
        a, b = coef_cache[m], coef_cache[n]
        inters.append((a[:, :, None] * b[:, None, :]).reshape(a.shape[0], k * k))
    return mains, inters


def build_design(predictors, terms: TermSet, basis_x: BasisSystem) -> StackedDesign:
    """Assemble the stacked design matrix and block-diagonal metric.

    Parameters
    ----------
    predictors : list of FunctionalSample
        All M candidate predictors on one shared grid (the grid must
        match ``basis_x.grid``); only those named by ``terms`` enter the
        design.
    terms : TermSet
    basis_x : BasisSystem

    Returns
    -------
    StackedDesign
    """
    grid, _ = _check_predictors(predictors)
    if not grid.matches(basis_x.grid):
        raise ValueError("grid mismatch: predictors are not on the basis grid")
    terms.validate_against(len(predictors))
    if terms.n_terms == 0:
        raise ValueError("invalid term: the term set is empty")

    mains, inters = _raw_blocks(predictors, terms, basis_x)
    main_means = (
        np.array([b.mean(axis=0) for b in mains])
        if mains
        else np.zeros((0, basis_x.n_basis))
    )
    inter_means = (
        np.array([b.mean(axis=0) for b in inters])
        if inters
        else np.zeros((0, basis_x.n_basis ** 2))
    )
    centered = [b - mu for b, mu in zip(mains, main_means)] + [
        b - mu for b, mu in zip(inters, inter_means)
    ]
    matrix = np.hstack(centered)

    tensor = tensor_metric(basis_x)
    metric, metric_sqrt, metric_inv_sqrt = _metric_blocks(terms, basis_x, tensor)
    x_mean_curves = np.array([p.values.mean(axis=0) for p in predictors])
    return StackedDesign(
        terms=terms,
        basis_x=basis_x,
        tensor=tensor,
        matrix=matrix,
        metric=metric,
        metric_sqrt=metric_sqrt,
        metric_inv_sqrt=metric_inv_sqrt,
        x_mean_curves=x_mean_curves,
        main_col_means=main_means,
        inter_col_means=inter_means,
        n_predictors=len(predictors),
        grid=grid,
    )


def design_columns_for_new(x_new, design: StackedDesign) -> np.ndarray:
    """Design rows for new curves, centered with the training means.

    The new predictors must come in the same order and on the same grid
    as at training time.  Feeding the training predictors back returns
    exactly the training design matrix.
    """
    grid, _ = _check_predictors(x_new, design.grid)
    if len(x_new) != design.n_predictors:
        raise ValueError(
            f"expected {design.n_predictors} predictors, got {len(x_new)}"
        )
    mains, inters = _raw_blocks(x_new, design.terms, design.basis_x)
    centered = [b - mu for b, mu in zip(mains, design.main_col_means)] + [
        b - mu for b, mu in zip(inters, design.inter_col_means)
    ]
    return np.hstack(centered)
