"""B-spline bases on [0, 1]: evaluation, exact Gram matrices, square roots.

Curves are represented by their values on a shared grid and are moved in
and out of coefficient space by least-squares projection onto a clamped
B-spline basis.  The Gram matrix of the basis (and the Kronecker Gram of
the induced tensor-product basis) turns Euclidean operations on
coefficient vectors into genuine L2 operations on functions, which is
what the PLS solver relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline

__all__ = [
    "Grid",
    "BasisSystem",
    "TensorMetric",
    "make_bspline_basis",
    "symmetric_sqrt",
    "project_curve",
    "tensor_metric",
]


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing observation points spanning the unit interval.

    Parameters
    ----------
    points : np.ndarray
        Abscissae in [0, 1]; the first point must be 0 and the last 1.
        Use :meth:`standardized` to map raw abscissae affinely onto [0, 1].
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(pts) <= 0.0):
            raise ValueError("invalid grid: points must be strictly increasing")
        if abs(pts[0]) > 1e-12 or abs(pts[-1] - 1.0) > 1e-12:
            raise ValueError(
                "invalid grid: expected points spanning [0, 1]; "
                "use Grid.standardized for raw abscissae"
            )
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, n: int) -> "Grid":
        """Equally spaced grid of ``n`` points on [0, 1]."""
        return cls(np.linspace(0.0, 1.0, int(n)))

    @classmethod
    def standardized(cls, points) -> "Grid":
        """Map arbitrary increasing abscissae affinely onto [0, 1]."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least two points")
        span = pts[-1] - pts[0]
        if span <= 0.0:
            raise ValueError("invalid grid: zero or negative span")
        return cls((pts - pts[0]) / span)

    def __len__(self) -> int:
        return self.points.size

    def matches(self, other: "Grid") -> bool:
        return self.points.shape == other.points.shape and np.array_equal(
            self.points, other.points
        )


def symmetric_sqrt(a: np.ndarray, tol: float | None = None):
    """Symmetric square root and inverse square root of an SPD matrix.

    Uses the eigendecomposition ``A = V diag(w) V'`` and clamps eigenvalues
    at ``tol`` (default ``1e-12 * max(w)``), so mildly rank-deficient inputs
    produce a usable pseudo-root instead of NaNs.

    Parameters
    ----------
    a : np.ndarray
        Symmetric positive semidefinite matrix.
    tol : float, optional
        Eigenvalue clamp; eigenvalues below ``-tol`` raise.

    Returns
    -------
    (sqrt, inv_sqrt) : tuple of np.ndarray
        Symmetric matrices with ``sqrt @ sqrt ~= a`` and
        ``inv_sqrt @ sqrt ~= I``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    scale = float(np.abs(a).max()) if a.size else 0.0
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * max(scale, 1.0)):
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    w_max = float(w[-1])
    if tol is None:
        tol = 1e-12 * max(w_max, 0.0)
    if float(w[0]) < -tol:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    if w_max < tol or w_max <= 0.0:
        raise ValueError("singular metric: all eigenvalues below tolerance")
    w_cl = np.maximum(w, tol if tol > 0.0 else np.finfo(float).tiny)
    root = (v * np.sqrt(w_cl)) @ v.T
    inv_root = (v / np.sqrt(w_cl)) @ v.T
    return 0.5 * (root + root.T), 0.5 * (inv_root + inv_root.T)


def _clamped_uniform_knots(n_basis: int, order: int) -> np.ndarray:
    """Open/clamped knot vector on [0, 1] with uniform interior knots."""
    n_interior = n_basis - order
    interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    return np.concatenate([np.zeros(order), interior, np.ones(order)])


def _gram_gauss_legendre(knots: np.ndarray, order: int) -> np.ndarray:
    """Exact Gram matrix by per-span Gauss-Legendre quadrature.

    The integrand phi_j * phi_k is a polynomial of degree 2*(order-1) on
    each knot span, so ``order`` nodes per span integrate it exactly.
    """
    degree = order - 1
    breaks = np.unique(knots)
    x_gl, w_gl = leggauss(degree + 1)
    nodes = []
    weights = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        nodes.append(half * x_gl + 0.5 * (a + b))
        weights.append(half * w_gl)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    e = BSpline.design_matrix(nodes, knots, degree).toarray()
    return e.T @ (weights[:, None] * e)


@dataclass(frozen=True, eq=False)
class BasisSystem:
    """Clamped B-spline basis with its evaluation and metric matrices.

    Attributes
    ----------
    order : int
        Spline order (polynomial degree + 1).
    n_basis : int
        Number of basis functions K.
    knots : np.ndarray
        Full clamped knot vector over [0, 1].
    grid : Grid
        Grid the basis was built against; ``eval_matrix`` is the L x K
        matrix of basis values on it.
    gram : np.ndarray
        K x K matrix of exact pairwise L2 inner products.
    gram_sqrt, gram_inv_sqrt : np.ndarray
        Symmetric square root of ``gram`` and its inverse.
    """

    order: int
    n_basis: int
    knots: np.ndarray
    grid: Grid
    eval_matrix: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    gram_sqrt: np.ndarray = field(repr=False)
    gram_inv_sqrt: np.ndarray = field(repr=False)

    def evaluate(self, points) -> np.ndarray:
        """Basis values at arbitrary points in [0, 1], shape (len(points), K)."""
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        return BSpline.design_matrix(pts, self.knots, self.order - 1).toarray()


def make_bspline_basis(n_basis: int, order: int, grid: Grid) -> BasisSystem:
    """Build a clamped B-spline basis of size ``n_basis`` on [0, 1].

    Interior knots are uniform and boundary knots have multiplicity
    ``order``.  The Gram matrix is assembled by per-span Gauss-Legendre
    quadrature (exact for the polynomial integrand) and its symmetric
    square root is precomputed.

    Parameters
    ----------
    n_basis : int
        Number of basis functions K; must satisfy ``K >= order``.
    order : int
        Spline order (4 = cubic).
    grid : Grid
        Observation grid; its evaluation matrix is cached on the result.
    """
    if order < 1:
        raise ValueError("invalid configuration: order must be >= 1")
    if n_basis < order:
        raise ValueError(
            f"invalid configuration: n_basis ({n_basis}) must be >= order ({order})"
        )
    if not isinstance(grid, Grid):
        grid = Grid(np.asarray(grid, dtype=float))
    knots = _clamped_uniform_knots(n_basis, order)
    eval_matrix = BSpline.design_matrix(grid.points, knots, order - 1).toarray()
    gram = _gram_gauss_legendre(knots, order)
    gram = 0.5 * (gram + gram.T)
    gram_sqrt, gram_inv_sqrt = symmetric_sqrt(gram)
    return BasisSystem(
        order=order,
        n_basis=n_basis,
        knots=knots,
        grid=grid,
        eval_matrix=eval_matrix,
        gram=gram,
        gram_sqrt=gram_sqrt,
        gram_inv_sqrt=gram_inv_sqrt,
    )


def basis_from_knots(knots, order: int, grid: Grid) -> BasisSystem:
    """Rebuild a :class:`BasisSystem` from a stored knot vector."""
    knots = np.asarray(knots, dtype=float)
    n_basis = knots.size - order
    if n_basis < order:
        raise ValueError("invalid configuration: knot vector too short for order")
    eval_matrix = BSpline.design_matrix(grid.points, knots, order - 1).toarray()
    gram = _gram_gauss_legendre(knots, order)
    gram = 0.5 * (gram + gram.T)
    gram_sqrt, gram_inv_sqrt = symmetric_sqrt(gram)
    return BasisSystem(
        order=order,
        n_basis=n_basis,
        knots=knots,
        grid=grid,
        eval_matrix=eval_matrix,
        gram=gram,
        gram_sqrt=gram_sqrt,
        gram_inv_sqrt=gram_inv_sqrt,
    )


def project_curve(values: np.ndarray, basis: BasisSystem) -> np.ndarray:
    """Least-squares coefficients of discretized curves in the basis.

    Parameters
    ----------
    values : np.ndarray
        Curve values on ``basis.grid``; either a single curve of length L
        or a stack of shape (N, L).
    basis : BasisSystem

    Returns
    -------
    np.ndarray
        Coefficient vector of length K, or (N, K) for stacked input.
    """
    values = np.asarray(values, dtype=float)
    single = values.ndim == 1
    v2 = values[None, :] if single else values
    n_pts = len(basis.grid)
    if v2.shape[1] != n_pts:
        raise ValueError(
            f"values have {v2.shape[1]} points but the basis grid has {n_pts}"
        )
    if n_pts < basis.n_basis:
        raise ValueError(
            "underdetermined projection: grid is coarser than the basis dimension"
        )
    coef, _, rank, _ = np.linalg.lstsq(basis.eval_matrix, v2.T, rcond=None)
    if rank < basis.n_basis:
        raise ValueError(
            "underdetermined projection: evaluation matrix is rank deficient"
        )
    return coef[:, 0] if single else coef.T


@dataclass(frozen=True, eq=False)
class TensorMetric:
    """Gram matrix of the tensor-product basis psi_j(s) psi_l(r).

    By Fubini the K^2 x K^2 tensor Gram is the Kronecker product of the
    univariate Gram with itself, and likewise for its square root.  Flat
    indexing is row-major: the pair (j, l) maps to column j*K + l.
    """

    base: BasisSystem
    gram2: np.ndarray = field(repr=False)
    gram2_sqrt: np.ndarray = field(repr=False)
    gram2_inv_sqrt: np.ndarray = field(repr=False)


def tensor_metric(basis: BasisSystem) -> TensorMetric:
    """Kronecker Gram (and square roots) of ``basis`` with itself."""
    return TensorMetric(
        base=basis,
        gram2=np.kron(basis.gram, basis.gram),
        gram2_sqrt=np.kron(basis.gram_sqrt, basis.gram_sqrt),
        gram2_inv_sqrt=np.kron(basis.gram_inv_sqrt, basis.gram_inv_sqrt),
    )
