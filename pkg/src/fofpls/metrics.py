"""Scalar performance functionals with Riemann-sum L2 norms.

All curve norms are approximated by a weighted sum over the observation
grid; the default weights are trapezoid cell widths, which sum to the
grid span (1 on standardized grids).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import Grid

__all__ = ["CurveNorm", "mse", "mspe", "rmspe", "mape", "r2", "r2_pred"]

_DENOM_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class CurveNorm:
    """Quadrature weights defining the discrete L2 norm on a grid."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.grid),):
            raise ValueError("weights must match the grid length")
        if np.any(w <= 0.0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "weights", w)

    @classmethod
    def trapezoid(cls, grid: Grid) -> "CurveNorm":
        pts = grid.points
        w = np.empty_like(pts)
        w[0] = 0.5 * (pts[1] - pts[0])
        w[-1] = 0.5 * (pts[-1] - pts[-2])
        w[1:-1] = 0.5 * (pts[2:] - pts[:-2])
        return cls(grid=grid, weights=w)

    def squared_norms(self, curves: np.ndarray) -> np.ndarray:
        """Squared L2 norm of each curve in an (N, L) stack."""
        curves = np.atleast_2d(np.asarray(curves, dtype=float))
        return curves ** 2 @ self.weights

    def norms(self, curves: np.ndarray) -> np.ndarray:
        return np.sqrt(self.squared_norms(curves))


def _check_pair(y_true, y_other, norm: CurveNorm):
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_other = np.atleast_2d(np.asarray(y_other, dtype=float))
    if y_true.shape != y_other.shape:
        raise ValueError(
            f"shape mismatch: {y_true.shape} vs {y_other.shape}"
        )
    if y_true.shape[1] != len(norm.grid):
        raise ValueError("curves do not match the norm's grid length")
    return y_true, y_other


def _check_denominator(y_true: np.ndarray) -> None:
    worst = float(np.min(np.abs(y_true)))
    if worst < _DENOM_FLOOR:
        raise ValueError(
            "near-zero denominator: |y_true| drops below "
            f"{_DENOM_FLOOR:g} (min {worst:.3e}); relative metrics are undefined there"
        )


def mse(y_true, y_fit, norm: CurveNorm) -> float:
    """Mean over curves of the squared L2 norm of the error curve."""
    y_true, y_fit = _check_pair(y_true, y_fit, norm)
    return float(norm.squared_norms(y_true - y_fit).mean())


def mspe(y_true, y_pred, norm: CurveNorm) -> float:
    """Mean squared prediction error; the MSE formula on held-out curves."""
    return mse(y_true, y_pred, norm)


def rmspe(y_true, y_pred, norm: CurveNorm) -> float:
    """Root of the mean squared L2 norm of the relative error curve."""
    y_true, y_pred = _check_pair(y_true, y_pred, norm)
    _check_denominator(y_true)
    rel = (y_pred - y_true) / y_true
    return float(np.sqrt(norm.squared_norms(rel).mean()))


def mape(y_true, y_pred, norm: CurveNorm) -> float:
    """Mean over curves of the L2 norm of the absolute relative error."""
    y_true, y_pred = _check_pair(y_true, y_pred, norm)
    _check_denominator(y_true)
    rel = np.abs(y_pred - y_true) / y_true
    return float(norm.norms(rel).mean())


def r2(y_obs, y_hat, norm: CurveNorm) -> float:
    """Functional coefficient of determination.

    1 minus the ratio of summed squared error norms to summed squared
    deviations from the pointwise mean curve of ``y_obs``.
    """
    y_obs, y_hat = _check_pair(y_obs, y_hat, norm)
    if y_obs.shape[0] < 2:
        raise ValueError("r2 needs at least two curves")
    y_bar = y_obs.mean(axis=0)
    denom = float(norm.squared_norms(y_obs - y_bar).sum())
    if denom == 0.0:
        raise ValueError("undefined r2: all observed curves are identical")
    num = float(norm.squared_norms(y_hat - y_obs).sum())
    return 1.0 - num / denom


def r2_pred(y_test, y_pred, norm: CurveNorm) -> float:
    """Predictive R^2: the :func:`r2` formula on held-out pairs."""
    return r2(y_test, y_pred, norm)
