"""File formats: curve CSVs, model archives, surfaces, reports.

Curve CSV layout: one row per curve, first column a curve id, remaining
columns the values at the shared grid; the header row carries the grid
abscissae.  Model archives are JSON; all floats are written with repr
semantics so parsing them back is exact and archived models predict
bit-for-bit identically.  Every writer goes through a
write-temp-then-rename so readers never see partial files.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict

import numpy as np

from .basis import Grid, basis_from_knots, tensor_metric
from .design import (
    BlockDiagonal,
    FunctionalSample,
    StackedDesign,
    TermSet,
    _metric_blocks,
)
from .pls import FittedModel, PLSFit
from .selection import SelectionTrace
from .sim import BenchmarkReport

__all__ = [
    "read_curves",
    "write_curves",
    "save_model",
    "load_model",
    "write_surfaces_csv",
    "write_selection_trace",
    "write_benchmark_report",
]

ARCHIVE_FORMAT_VERSION = 1

_FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return _FLOAT_FMT % float(x)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_curves(path: str, values: np.ndarray, abscissae, ids=None) -> None:
    """Write curves as CSV: id column plus one column per grid point."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    abscissae = np.asarray(abscissae, dtype=float)
    if values.shape[1] != abscissae.size:
        raise ValueError("values and abscissae lengths differ")
    if ids is None:
        ids = range(1, values.shape[0] + 1)
    lines = ["id," + ",".join(_fmt(a) for a in abscissae)]
    for i, row in zip(ids, values):
        lines.append(f"{i}," + ",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_curves(path: str, label: str = ""):
    """Read a curve CSV.

    Returns
    -------
    (sample, abscissae) : (FunctionalSample, np.ndarray)
        The sample carries the grid standardized to [0, 1]; the raw
        abscissae from the header are returned alongside.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing file: {path}")
    with open(path, "r", newline="") as handle:
        header = handle.readline().strip()
        if not header:
            raise ValueError(f"{path}: empty file")
        cells = header.split(",")
        if cells[0].strip().lower() != "id":
            raise ValueError(f"{path}: first header cell must be 'id'")
        try:
            abscissae = np.array([float(c) for c in cells[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric grid header") from exc
        rows = []
        for ln, line in enumerate(handle, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != abscissae.size + 1:
                raise ValueError(f"{path}:{ln}: expected {abscissae.size + 1} cells")
            rows.append([float(p) for p in parts[1:]])
    values = np.array(rows, dtype=float)
    if values.size == 0:
        raise ValueError(f"{path}: no curves")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{path}: contains NaN or infinite cells")
    grid = Grid.standardized(abscissae)
    return FunctionalSample(grid, values, label=label or os.path.basename(path)), abscissae


def save_model(model: FittedModel, path: str, raw_y_abscissae=None, raw_x_abscissae=None):
    """Persist a fitted model as a JSON archive.

    The archive stores the term set, both basis specifications, every
    centering mean and the regression matrix; metric factors are rebuilt
    deterministically from the basis specs on load, so restored models
    reproduce predictions exactly.
    """
    fit = model.fit
    design = fit.design
    if raw_y_abscissae is None:
        raw_y_abscissae = fit.basis_y.grid.points
    if raw_x_abscissae is None:
        raw_x_abscissae = design.grid.points
    payload = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "terms": {"main": list(design.terms.main), "inter": [list(p) for p in design.terms.inter]},
        "basis_y": {
            "n_basis": fit.basis_y.n_basis,
            "order": fit.basis_y.order,
            "knots": fit.basis_y.knots.tolist(),
        },
        "basis_x": {
            "n_basis": design.basis_x.n_basis,
            "order": design.basis_x.order,
            "knots": design.basis_x.knots.tolist(),
        },
        "n_components": fit.n_components,
        "n_predictors": design.n_predictors,
        "y_grid": np.asarray(raw_y_abscissae, dtype=float).tolist(),
        "x_grid": np.asarray(raw_x_abscissae, dtype=float).tolist(),
        "y_mean": fit.y_mean.tolist(),
        "x_mean_curves": design.x_mean_curves.tolist(),
        "main_col_means": design.main_col_means.tolist(),
        "inter_col_means": design.inter_col_means.tolist(),
        "theta": fit.theta.tolist(),
        "weights": fit.weights.tolist(),
        "x_loadings": fit.x_loadings.tolist(),
        "y_loadings": fit.y_loadings.tolist(),
        "training_mse": float(model.training_mse),
    }
    _atomic_write(path, json.dumps(payload, indent=1))


def load_model(path: str) -> FittedModel:
    """Restore a :func:`save_model` archive."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing file: {path}")
    with open(path, "r") as handle:
        payload = json.load(handle)
    version = payload.get("format_version")
    if version != ARCHIVE_FORMAT_VERSION:
        raise ValueError(f"unsupported archive format_version: {version!r}")
    terms = TermSet(
        main=tuple(payload["terms"]["main"]),
        inter=tuple(tuple(p) for p in payload["terms"]["inter"]),
    )
    y_grid = Grid.standardized(np.array(payload["y_grid"], dtype=float))
    x_grid = Grid.standardized(np.array(payload["x_grid"], dtype=float))
    basis_y = basis_from_knots(payload["basis_y"]["knots"], payload["basis_y"]["order"], y_grid)
    basis_x = basis_from_knots(payload["basis_x"]["knots"], payload["basis_x"]["order"], x_grid)
    tensor = tensor_metric(basis_x)
    metric, metric_sqrt, metric_inv_sqrt = _metric_blocks(terms, basis_x, tensor)
    design = StackedDesign(
        terms=terms,
        basis_x=basis_x,
        tensor=tensor,
        matrix=None,
        metric=metric,
        metric_sqrt=metric_sqrt,
        metric_inv_sqrt=metric_inv_sqrt,
        x_mean_curves=np.array(payload["x_mean_curves"], dtype=float),
        main_col_means=np.array(payload["main_col_means"], dtype=float),
        inter_col_means=np.array(payload["inter_col_means"], dtype=float),
        n_predictors=int(payload["n_predictors"]),
        grid=x_grid,
    )
    fit = PLSFit(
        n_components=int(payload["n_components"]),
        weights=np.array(payload["weights"], dtype=float),
        scores=np.zeros((0, int(payload["n_components"]))),
        x_loadings=np.array(payload["x_loadings"], dtype=float),
        y_loadings=np.array(payload["y_loadings"], dtype=float),
        theta=np.array(payload["theta"], dtype=float),
        design=design,
        basis_y=basis_y,
        y_mean=np.array(payload["y_mean"], dtype=float),
    )
    return FittedModel(fit=fit, training_mse=float(payload["training_mse"]))


def write_surfaces_csv(model: FittedModel, path: str, n_points: int = 50) -> None:
    """Export coefficient surfaces in long format.

    Columns: kind (main|inter), m, n, s, r, t, value.  Main-effect
    surfaces leave the n and r cells empty.
    """
    grid_1d = np.linspace(0.0, 1.0, int(n_points))
    surfaces = model.surfaces(grid_1d, grid_1d, grid_1d)
    lines = ["kind,m,n,s,r,t,value"]
    for m in sorted(surfaces.betas):
        beta = surfaces.betas[m]
        for i, s in enumerate(grid_1d):
            for k, t in enumerate(grid_1d):
                lines.append(f"main,{m},,{_fmt(s)},,{_fmt(t)},{_fmt(beta[i, k])}")
    for (m, n) in sorted(surfaces.gammas):
        gamma = surfaces.gammas[(m, n)]
        for i, s in enumerate(grid_1d):
            for j, r in enumerate(grid_1d):
                for k, t in enumerate(grid_1d):
                    lines.append(
                        f"inter,{m},{n},{_fmt(s)},{_fmt(r)},{_fmt(t)},{_fmt(gamma[i, j, k])}"
                    )
    _atomic_write(path, "\n".join(lines) + "\n")


def write_selection_trace(trace: SelectionTrace, path: str, extra: dict | None = None):
    """Persist a forward-selection trace as JSON."""
    payload = {
        "h_fixed": trace.h_fixed,
        "baseline_mse": trace.baseline_mse,
        "mse_path": list(trace.mse_path),
        "final_terms": {
            "main": list(trace.final_terms.main),
            "inter": [list(p) for p in trace.final_terms.inter],
        },
        "steps": [
            {
                "term": list(term) if isinstance(term, tuple) else term,
                "mse": val,
                "accepted": accepted,
            }
            for term, val, accepted in trace.steps
        ],
    }
    if extra:
        payload.update(extra)
    _atomic_write(path, json.dumps(payload, indent=1))


def write_benchmark_report(report: BenchmarkReport, path: str) -> None:
    """Write the benchmark table as CSV, one row per model variant."""
    cols = [
        "model",
        "n_reps",
        "mspe_mean",
        "mspe_sd",
        "mspe_se",
        "rmspe_mean",
        "rmspe_sd",
        "rmspe_se",
        "mape_mean",
        "mape_sd",
        "mape_se",
    ]
    lines = [",".join(cols)]
    for row in report.rows:
        rec = asdict(row)
        cells = [str(rec["model"]), str(rec["n_reps"])]
        cells += [_fmt(rec[c]) for c in cols[2:]]
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")
