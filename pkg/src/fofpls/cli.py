"""Command-line front end: simulate, select, fit, predict, benchmark."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as fio
from .basis import make_bspline_basis
from .design import TermSet
from .pls import fit_model
from .selection import (
    forward_select_interactions,
    forward_select_main,
    select_basis_counts,
    select_components,
)
from .sim import (
    DEFAULT_KX_CANDIDATES,
    DEFAULT_KY_CANDIDATES,
    MODEL_VARIANTS,
    SimConfig,
    run_benchmark,
    simulate_dataset,
)

ORDER = 4


def parse_terms(text: str) -> TermSet:
    """Parse a term-set flag such as ``main=2,3;inter=2:2,3:4``."""
    main: tuple = ()
    inter: tuple = ()
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ValueError(f"bad terms syntax near '{chunk}'")
        key, _, body = chunk.partition("=")
        key = key.strip().lower()
        if key == "main":
            main = tuple(int(v) for v in body.split(",") if v.strip())
        elif key == "inter":
            pairs = []
            for item in body.split(","):
                item = item.strip()
                if not item:
                    continue
                m, _, n = item.partition(":")
                if not n:
                    raise ValueError(f"bad interaction pair '{item}' (want m:n)")
                pairs.append((int(m), int(n)))
            inter = tuple(pairs)
        else:
            raise ValueError(f"unknown terms section '{key}'")
    return TermSet(main=main, inter=inter)


def format_terms(terms: TermSet) -> str:
    parts = []
    if terms.main:
        parts.append("main=" + ",".join(str(m) for m in terms.main))
    if terms.inter:
        parts.append("inter=" + ",".join(f"{m}:{n}" for m, n in terms.inter))
    return ";".join(parts)


def _int_list(text: str):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _load_inputs(y_path: str, x_paths):
    y, y_absc = fio.read_curves(y_path, label="y")
    xs = []
    x_absc = None
    for i, path in enumerate(x_paths, start=1):
        sample, absc = fio.read_curves(path, label=f"x{i}")
        xs.append(sample)
        x_absc = absc
    if any(not p.grid.matches(xs[0].grid) for p in xs):
        raise ValueError("grid mismatch between predictor files")
    return y, y_absc, xs, x_absc


def _cmd_simulate(args) -> int:
    config = SimConfig(
        setting=args.setting,
        lag=args.lag,
        n_curves=args.n,
        grid_len=args.grid,
        seed=args.seed,
    )
    data = simulate_dataset(config)
    os.makedirs(args.out_dir, exist_ok=True)
    pts = data.y_observed.grid.points
    fio.write_curves(os.path.join(args.out_dir, "y.csv"), data.y_observed.values, pts)
    for i, (noisy, true) in enumerate(zip(data.x_noisy, data.x_true), start=1):
        fio.write_curves(os.path.join(args.out_dir, f"x{i}.csv"), noisy.values, pts)
        fio.write_curves(os.path.join(args.out_dir, f"x{i}_true.csv"), true.values, pts)
    meta = {
        "setting": config.setting,
        "lag": config.lag,
        "n": config.n_curves,
        "grid": config.grid_len,
        "noise_sd_eps": config.noise_sd_eps,
        "noise_sd_u": config.noise_sd_u,
        "seed": config.seed,
    }
    fio._atomic_write(os.path.join(args.out_dir, "meta.json"), json.dumps(meta, indent=1))
    print(f"wrote 11 curve files + meta.json to {args.out_dir}")
    return 0


def _cmd_fit(args) -> int:
    y, y_absc, xs, _ = _load_inputs(args.y, args.x.split(","))
    terms = parse_terms(args.terms)
    terms.validate_against(len(xs))
    basis_y = make_bspline_basis(args.ky, ORDER, y.grid)
    basis_x = make_bspline_basis(args.kx, ORDER, xs[0].grid)
    if args.h_max is not None:
        h, _ = select_components(y, xs, terms, basis_x, basis_y, args.h_max, split_seed=args.seed)
    else:
        h = args.h
    model = fit_model(y, xs, terms, basis_y, basis_x, h)
    os.makedirs(args.out_dir, exist_ok=True)
    fio.save_model(model, os.path.join(args.out_dir, "model.json"), raw_y_abscissae=y_absc)
    fio.write_surfaces_csv(model, os.path.join(args.out_dir, "surfaces.csv"))
    fio.write_curves(os.path.join(args.out_dir, "fitted.csv"), model.fitted(), y_absc)
    print(
        f"fitted terms [{format_terms(terms)}] with K_Y={args.ky} K_X={args.kx} h={h}; "
        f"training MSE {model.training_mse:.6g}"
    )
    return 0


def _cmd_select(args) -> int:
    y, _, xs, _ = _load_inputs(args.y, args.x.split(","))
    ky_cands = _int_list(args.ky_candidates) if args.ky_candidates else (args.ky,)
    kx_cands = _int_list(args.kx_candidates) if args.kx_candidates else (args.kx,)
    all_main = TermSet(main=tuple(range(1, len(xs) + 1)))
    ky, kx = select_basis_counts(y, xs, all_main, ky_cands, kx_cands, h_fixed=args.h)
    basis_y = make_bspline_basis(ky, ORDER, y.grid)
    basis_x = make_bspline_basis(kx, ORDER, xs[0].grid)
    trace_main = forward_select_main(
        y, xs, basis_x, basis_y, h_fixed=args.h, split_seed=args.seed
    )
    if trace_main.final_terms.main:
        trace = forward_select_interactions(
            y, xs, trace_main.final_terms, basis_x, basis_y,
            h_fixed=args.h, split_seed=args.seed,
        )
        steps = trace_main.steps + trace.steps
        mse_path = trace_main.mse_path + trace.mse_path
        final = trace.final_terms
    else:
        steps, mse_path, final = trace_main.steps, trace_main.mse_path, trace_main.final_terms
    h_opt, mspe_path = select_components(
        y, xs, final if final.main else all_main, basis_x, basis_y, args.h_max, split_seed=args.seed
    )
    os.makedirs(args.out_dir, exist_ok=True)
    from .selection import SelectionTrace

    combined = SelectionTrace(
        steps=steps,
        final_terms=final,
        h_fixed=args.h,
        mse_path=mse_path,
        baseline_mse=trace_main.baseline_mse,
    )
    fio.write_selection_trace(
        combined,
        os.path.join(args.out_dir, "selection.json"),
        extra={"k_y": ky, "k_x": kx, "h_opt": h_opt, "mspe_path": list(mspe_path)},
    )
    print(f"selected [{format_terms(final)}] with K_Y={ky} K_X={kx} h={h_opt}")
    return 0


def _cmd_predict(args) -> int:
    model = fio.load_model(args.model)
    xs = []
    for i, path in enumerate(args.x.split(","), start=1):
        sample, _ = fio.read_curves(path, label=f"x{i}")
        xs.append(sample)
    pred = model.predict(xs)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(args.model, "r") as handle:
        y_absc = np.array(json.load(handle)["y_grid"], dtype=float)
    out = os.path.join(args.out_dir, "predictions.csv")
    fio.write_curves(out, pred, y_absc)
    print(f"wrote {pred.shape[0]} predicted curves to {out}")
    return 0


def _cmd_benchmark(args) -> int:
    config = SimConfig(
        setting=args.setting,
        lag=args.lag,
        n_curves=args.n,
        grid_len=args.grid,
        seed=args.seed,
    )
    models = tuple(m.strip() for m in args.models.split(",") if m.strip())
    report = run_benchmark(
        config,
        models=models,
        mc_reps=args.reps,
        n_train=args.n_train,
        ky_candidates=_int_list(args.ky_candidates),
        kx_candidates=_int_list(args.kx_candidates),
        h_fixed=args.h,
        h_max=args.h_max,
        workers=args.workers,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    fio.write_benchmark_report(report, os.path.join(args.out_dir, "report.csv"))
    fio._atomic_write(os.path.join(args.out_dir, "report.txt"), report.format_text() + "\n")
    print(report.format_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fofpls",
        description="Function-on-function interaction regression via metric-space PLS",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset as CSV files")
    p_sim.add_argument("--setting", type=int, choices=(1, 2), default=1)
    p_sim.add_argument("--lag", type=int, default=2)
    p_sim.add_argument("--n", type=int, default=300)
    p_sim.add_argument("--grid", type=int, default=100)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out-dir", default=".")
    p_sim.set_defaults(func=_cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit a model with a given term set")
    p_fit.add_argument("--y", required=True, help="response CSV")
    p_fit.add_argument("--x", required=True, help="comma-separated predictor CSVs")
    p_fit.add_argument("--terms", required=True, help="e.g. 'main=2,3;inter=2:2,3:4'")
    p_fit.add_argument("--ky", type=int, default=8)
    p_fit.add_argument("--kx", type=int, default=8)
    p_fit.add_argument("--h", type=int, default=8)
    p_fit.add_argument("--h-max", type=int, default=None, help="choose h by 50/50 CV instead of --h")
    p_fit.add_argument("--seed", type=int, default=0, help="CV split seed")
    p_fit.add_argument("--out-dir", default=".")
    p_fit.set_defaults(func=_cmd_fit)

    p_sel = sub.add_parser("select", help="forward term selection + component CV")
    p_sel.add_argument("--y", required=True)
    p_sel.add_argument("--x", required=True)
    p_sel.add_argument("--ky", type=int, default=8)
    p_sel.add_argument("--kx", type=int, default=8)
    p_sel.add_argument("--ky-candidates", default=None, help="comma list, e.g. 4,6,8,10")
    p_sel.add_argument("--kx-candidates", default=None)
    p_sel.add_argument("--h", type=int, default=8, help="components used during selection")
    p_sel.add_argument("--h-max", type=int, default=10)
    p_sel.add_argument("--seed", type=int, default=0, help="CV split seed")
    p_sel.add_argument("--out-dir", default=".")
    p_sel.set_defaults(func=_cmd_select)

    p_pred = sub.add_parser("predict", help="predict curves with a saved model")
    p_pred.add_argument("--model", required=True, help="model.json archive")
    p_pred.add_argument("--x", required=True)
    p_pred.add_argument("--out-dir", default=".")
    p_pred.set_defaults(func=_cmd_predict)

    p_bench = sub.add_parser("benchmark", help="Monte-Carlo comparison of model variants")
    p_bench.add_argument("--setting", type=int, choices=(1, 2), default=1)
    p_bench.add_argument("--lag", type=int, default=2)
    p_bench.add_argument("--n", type=int, default=300)
    p_bench.add_argument("--grid", type=int, default=100)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--models", default=",".join(MODEL_VARIANTS))
    p_bench.add_argument("--reps", type=int, default=50)
    p_bench.add_argument("--n-train", type=int, default=100)
    p_bench.add_argument("--ky-candidates", default=",".join(map(str, DEFAULT_KY_CANDIDATES)))
    p_bench.add_argument("--kx-candidates", default=",".join(map(str, DEFAULT_KX_CANDIDATES)))
    p_bench.add_argument("--h", type=int, default=8)
    p_bench.add_argument("--h-max", type=int, default=10)
    p_bench.add_argument("--workers", type=int, default=None)
    p_bench.add_argument("--out-dir", default=".")
    p_bench.set_defaults(func=_cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
