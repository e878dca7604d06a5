"""Command-line front end: ``threshsplit <subcommand> ...``.

Exit codes: 0 success, 1 computation error (a JSON error record goes to
stderr), 2 usage error.  Every run writes a manifest echoing its
configuration so it can be replayed with ``main(manifest["argv"])``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .bandwidth import default_c_grid, parse_c_grid, select_bandwidth
from .contour import implied_quantile, quantile_area, raster_contour
from .data import load_csv_dataset, load_raster_grid, make_eval_window
from .errors import ThreshSplitError
from .inference import (
    full_residuals,
    invert_ci,
    lr_critical_value,
    lr_null_cdf,
    lr_test,
    nw_bandwidths,
    theta_vcov,
    xi_lr_hat,
)
from .kernels import FAMILIES, KernelSpec, kappa2
from .local_threshold import bandwidth_from_c, estimate_threshold_curve
from .simulation import (
    DriftParams,
    SimConfig,
    run_coverage_study,
    run_rejection_study,
    simulate_argmax,
)
from .two_step import estimate_theta, gamma_at_observations

TABLE_LEVELS = (0.80, 0.85, 0.90, 0.925, 0.95, 0.975, 0.99)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*a, **kw)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _pair(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return tuple(vals)


def _add_common(p):
    p.add_argument("--kernel", choices=FAMILIES, default="gaussian")
    p.add_argument("--threads", type=int, default=None, help="worker cap (fallback: THRESHSPLIT_THREADS)")
    p.add_argument("--seed", type=int, default=42)


def _add_data(p, bandwidth_required=True, s_flag=True):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--y", required=True)
    p.add_argument("--x", default="", help="comma-separated regressor columns")
    p.add_argument("--q", required=True)
    # in `test`, --s is the evaluation point and the column is named by --s-col
    flags = ("--s", "--s-col") if s_flag else ("--s-col",)
    p.add_argument(*flags, dest="s_col", metavar="S", required=True, help="splitting covariate column")
    p.add_argument("--no-intercept", action="store_true", help="do not prepend a constant column")
    p.add_argument("--standardize", action="store_true", help="center and scale q and s")
    if bandwidth_required is not None:
        g = p.add_mutually_exclusive_group(required=bandwidth_required)
        g.add_argument("--c", type=float, help="bandwidth constant, b_n = c n^{-1/2}")
        g.add_argument("--bn", type=float, help="bandwidth b_n")
    p.add_argument("--trim", type=_pair, default=(0.05, 0.95), help="candidate quantile bounds lo,hi")
    p.add_argument("--coverage", type=float, default=0.7, help="share of s in the window")
    p.add_argument("--n-grid", type=int, default=100)
    p.add_argument("--grid-mode", choices=("grid", "observed"), default="grid")
    p.add_argument("--out-dir", default=".")


def build_parser():
    parser = _Parser(prog="threshsplit", description="Threshold regression with a varying threshold.")
    parser.add_argument("--version", action="version", version=f"threshsplit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="threshold curve and regime coefficients")
    _add_data(p)
    _add_common(p)
    p.add_argument("--pi-n", type=float, default=None, help="truncation margin (default (n b_n)^{-1/2})")
    p.add_argument("--interpolate", action="store_true", help="linear instead of nearest-grid lookup")
    p.add_argument("--lag", type=int, default=5, help="spatial lag cutoff of the LRV")
    p.add_argument("--adjusted", action="store_true", help="divide the LRV by the truncation fraction")
    p.add_argument("--taper", choices=("bartlett", "uniform"), default="bartlett")
    p.add_argument("--ci-level", type=float, default=None, help="fill ci_lo/ci_hi by LR inversion")

    p = sub.add_parser("test", help="LR test of gamma0(s) = gamma_null")
    _add_data(p, s_flag=False)
    _add_common(p)
    p.add_argument("--s", dest="s_point", type=float, required=True, help="evaluation point s")
    p.add_argument("--gamma-null", type=float, required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--mode", choices=("homoskedastic", "scaled"), default="homoskedastic")

    p = sub.add_parser("ci", help="LR-inverted confidence sets along the grid")
    _add_data(p)
    _add_common(p)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--mode", choices=("homoskedastic", "scaled"), default="homoskedastic")

    p = sub.add_parser("cv", help="leave-one-out choice of c")
    _add_data(p, bandwidth_required=None)
    _add_common(p)
    p.add_argument("--grid", default=None, help="lo:hi:k, lo:hi:klog or a comma list (default 0.25:8:16log)")

    p = sub.add_parser("contour", help="boundary of a bright region on a raster")
    p.add_argument("--raster", required=True, help="header-less numeric CSV matrix")
    p.add_argument("--center", required=True, help="row,col of the center pixel (1-based, row from south)")
    p.add_argument("--angles", type=int, default=500)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--origin-flip", action="store_true", help="file row 0 is the northern edge")
    p.add_argument("--trim", type=_pair, default=(0.05, 0.95))
    p.add_argument("--out-dir", default=".")
    _add_common(p)

    p = sub.add_parser("simulate", help="Monte Carlo studies and limit-process samplers")
    p.add_argument("--study", choices=("rejection", "coverage", "argmax"), required=True)
    p.add_argument("--n", type=_ints, default=[500])
    p.add_argument("--delta", type=_floats, default=[2.0])
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--eval-s", type=_floats, default=[0.0, 0.5, 1.0])
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--c-bandwidth", type=float, default=0.5)
    p.add_argument("--lag", type=int, default=5)
    p.add_argument("--adjusted", action="store_true")
    p.add_argument("--mode", choices=("zeta", "drift"), default="zeta", help="argmax study only")
    p.add_argument("--R", dest="R", type=float, default=None)
    p.add_argument("--dr", type=float, default=0.05)
    p.add_argument("--ratio", type=float, default=1.0, help="xi / (varrho |gamma0'|) for the drift")
    p.add_argument("--out", default="report.json")
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return str(path)


def _write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if (isinstance(v, float) and not math.isfinite(v)) else
                        (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return str(path)


def _out_dir(args):
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _validate(args):
    for name in ("data", "raster"):
        path = getattr(args, name, None)
        if path is not None and not Path(path).is_file():
            raise UsageError(f"--{name}: file not found: {path}")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        raise UsageError("--threads must be at least 1")
    for name in ("c", "bn"):
        v = getattr(args, name, None)
        if v is not None and not v > 0:
            raise UsageError(f"--{name} must be positive")
    lvl = getattr(args, "level", None)
    if lvl is not None and not (0.0 < lvl < 1.0):
        raise UsageError("--level must lie strictly between 0 and 1")
    ci = getattr(args, "ci_level", None)
    if ci is not None and not (0.0 < ci < 1.0):
        raise UsageError("--ci-level must lie strictly between 0 and 1")
    cov = getattr(args, "coverage", None)
    if cov is not None and not (0.0 < cov <= 1.0):
        raise UsageError("--coverage must lie in (0, 1]")
    if getattr(args, "n_grid", 1) < 1:
        raise UsageError("--n-grid must be at least 1")
    if args.command == "simulate":
        if args.reps < 1:
            raise UsageError("--reps must be at least 1")
        if not (0.0 <= args.rho <= 1.0):
            raise UsageError("--rho must lie in [0, 1]")
        if any(n < 4 for n in args.n):
            raise UsageError("--n must be at least 4")
        if not (0.0 < args.alpha <= 1.0):
            raise UsageError("--alpha must lie in (0, 1]")
        if args.dr <= 0 or (args.R is not None and args.R <= 0):
            raise UsageError("--R and --dr must be positive")
        if args.ratio <= 0:
            raise UsageError("--ratio must be positive")
    if args.command == "contour":
        if args.angles < 4:
            raise UsageError("--angles must be at least 4")
        if args.c <= 0:
            raise UsageError("--c must be positive")
        try:
            row, col = (int(v) for v in args.center.split(","))
        except ValueError:
            raise UsageError("--center must be row,col integers") from None
        args.center_pixel = (row, col)


def _load(args):
    xcols = [c for c in args.x.split(",") if c.strip()]
    data = load_csv_dataset(args.data, {"y": args.y, "x": xcols, "q": args.q, "s": args.s_col},
                            standardize=args.standardize, add_intercept=not args.no_intercept)
    mode = args.grid_mode
    window = make_eval_window(data, args.coverage, args.n_grid if mode == "grid" else None, mode)
    return data, window


def _bandwidth(args, n):
    return args.bn if args.bn is not None else bandwidth_from_c(args.c, n)


def _pipeline(args, data, window, b_n, kernel):
    curve = estimate_threshold_curve(data, window, b_n, kernel, args.trim)
    pi_n = getattr(args, "pi_n", None)
    theta = estimate_theta(data, curve, window, pi_n, getattr(args, "interpolate", False))
    return curve, theta


def _xi_at(data, window, curve, theta, s, gamma_hat, b_n, kernel):
    gamma_obs = gamma_at_observations(data, curve)
    u = full_residuals(data, gamma_obs, theta, window.contains(data.s))
    bq, bs = nw_bandwidths(data)
    return xi_lr_hat(data, s, gamma_hat, theta.delta_hat, (b_n, bq, bs), kernel, u)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_estimate(args):
    kernel = KernelSpec(args.kernel)
    data, window = _load(args)
    b_n = _bandwidth(args, data.n)
    curve, theta = _pipeline(args, data, window, b_n, kernel)
    vc = theta_vcov(data, curve, window, theta, args.lag, args.adjusted, taper=args.taper)
    out = _out_dir(args)
    rows = []
    for p in curve.points:
        lo = hi = math.nan
        if args.ci_level is not None and p.ok:
            try:
                cs = invert_ci(data, p.s, curve, args.ci_level)
                lo, hi = cs.hull_lo, cs.hull_hi
            except ThreshSplitError:
                pass
        rows.append([p.s, p.gamma_hat, p.sse_at_min, p.effective_n, lo, hi])
    files = [_write_csv(out / "curve.csv", ["s", "gamma_hat", "sse", "effective_n", "ci_lo", "ci_hi"], rows)]
    fit = {
        "n": data.n,
        "d": data.d,
        "x_names": list(data.x_names),
        "bandwidth": b_n,
        "kernel": args.kernel,
        "window": {"s0_lo": window.s0_lo, "s0_hi": window.s0_hi, "n_grid": int(window.grid.size)},
        "curve": {"n_points": len(curve), "n_failed": int((~curve.ok).sum())},
        "theta": theta.to_dict(),
        "vcov": vc.to_dict(),
        "norm_meta": {k: list(v) for k, v in data.norm_meta.items()},
    }
    files.append(_write_json(out / "fit.json", fit))
    return files


def cmd_test(args):
    kernel = KernelSpec(args.kernel)
    data, window = _load(args)
    b_n = _bandwidth(args, data.n)
    xi = None
    if args.mode == "scaled":
        curve, theta = _pipeline(args, data, window, b_n, kernel)
        from .local_threshold import estimate_gamma_at

        g_hat = estimate_gamma_at(data, args.s_point, b_n, kernel, args.trim).gamma_hat
        xi = _xi_at(data, window, curve, theta, args.s_point, g_hat, b_n, kernel)
    res = lr_test(data, args.s_point, args.gamma_null, b_n, kernel, args.level, args.mode, xi, args.trim)
    out = _out_dir(args)
    payload = res.to_dict()
    payload["bandwidth"] = b_n
    return [_write_json(out / "test.json", payload)]


def cmd_ci(args):
    kernel = KernelSpec(args.kernel)
    data, window = _load(args)
    b_n = _bandwidth(args, data.n)
    curve = estimate_threshold_curve(data, window, b_n, kernel, args.trim)
    theta = None
    if args.mode == "scaled":
        theta = estimate_theta(data, curve, window)
    rows = []
    for p in curve.points:
        if not p.ok:
            rows.append([p.s, math.nan, math.nan, math.nan, 0])
            continue
        try:
            xi = _xi_at(data, window, curve, theta, p.s, p.gamma_hat, b_n, kernel) if theta is not None else None
            cs = invert_ci(data, p.s, curve, args.level, args.mode, xi)
        except ThreshSplitError:
            rows.append([p.s, p.gamma_hat, math.nan, math.nan, 0])
            continue
        rows.append([p.s, cs.gamma_hat, cs.hull_lo, cs.hull_hi, cs.n_accepted])
    out = _out_dir(args)
    return [_write_csv(out / "ci.csv", ["s", "gamma_hat", "hull_lo", "hull_hi", "n_accepted"], rows)]


def cmd_cv(args):
    kernel = KernelSpec(args.kernel)
    data, window = _load(args)
    try:
        grid = parse_c_grid(args.grid) if args.grid else default_c_grid()
    except ValueError as exc:
        raise UsageError(f"--grid: {exc}") from None
    res = select_bandwidth(data, window, grid, kernel, args.trim)
    out = _out_dir(args)
    files = [_write_csv(out / "cv.csv", ["c", "criterion"], zip(res.c_grid, res.criterion))]
    files.append(_write_json(out / "cv.json", res.to_dict()))
    return files


def cmd_contour(args):
    raster = load_raster_grid(args.raster, args.origin_flip)
    est, data = raster_contour(raster, args.center_pixel, args.angles, args.c, KernelSpec(args.kernel), args.trim)
    x = est.center[1] + est.radius_hat * np.cos(np.radians(est.angles_deg))
    y = est.center[0] + est.radius_hat * np.sin(np.radians(est.angles_deg))
    out = _out_dir(args)
    files = [_write_csv(out / "contour.csv", ["angle_deg", "radius", "x", "y"],
                        zip(est.angles_deg, est.radius_hat, x, y))]
    summary = est.to_dict()
    summary["implied_quantile"] = implied_quantile(raster.values, est.inner_mean)
    summary["quantile95_area"] = quantile_area(raster, 0.95)
    summary["failures"] = list(est.errors)
    files.append(_write_json(out / "contour.json", summary))
    return files


def _argmax_summary(args, samples):
    summary = {"mode": args.mode, "reps": args.reps, "dr": args.dr, "R": args.R,
               "mean": float(samples.mean()), "variance": float(samples.var(ddof=1)) if samples.size > 1 else 0.0}
    if args.mode == "zeta":
        # samples of max(2W(r) - |r|), whose limit CDF is (1 - e^{-z/2})^2
        summary["cdf"] = {
            f"{lvl:g}": {"z": z, "empirical": float(np.mean(samples <= z)), "limit": float(lr_null_cdf(z, 1.0))}
            for lvl in TABLE_LEVELS
            for z in [lr_critical_value(lvl, kappa2(KernelSpec("gaussian")))]
        }
    else:
        summary["ratio"] = args.ratio
    return summary


def cmd_simulate(args, workers):
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.study == "argmax":
        p = DriftParams(1.0, 1.0 / args.ratio, 1.0, KernelSpec(args.kernel))
        samples = simulate_argmax(p, args.mode, args.R, args.dr, args.reps, args.seed, workers=workers)
        report = _argmax_summary(args, samples)
    else:
        cfgs = [SimConfig(n=n, delta=d, rho=args.rho, m=args.m, reps=args.reps, seed=args.seed,
                          eval_s=tuple(args.eval_s), alpha=args.alpha, c_bandwidth=args.c_bandwidth,
                          lag=args.lag, adjusted=args.adjusted, kernel=args.kernel)
                for n in args.n for d in args.delta]
        if args.study == "rejection":
            report = run_rejection_study(cfgs, workers=workers).to_dict()
        else:
            report = run_coverage_study(cfgs, workers=workers).to_dict()
    return [_write_json(out, report)]


def _manifest(args, argv, files, threads):
    cfg = {k: v for k, v in vars(args).items() if k != "center_pixel"}
    return {
        "tool": "threshsplit",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "config": cfg,
        "seed": getattr(args, "seed", None),
        "backend": _accel.backend(),
        "threads": threads,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "outputs": files,
    }


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        _validate(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"threshsplit: error: {exc}", file=sys.stderr)
        return 2
    threads = _accel.set_threads(args.threads)
    workers = args.threads or int(os.environ.get("THRESHSPLIT_THREADS", "0") or 0) or (os.cpu_count() or 1)
    try:
        if args.command == "simulate":
            files = cmd_simulate(args, workers)
            out = Path(args.out)
            mpath = out.with_name(out.stem + "_manifest.json")
        else:
            files = {"estimate": cmd_estimate, "test": cmd_test, "ci": cmd_ci, "cv": cmd_cv,
                     "contour": cmd_contour}[args.command](args)
            mpath = _out_dir(args) / "manifest.json"
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"threshsplit: error: {exc}", file=sys.stderr)
        return 2
    except (ThreshSplitError, np.linalg.LinAlgError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    _write_json(mpath, _manifest(args, argv, files, threads))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
