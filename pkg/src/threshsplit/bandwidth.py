"""Leave-one-out cross-validation of the bandwidth constant c in b_n = c n^{-1/2}."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, EvalWindow
from .errors import CVInfeasibleError, SelectionError, ThreshSplitError
from .kernels import eval_kernel
from .local_threshold import DEFAULT_TRIM, _kernel, bandwidth_from_c, gamma_many
from .two_step import estimate_theta_from_gamma, truncation_pi_n


def default_c_grid():
    """16 log-spaced constants in [0.25, 8]."""
    return np.geomspace(0.25, 8.0, 16)


def parse_c_grid(text: str):
    """Parse ``lo:hi:k``, ``lo:hi:klog`` or a comma list into a sorted array."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid spec {text!r} must look like lo:hi:k or lo:hi:klog")
        lo, hi = float(parts[0]), float(parts[1])
        tail = parts[2].strip().lower()
        log = tail.endswith("log")
        k = int(tail[:-3] if log else tail)
        if k < 1 or lo <= 0 or hi < lo:
            raise ValueError(f"bad grid spec {text!r}")
        grid = np.geomspace(lo, hi, k) if log else np.linspace(lo, hi, k)
    else:
        grid = np.array([float(v) for v in text.split(",") if v.strip()])
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("grid constants must be positive")
    return np.unique(grid)


@dataclass(frozen=True)
class CVResult:
    c_grid: np.ndarray
    criterion: np.ndarray
    c_star: float
    b_n_star: float
    n_fallback: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def to_dict(self):
        return {
            "c_grid": self.c_grid.tolist(),
            "criterion": [None if not math.isfinite(v) else float(v) for v in self.criterion],
            "c_star": self.c_star,
            "b_n_star": self.b_n_star,
            "n_fallback": [int(v) for v in self.n_fallback],
        }


def _local_mean(data: Dataset, i: int, b_n: float, kernel) -> float:
    w = eval_kernel(kernel, (data.s - data.s[i]) / b_n)
    w[i] = 0.0
    tot = w.sum()
    if tot > 0:
        return float(w @ data.y / tot)
    return float((data.y.sum() - data.y[i]) / (data.n - 1)) if data.n > 1 else 0.0


def loo_prediction(data: Dataset, i: int, window_idx, b_n: float, pi_n: float, kernel=None,
                   trim=DEFAULT_TRIM):
    """Leave-one-out prediction of y_i; returns ``(prediction, ok)``.

    gamma_hat at every in-window s_j and the two-step coefficients are refit
    without row ``i``.  When that fit fails the kernel-weighted local mean of
    y (row ``i`` excluded) is returned with ``ok=False``.
    """
    kernel = _kernel(kernel)
    window_idx = np.asarray(window_idx)
    res = gamma_many(data, data.s[window_idx], b_n, kernel, trim, exclude=i)
    own = np.flatnonzero(window_idx == i)
    if own.size == 0 or res["status"][own[0]] != 0:
        return _local_mean(data, i, b_n, kernel), False
    g_i = float(res["gamma_hat"][own[0]])
    gamma_obs = np.full(data.n, np.nan)
    gamma_obs[window_idx] = np.where(res["status"] == 0, res["gamma_hat"], np.nan)
    gamma_obs[i] = np.nan
    inwin = np.zeros(data.n, dtype=bool)
    inwin[window_idx] = True
    inwin[i] = False
    try:
        theta = estimate_theta_from_gamma(data, gamma_obs, inwin, pi_n)
    except ThreshSplitError:
        return _local_mean(data, i, b_n, kernel), False
    x = data.X[i]
    return float(x @ theta.beta_hat + (x @ theta.delta_hat) * (data.q[i] <= g_i)), True


def loo_cv_criterion(data: Dataset, window: EvalWindow, c: float, kernel=None, trim=DEFAULT_TRIM,
                     return_fallbacks: bool = False):
    """Sum over s_i in S0 of squared leave-one-out prediction errors at b_n = c n^{-1/2}."""
    if not c > 0:
        raise ValueError("c must be positive")
    kernel = _kernel(kernel)
    b_n = bandwidth_from_c(c, data.n)
    pi_n = truncation_pi_n(data.n, b_n)
    idx = np.flatnonzero(window.contains(data.s))
    if idx.size == 0:
        raise CVInfeasibleError("no observations inside the evaluation window")
    total = 0.0
    fallbacks = 0
    for i in idx:
        pred, ok = loo_prediction(data, int(i), idx, b_n, pi_n, kernel, trim)
        fallbacks += not ok
        total += (data.y[i] - pred) ** 2
    if fallbacks == idx.size:
        raise CVInfeasibleError(f"every leave-one-out fit failed at c={c:g}")
    return (total, fallbacks) if return_fallbacks else total


def select_bandwidth(data: Dataset, window: EvalWindow, c_grid=None, kernel=None, trim=DEFAULT_TRIM) -> CVResult:
    """Grid search for c; infeasible constants get an infinite criterion, ties go to the smallest c."""
    grid = default_c_grid() if c_grid is None else np.unique(np.asarray(c_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("c_grid is empty")
    crit = np.full(grid.size, math.inf)
    fb = np.zeros(grid.size, dtype=int)
    for k, c in enumerate(grid):
        try:
            crit[k], fb[k] = loo_cv_criterion(data, window, float(c), kernel, trim, return_fallbacks=True)
        except CVInfeasibleError:
            fb[k] = -1
    if not np.isfinite(crit).any():
        raise SelectionError("cross-validation infeasible at every grid constant")
    k = int(np.argmin(crit))
    return CVResult(grid, crit, float(grid[k]), bandwidth_from_c(grid[k], data.n), fb)
