"""Pointwise kernel-weighted threshold estimation.

For an evaluation point ``s`` every observation gets the weight
``w_i = K((s_i - s) / b_n)`` and, for a candidate threshold ``gamma``, the
weighted least-squares fit of ``y`` on ``[X, X 1{q <= gamma}]`` is profiled
out.  The design is block diagonal after reparametrising to the two regime
coefficients (``beta`` above the threshold, ``beta + delta`` below), so the
concentrated sum of squares is

    Q(gamma; s) = Syy - b_lo' G_lo^+ b_lo - b_up' G_up^+ b_up

with ``G``/``b`` the weighted cross-products of each regime.  The sweep sorts
by ``q`` once and accumulates prefix (lower) and suffix (upper) cross-products,
so every candidate costs O(d^2) after an O(n log n) sort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import njit
from .data import Dataset, EvalWindow, empirical_quantile
from .errors import (
    CurveEstimationError,
    EmptyWindowError,
    NoCandidateError,
    SingularDesignError,
)
from .kernels import FAMILIES, GAUSSIAN, KernelSpec, eval_kernel, kernel_weights_nb

if _accel.HAVE_NUMBA:
    from numba import prange as _accel_prange
else:  # pragma: no cover
    _accel_prange = range

DEFAULT_TRIM = (0.05, 0.95)
WEIGHT_FLOOR = 1e-8  # relative to K(0)
PINV_RCOND = 1e-10
TIE_RTOL = 1e-10
TIE_ATOL_SYY = 1e-13  # absolute tie slack relative to sum(w y^2), covers cancellation

STATUS_OK, STATUS_EMPTY, STATUS_NOCAND = 0, 1, 2


# ---------------------------------------------------------------------------
# small dense algebra
# ---------------------------------------------------------------------------

def sym_pinv(G, rcond=PINV_RCOND):
    """Pseudo-inverse of a symmetric PSD matrix with a relative eigenvalue cutoff."""
    lam, V = np.linalg.eigh(G)
    top = lam.max() if lam.size else 0.0
    keep = lam > rcond * top if top > 0 else np.zeros_like(lam, dtype=bool)
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    return (V * inv) @ V.T


@njit
def _quad_form_nb(G, b, L, z):
    """b' G^+ b for a small symmetric PSD matrix (Cholesky, eigen fallback).

    Only the lower triangle of ``G`` is read; ``L`` and ``z`` are scratch.
    """
    d = G.shape[0]
    maxdiag = 0.0
    for i in range(d):
        if G[i, i] > maxdiag:
            maxdiag = G[i, i]
    if maxdiag <= 0.0:
        return 0.0
    ok = True
    for j in range(d):
        acc = G[j, j]
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if acc <= 1e-10 * maxdiag:
            ok = False
            break
        L[j, j] = math.sqrt(acc)
        for i in range(j + 1, d):
            acc2 = G[i, j]
            for k in range(j):
                acc2 -= L[i, k] * L[j, k]
            L[i, j] = acc2 / L[j, j]
    if ok:
        quad = 0.0
        for i in range(d):
            acc = b[i]
            for k in range(i):
                acc -= L[i, k] * z[k]
            z[i] = acc / L[i, i]
            quad += z[i] * z[i]
        return quad
    S = np.empty((d, d))
    for i in range(d):
        for j in range(i + 1):
            S[i, j] = G[i, j]
            S[j, i] = G[i, j]
    lam, V = np.linalg.eigh(S)
    top = lam.max()
    quad = 0.0
    for k in range(d):
        if lam[k] > 1e-10 * top:
            proj = 0.0
            for i in range(d):
                proj += V[i, k] * b[i]
            quad += proj * proj / lam[k]
    return quad


def _quad_forms_np(G, b, rcond=PINV_RCOND):
    """Batched b' G^+ b over leading axis."""
    lam, V = np.linalg.eigh(G)
    top = lam.max(axis=1, keepdims=True)
    keep = (lam > rcond * top) & (top > 0)
    proj = np.einsum("mik,mi->mk", V, b)
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    return np.sum(proj * proj * inv, axis=1)


# ---------------------------------------------------------------------------
# sweep kernels
# ---------------------------------------------------------------------------

@njit
def _profile_nb(X, y, q, w, q_lo, q_hi, min_count, wfloor, out_gamma, out_sse):
    """Concentrated SSE at every admissible candidate; inputs sorted by q.

    Returns ``(m, syy)``: the number of candidates written to the output
    buffers and the weighted total sum of squares.
    """
    n, d = X.shape
    n_sig = 0
    syy = 0.0
    for i in range(n):
        syy += w[i] * y[i] * y[i]
        if w[i] >= wfloor:
            n_sig += 1
    # candidate ends: last index of each tie block inside the trim range
    ends = np.empty(n, np.int64)
    m = 0
    cnt = 0
    for i in range(n):
        if w[i] >= wfloor:
            cnt += 1
        if i + 1 < n and q[i + 1] == q[i]:
            continue
        if q[i] < q_lo or q[i] > q_hi:
            continue
        if cnt >= min_count and n_sig - cnt >= min_count:
            ends[m] = i
            m += 1
    if m == 0:
        return 0, syy
    G = np.zeros((d, d))
    bb = np.zeros(d)
    L = np.zeros((d, d))
    z = np.zeros(d)
    # forward pass: lower-regime quad forms parked in out_sse
    j = 0
    for i in range(n):
        wi = w[i]
        if wi != 0.0:
            for a in range(d):
                xa = wi * X[i, a]
                bb[a] += xa * y[i]
                for c in range(a + 1):
                    G[a, c] += xa * X[i, c]
        if j < m and ends[j] == i:
            out_sse[j] = _quad_form_nb(G, bb, L, z)
            out_gamma[j] = q[i]
            j += 1
    G[:, :] = 0.0
    bb[:] = 0.0
    j = m - 1
    for i in range(n - 1, -1, -1):
        if j >= 0 and ends[j] == i:
            v = syy - out_sse[j] - _quad_form_nb(G, bb, L, z)
            out_sse[j] = v if v > 0.0 else 0.0
            j -= 1
        wi = w[i]
        if wi != 0.0:
            for a in range(d):
                xa = wi * X[i, a]
                bb[a] += xa * y[i]
                for c in range(a + 1):
                    G[a, c] += xa * X[i, c]
    return m, syy


def _profile_np(X, y, q, w, q_lo, q_hi, min_count, wfloor, out_gamma, out_sse):
    """Vectorized twin of :func:`_profile_nb`."""
    n, d = X.shape
    syy = float(np.sum(w * y * y))
    sig = w >= wfloor
    n_sig = int(sig.sum())
    cnt = np.cumsum(sig)
    last = np.ones(n, dtype=bool)
    last[:-1] = q[1:] != q[:-1]
    ok = last & (q >= q_lo) & (q <= q_hi) & (cnt >= min_count) & (n_sig - cnt >= min_count)
    ends = np.flatnonzero(ok)
    m = ends.size
    if m == 0:
        return 0, syy
    wx = X * w[:, None]
    outer = wx[:, :, None] * X[:, None, :]
    cG = np.cumsum(outer, axis=0)
    cb = np.cumsum(wx * y[:, None], axis=0)
    # suffix sums over indices strictly above each end
    sG = np.cumsum(outer[::-1], axis=0)[::-1]
    sb = np.cumsum((wx * y[:, None])[::-1], axis=0)[::-1]
    Glo, blo = cG[ends], cb[ends]
    nxt = ends + 1
    Gup = np.zeros((m, d, d))
    bup = np.zeros((m, d))
    inside = nxt < n
    Gup[inside] = sG[nxt[inside]]
    bup[inside] = sb[nxt[inside]]
    sse = syy - _quad_forms_np(Glo, blo) - _quad_forms_np(Gup, bup)
    out_sse[:m] = np.maximum(sse, 0.0)
    out_gamma[:m] = q[ends]
    return m, syy


@njit
def _pick_nb(sse, m, syy):
    best = np.inf
    for k in range(m):
        if sse[k] < best:
            best = sse[k]
    tol = 1e-10 * best + 1e-13 * syy
    for k in range(m):
        if sse[k] <= best + tol:
            return k
    return 0


def _pick_np(sse, m, syy):
    best = float(np.min(sse[:m]))
    tol = TIE_RTOL * best + TIE_ATOL_SYY * syy
    return int(np.flatnonzero(sse[:m] <= best + tol)[0])


@njit(parallel=True)
def _curve_nb(X, y, q, s, grid, bw, kcode, q_lo, q_hi, min_count, wfloor, exclude):
    """Argmin over candidates at every grid point (inputs sorted by q).

    ``exclude`` is a position in the sorted arrays whose weight is forced to
    zero, or -1.  Returns gamma_hat, sse_min, sum of weights, candidate
    count and a status code per grid point.
    """
    n = X.shape[0]
    g = grid.shape[0]
    gam = np.full(g, np.nan)
    sse_min = np.full(g, np.nan)
    sumw = np.zeros(g)
    ncand = np.zeros(g, np.int64)
    status = np.zeros(g, np.int64)
    for t in _accel_prange(g):
        v = (s - grid[t]) / bw
        w = kernel_weights_nb(kcode, v)
        if exclude >= 0:
            w[exclude] = 0.0
        wmax = 0.0
        tot = 0.0
        for i in range(n):
            tot += w[i]
            if w[i] > wmax:
                wmax = w[i]
        sumw[t] = tot
        if wmax < wfloor:
            status[t] = 1
            continue
        og = np.empty(n)
        os_ = np.empty(n)
        m, syy = _profile_nb(X, y, q, w, q_lo, q_hi, min_count, wfloor, og, os_)
        ncand[t] = m
        if m == 0:
            status[t] = 2
            continue
        k = _pick_nb(os_, m, syy)
        gam[t] = og[k]
        sse_min[t] = os_[k]
    return gam, sse_min, sumw, ncand, status


def _curve_np(X, y, q, s, grid, bw, kcode, q_lo, q_hi, min_count, wfloor, exclude):
    n = X.shape[0]
    g = grid.shape[0]
    gam = np.full(g, np.nan)
    sse_min = np.full(g, np.nan)
    sumw = np.zeros(g)
    ncand = np.zeros(g, np.int64)
    status = np.zeros(g, np.int64)
    og = np.empty(n)
    os_ = np.empty(n)
    for t in range(g):
        w = _np_weights(kcode, (s - grid[t]) / bw)
        if exclude >= 0:
            w[exclude] = 0.0
        sumw[t] = w.sum()
        if w.max() < wfloor:
            status[t] = STATUS_EMPTY
            continue
        m, syy = _profile_np(X, y, q, w, q_lo, q_hi, min_count, wfloor, og, os_)
        ncand[t] = m
        if m == 0:
            status[t] = STATUS_NOCAND
            continue
        k = _pick_np(os_, m, syy)
        gam[t] = og[k]
        sse_min[t] = os_[k]
    return gam, sse_min, sumw, ncand, status


def _np_weights(kcode, v):
    return np.asarray(eval_kernel(FAMILIES[kcode], v), dtype=float).copy()


profile_kernel = _profile_nb if _accel.USE_NUMBA else _profile_np
curve_kernel = _curve_nb if _accel.USE_NUMBA else _curve_np


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Concentrated SSE over the admissible candidate set at one ``s``."""

    s: float
    gammas: np.ndarray
    sse: np.ndarray
    sum_weights: float
    syy: float

    @property
    def argmin(self) -> int:
        return _pick_np(self.sse, self.sse.size, self.syy)


@dataclass(frozen=True)
class LocalFitPoint:
    s: float
    gamma_hat: float
    sse_at_min: float
    beta_local: np.ndarray
    delta_local: np.ndarray
    effective_n: float
    candidate_count: int
    sum_weights: float = math.nan
    ok: bool = True
    error: str | None = None

    @classmethod
    def failed(cls, s, error, d, sum_weights=math.nan, k0=1.0):
        nan = np.full(d, np.nan)
        return cls(float(s), math.nan, math.nan, nan, nan, sum_weights / k0, 0, sum_weights, False, error)


@dataclass(frozen=True)
class ThresholdCurve:
    points: tuple
    bandwidth: float
    kernel: KernelSpec = GAUSSIAN
    trim: tuple = DEFAULT_TRIM

    @property
    def s(self):
        return np.array([p.s for p in self.points])

    @property
    def gamma_hat(self):
        return np.array([p.gamma_hat for p in self.points])

    @property
    def ok(self):
        return np.array([p.ok for p in self.points])

    def __len__(self):
        return len(self.points)

    def evaluate(self, s_obs, interpolate: bool = False):
        """gamma_hat at arbitrary s: nearest grid point (default) or linear."""
        grid = self.s
        gam = self.gamma_hat
        s_obs = np.asarray(s_obs, dtype=float)
        if interpolate:
            ok = self.ok
            if not ok.any():
                return np.full(s_obs.shape, np.nan)
            return np.interp(s_obs, grid[ok], gam[ok])
        if grid.size == 1:
            return np.full(s_obs.shape, gam[0])
        pos = np.searchsorted(grid, s_obs)
        pos = np.clip(pos, 1, grid.size - 1)
        left = grid[pos - 1]
        right = grid[pos]
        pick = np.where(s_obs - left <= right - s_obs, pos - 1, pos)
        return gam[pick]


def _kernel(kernel) -> KernelSpec:
    if kernel is None:
        return GAUSSIAN
    return kernel if isinstance(kernel, KernelSpec) else KernelSpec(kernel)


def trim_bounds(q, trim=DEFAULT_TRIM):
    lo, hi = empirical_quantile(q, [trim[0], trim[1]])
    return float(lo), float(hi)


def local_weights(data: Dataset, s: float, b_n: float, kernel=None):
    return np.asarray(eval_kernel(_kernel(kernel), (data.s - s) / b_n), dtype=float)


def _regime_fit(X, y, w, mask, wfloor):
    """Weighted LS coefficients for one regime; None when the regime is empty."""
    if not np.any(mask & (w >= wfloor)):
        return None
    Xm = X[mask]
    wm = w[mask]
    G = (Xm * wm[:, None]).T @ Xm
    b = (Xm * wm[:, None]).T @ y[mask]
    return sym_pinv(G) @ b


def concentrated_sse(data: Dataset, s: float, b_n: float, kernel=None, gamma: float = 0.0):
    """Concentrated weighted SSE at one threshold.

    Returns ``(sse, beta, delta)`` where ``beta`` is the coefficient above the
    threshold and ``beta + delta`` the one below it.
    """
    kernel = _kernel(kernel)
    w = local_weights(data, s, b_n, kernel)
    wfloor = WEIGHT_FLOOR * kernel.k0
    if w.max() < wfloor:
        raise EmptyWindowError(f"no observation carries kernel weight near s={s:g}")
    low = data.q <= gamma
    b_low = _regime_fit(data.X, data.y, w, low, wfloor)
    b_up = _regime_fit(data.X, data.y, w, ~low, wfloor)
    if b_low is None or b_up is None:
        side = "lower" if b_low is None else "upper"
        raise SingularDesignError(f"{side} regime is empty at gamma={gamma:g}, s={s:g}")
    fitted = np.where(low, data.X @ b_low, data.X @ b_up)
    sse = float(np.sum(w * (data.y - fitted) ** 2))
    return sse, b_up, b_low - b_up


def _sorted_view(data: Dataset):
    order = np.argsort(data.q, kind="stable")
    return (
        order,
        np.ascontiguousarray(data.X[order]),
        np.ascontiguousarray(data.y[order]),
        np.ascontiguousarray(data.q[order]),
        np.ascontiguousarray(data.s[order]),
    )


def sse_profile(data: Dataset, s: float, b_n: float, kernel=None, trim=DEFAULT_TRIM, bounds=None) -> Profile:
    """Concentrated SSE at every admissible candidate threshold."""
    kernel = _kernel(kernel)
    q_lo, q_hi = bounds if bounds is not None else trim_bounds(data.q, trim)
    order, Xs, ys, qs, ss = _sorted_view(data)
    w = np.asarray(eval_kernel(kernel, (ss - s) / b_n), dtype=float)
    wfloor = WEIGHT_FLOOR * kernel.k0
    if w.max() < wfloor:
        raise EmptyWindowError(f"no observation carries kernel weight near s={s:g}")
    og = np.empty(data.n)
    os_ = np.empty(data.n)
    m, syy = profile_kernel(Xs, ys, qs, w, q_lo, q_hi, data.d, wfloor, og, os_)
    if m == 0:
        raise NoCandidateError(
            f"no admissible candidate threshold in [{q_lo:g}, {q_hi:g}] at s={s:g}",
            trim_bounds=(q_lo, q_hi),
        )
    return Profile(float(s), og[:m].copy(), os_[:m].copy(), float(w.sum()), float(syy))


def _fit_point(data, s, b_n, kernel, gamma, sse, sumw, m):
    try:
        _, beta, delta = concentrated_sse(data, s, b_n, kernel, gamma)
    except SingularDesignError:
        beta = delta = np.full(data.d, np.nan)
    return LocalFitPoint(float(s), float(gamma), float(sse), beta, delta, sumw / kernel.k0, int(m), sumw)


def estimate_gamma_at(data: Dataset, s: float, b_n: float, kernel=None, trim=DEFAULT_TRIM) -> LocalFitPoint:
    """Minimize the concentrated SSE over observed q values at one ``s``."""
    kernel = _kernel(kernel)
    prof = sse_profile(data, s, b_n, kernel, trim)
    k = prof.argmin
    return _fit_point(data, s, b_n, kernel, prof.gammas[k], prof.sse[k], prof.sum_weights, prof.gammas.size)


def gamma_many(data: Dataset, grid, b_n: float, kernel=None, trim=DEFAULT_TRIM, exclude=None, bounds=None):
    """Vectorized argmin at many points.

    ``exclude`` drops one observation (original row index) from every local
    fit.  Returns a dict of arrays: gamma_hat, sse, sum_weights,
    candidate_count, status.
    """
    kernel = _kernel(kernel)
    order, Xs, ys, qs, ss = _sorted_view(data)
    if bounds is None:
        qv = data.q if exclude is None else np.delete(data.q, exclude)
        bounds = trim_bounds(qv, trim)
    ex = -1
    if exclude is not None:
        ex = int(np.flatnonzero(order == exclude)[0])
    grid = np.ascontiguousarray(np.atleast_1d(np.asarray(grid, dtype=float)))
    gam, sse, sumw, ncand, status = curve_kernel(
        Xs, ys, qs, ss, grid, float(b_n), kernel.code, bounds[0], bounds[1],
        data.d, WEIGHT_FLOOR * kernel.k0, ex,
    )
    return {"gamma_hat": gam, "sse": sse, "sum_weights": sumw, "candidate_count": ncand, "status": status}


def estimate_threshold_curve(data: Dataset, window: EvalWindow, b_n: float, kernel=None, trim=DEFAULT_TRIM,
                             coefficients: bool = True) -> ThresholdCurve:
    """One :class:`LocalFitPoint` per grid point; failures are kept with ``ok=False``."""
    kernel = _kernel(kernel)
    bounds = trim_bounds(data.q, trim)
    res = gamma_many(data, window.grid, b_n, kernel, trim, bounds=bounds)
    points = []
    for t, s in enumerate(window.grid):
        st = res["status"][t]
        if st == STATUS_EMPTY:
            points.append(LocalFitPoint.failed(s, "empty-window", data.d, res["sum_weights"][t], kernel.k0))
        elif st == STATUS_NOCAND:
            points.append(LocalFitPoint.failed(s, "no-candidate", data.d, res["sum_weights"][t], kernel.k0))
        elif coefficients:
            points.append(_fit_point(data, s, b_n, kernel, res["gamma_hat"][t], res["sse"][t],
                                     res["sum_weights"][t], res["candidate_count"][t]))
        else:
            nan = np.full(data.d, np.nan)
            points.append(LocalFitPoint(float(s), float(res["gamma_hat"][t]), float(res["sse"][t]), nan, nan,
                                        res["sum_weights"][t] / kernel.k0, int(res["candidate_count"][t]),
                                        float(res["sum_weights"][t])))
    if points and not any(p.ok for p in points):
        raise CurveEstimationError(f"threshold estimation failed at all {len(points)} grid points")
    return ThresholdCurve(tuple(points), float(b_n), kernel, tuple(trim))


def bandwidth_from_c(c: float, n: int) -> float:
    """b_n = c n^{-1/2}."""
    return float(c) / math.sqrt(n)
