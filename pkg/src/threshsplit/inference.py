"""Likelihood-ratio inference on the threshold and spatially robust variances."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import njit
from .data import Dataset, EvalWindow
from .errors import DegenerateFitError, EmptyNeighborhoodError, SingularMomentError
from .kernels import GAUSSIAN, eval_kernel, kappa2
from .local_threshold import (
    DEFAULT_TRIM,
    ThresholdCurve,
    _kernel,
    concentrated_sse,
    local_weights,
    sse_profile,
)
from .two_step import ThetaEstimate, gamma_at_observations

MODES = ("homoskedastic", "scaled")


# ---------------------------------------------------------------------------
# LR statistic and its null distribution
# ---------------------------------------------------------------------------

def lr_statistic(data: Dataset, s: float, b_n: float, kernel=None, gamma_null: float = 0.0,
                 gamma_hat: float | None = None) -> float:
    """sum_i K_i(s) (Q(gamma_null) - Q(gamma_hat)) / Q(gamma_hat).

    Values below zero (possible only when ``gamma_null`` lies outside the
    trimmed candidate range) are reported as zero.
    """
    kernel = _kernel(kernel)
    if gamma_hat is None:
        prof = sse_profile(data, s, b_n, kernel)
        gamma_hat = float(prof.gammas[prof.argmin])
    q_hat, _, _ = concentrated_sse(data, s, b_n, kernel, gamma_hat)
    if q_hat <= 0.0:
        raise DegenerateFitError(f"perfect local fit at s={s:g}; the LR statistic is undefined")
    if gamma_null == gamma_hat:
        return 0.0
    q_null, _, _ = concentrated_sse(data, s, b_n, kernel, gamma_null)
    sumw = float(local_weights(data, s, b_n, kernel).sum())
    return max(0.0, sumw * (q_null - q_hat) / q_hat)


def lr_null_cdf(z, kappa2_value: float):
    """P(zeta* <= z) = (1 - exp(-z / (2 kappa2)))^2 for z >= 0."""
    z = np.asarray(z, dtype=float)
    out = np.where(z >= 0, (1.0 - np.exp(-np.maximum(z, 0.0) / (2.0 * kappa2_value))) ** 2, 0.0)
    return out if out.ndim else float(out)


def lr_critical_value(level: float, kappa2_value: float = kappa2(GAUSSIAN)) -> float:
    """Quantile of the limiting null: -2 kappa2 log(1 - sqrt(level))."""
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie strictly between 0 and 1")
    return -2.0 * kappa2_value * math.log1p(-math.sqrt(level))


# ---------------------------------------------------------------------------
# plug-in scale
# ---------------------------------------------------------------------------

def nw_bandwidths(data: Dataset, c_q: float = 1.0, c_s: float = 1.0):
    """Rule-of-thumb (b', b'') = (c_q sd(q) n^{-1/5}, c_s sd(s) n^{-1/6})."""
    n = data.n
    sd_q = float(np.std(data.q, ddof=1)) if n > 1 else 1.0
    sd_s = float(np.std(data.s, ddof=1)) if n > 1 else 1.0
    return c_q * sd_q * n ** (-1 / 5), c_s * sd_s * n ** (-1 / 6)


def full_residuals(data: Dataset, gamma_obs, theta: ThetaEstimate, mask=None):
    """u_i = y_i - x_i'beta - x_i'delta 1{q_i <= gamma_hat(s_i)}, zeroed outside ``mask``.

    Observations whose gamma_hat(s_i) is missing are also zeroed.
    """
    gamma_obs = np.asarray(gamma_obs, dtype=float)
    low = data.q <= np.where(np.isfinite(gamma_obs), gamma_obs, -np.inf)
    u = data.y - data.X @ theta.beta_hat - (data.X @ theta.delta_hat) * low
    keep = np.isfinite(gamma_obs)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    return np.where(keep, u, 0.0)


def xi_lr_hat(data: Dataset, s: float, gamma_hat: float, delta_hat, bands, kernel=None, residuals=None) -> float:
    """kappa2 delta'V delta / (sigma^2 delta'D delta) with Nadaraya-Watson plug-ins.

    ``bands`` is ``(b_n, b', b'')``: ``b_n`` smooths sigma^2 in s, ``(b', b'')``
    smooth D and V around (gamma_hat, s).  ``residuals`` are the full-model
    residuals.
    """
    kernel = _kernel(kernel)
    b_n, b_q, b_s = bands
    if residuals is None:
        raise ValueError("xi_lr_hat needs the full-model residuals")
    u2 = np.asarray(residuals, dtype=float) ** 2
    delta_hat = np.asarray(delta_hat, dtype=float)
    w1 = eval_kernel(kernel, (data.s - s) / b_n)
    w2 = eval_kernel(kernel, (data.q - gamma_hat) / b_q) * eval_kernel(kernel, (data.s - s) / b_s)
    if w1.sum() <= 0 or w2.sum() <= 0:
        raise EmptyNeighborhoodError(f"no kernel mass around (gamma={gamma_hat:g}, s={s:g})")
    w1 = w1 / w1.sum()
    w2 = w2 / w2.sum()
    sigma2 = float(np.sum(w1 * u2))
    xd = data.X @ delta_hat
    dDd = float(np.sum(w2 * xd * xd))
    dVd = float(np.sum(w2 * xd * xd * u2))
    if sigma2 <= 0 or dDd <= 0:
        raise EmptyNeighborhoodError(f"degenerate plug-in moments at s={s:g}")
    return kappa2(kernel) * dVd / (sigma2 * dDd)


# ---------------------------------------------------------------------------
# tests and confidence sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LRTestResult:
    s: float
    gamma_null: float
    gamma_hat: float
    lr_stat: float
    xi_lr_hat: float
    critical_value: float
    reject: bool
    level: float
    mode: str = "homoskedastic"

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in self.__dict__.items()}


def _scaled_cv(level, kernel, mode, xi):
    k2 = kappa2(kernel)
    cv = lr_critical_value(level, k2)
    if mode == "scaled":
        if xi is None:
            raise ValueError("scaled mode needs xi_lr")
        return cv, cv * xi / k2
    if mode != "homoskedastic":
        raise ValueError(f"unknown mode {mode!r}")
    return cv, cv


def lr_test(data: Dataset, s: float, gamma_null: float, b_n: float, kernel=None, level: float = 0.95,
            mode: str = "homoskedastic", xi_lr: float | None = None, trim=DEFAULT_TRIM) -> LRTestResult:
    """Test H0: gamma0(s) = gamma_null; ``critical_value`` is the unscaled quantile."""
    kernel = _kernel(kernel)
    prof = sse_profile(data, s, b_n, kernel, trim)
    g_hat = float(prof.gammas[prof.argmin])
    stat = lr_statistic(data, s, b_n, kernel, gamma_null, g_hat)
    cv, thr = _scaled_cv(level, kernel, mode, xi_lr)
    xi = xi_lr if xi_lr is not None else kappa2(kernel)
    return LRTestResult(float(s), float(gamma_null), g_hat, stat, float(xi), cv, bool(stat > thr), level, mode)


@dataclass(frozen=True)
class ConfidenceSet:
    s: float
    level: float
    gamma_hat: float
    accepted: np.ndarray

    @property
    def hull_lo(self):
        return float(self.accepted.min())

    @property
    def hull_hi(self):
        return float(self.accepted.max())

    @property
    def n_accepted(self):
        return int(self.accepted.size)


def invert_ci(data: Dataset, s: float, curve: ThresholdCurve, level: float = 0.95, mode: str = "homoskedastic",
              xi_lr: float | None = None) -> ConfidenceSet:
    """Candidates gamma in Gamma_n(s) whose LR statistic does not exceed the critical value."""
    kernel = curve.kernel
    prof = sse_profile(data, s, curve.bandwidth, kernel, curve.trim)
    k = prof.argmin
    q_hat = prof.sse[k]
    if q_hat <= 0:
        raise DegenerateFitError(f"perfect local fit at s={s:g}; the LR statistic is undefined")
    lr = prof.sum_weights * (prof.sse - q_hat) / q_hat
    if level >= 1.0:
        thr = math.inf
    else:
        _, thr = _scaled_cv(level, kernel, mode, xi_lr)
    keep = lr <= thr
    keep[k] = True
    return ConfidenceSet(float(s), float(level), float(prof.gammas[k]), prof.gammas[keep].copy())


# ---------------------------------------------------------------------------
# spatial long-run variance
# ---------------------------------------------------------------------------

@njit
def _conley_nb(G, C, lag, taper):
    """Sum_i Sum_j w_ij g_i g_j' / n with coordinates sorted on column 0."""
    n, p = G.shape
    k = C.shape[1]
    out = np.zeros((p, p))
    span = lag + 1.0
    for i in range(n):
        for a in range(p):
            for b in range(p):
                out[a, b] += G[i, a] * G[i, b]
        for j in range(i + 1, n):
            if C[j, 0] - C[i, 0] >= span:
                break
            w = 1.0
            for c in range(k):
                lg = math.floor(abs(C[j, c] - C[i, c]))
                if lg > lag:
                    w = 0.0
                    break
                if taper == 0:
                    w *= 1.0 - lg / span
            if w == 0.0:
                continue
            for a in range(p):
                for b in range(p):
                    out[a, b] += w * (G[i, a] * G[j, b] + G[j, a] * G[i, b])
    return out / n


def _conley_np(G, C, lag, taper, block=512):
    n, p = G.shape
    out = np.zeros((p, p))
    span = lag + 1.0
    for start in range(0, n, block):
        stop = min(n, start + block)
        lg = np.floor(np.abs(C[start:stop, None, :] - C[None, :, :]))
        inside = np.all(lg <= lag, axis=2)
        if taper == 0:
            W = np.prod(1.0 - lg / span, axis=2) * inside
        else:
            W = inside.astype(float)
        out += G[start:stop].T @ (W @ G)
    return out / n


conley_kernel = _conley_nb if _accel.USE_NUMBA else _conley_np
TAPERS = {"bartlett": 0, "uniform": 1}


def conley_lrv(scores, coords, lag_cutoff: int = 5, taper: str = "bartlett", psd: bool = True):
    """Conley-type spatial HAC estimate (1/n) sum_ij w(d_ij) g_i g_j'.

    Coordinates are binned into integer lags ``floor(|delta_k|)`` per axis;
    pairs with any lag above ``lag_cutoff`` get weight zero, others the
    product Bartlett weight ``prod_k (1 - lag_k / (L + 1))`` (or one for the
    uniform taper).  With ``psd`` negative eigenvalues are clipped at zero.
    """
    G = np.ascontiguousarray(np.atleast_2d(np.asarray(scores, dtype=float)))
    C = np.asarray(coords, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    if G.shape[0] != C.shape[0]:
        raise ValueError("scores and coordinates must have the same number of rows")
    order = np.argsort(C[:, 0], kind="stable")
    G = np.ascontiguousarray(G[order])
    C = np.ascontiguousarray(C[order])
    omega = conley_kernel(G, C, float(lag_cutoff), TAPERS[taper])
    omega = 0.5 * (omega + omega.T)
    if psd:
        lam, V = np.linalg.eigh(omega)
        top = max(abs(lam).max(), 1e-300)
        if lam.min() < -1e-12 * top:
            warnings.warn(f"spatial LRV not PSD (min eigenvalue {lam.min():.3g}); clipping at zero",
                          RuntimeWarning, stacklevel=2)
            omega = (V * np.maximum(lam, 0.0)) @ V.T
            omega = 0.5 * (omega + omega.T)
    return omega


def default_coords(data: Dataset):
    """Standardized (q, s) scaled by sqrt(n) so one lag is about one neighbour spacing."""
    q = (data.q - data.q.mean()) / (data.q.std(ddof=1) if data.n > 1 else 1.0)
    s = (data.s - data.s.mean()) / (data.s.std(ddof=1) if data.n > 1 else 1.0)
    return np.column_stack([q, s]) * math.sqrt(data.n)


@dataclass(frozen=True)
class VcovEstimate:
    sigma_x_star: np.ndarray
    omega_star: np.ndarray
    vcov_theta_star: np.ndarray
    vcov_theta: np.ndarray
    lag_cutoff: int
    adjusted: bool

    @property
    def se_theta(self):
        return np.sqrt(np.maximum(np.diag(self.vcov_theta), 0.0))

    @property
    def se_theta_star(self):
        return np.sqrt(np.maximum(np.diag(self.vcov_theta_star), 0.0))

    def to_dict(self):
        return {
            "vcov_theta_star": self.vcov_theta_star.tolist(),
            "vcov_theta": self.vcov_theta.tolist(),
            "se_theta_star": self.se_theta_star.tolist(),
            "se_theta": self.se_theta.tolist(),
            "lag_cutoff": self.lag_cutoff,
            "adjusted": self.adjusted,
        }


def delta_transform(d: int):
    """T with (beta, delta) = T (beta, beta + delta)."""
    eye = np.eye(d)
    return np.block([[eye, np.zeros((d, d))], [-eye, eye]])


def theta_vcov(data: Dataset, curve: ThresholdCurve | None, window: EvalWindow, theta: ThetaEstimate,
               lag_cutoff: int = 5, adjusted: bool = False, coords=None, gamma_obs=None,
               taper: str = "bartlett") -> VcovEstimate:
    """Sandwich Sigma*^{-1} Omega* Sigma*^{-1} / n for (beta, beta + delta) and its delta-method image."""
    n, d = data.n, data.d
    if theta.plus_mask is None or theta.minus_mask is None:
        raise ValueError("theta must carry its regime masks")
    if gamma_obs is None:
        gamma_obs = gamma_at_observations(data, curve)
    plus, minus = theta.plus_mask, theta.minus_mask
    u = full_residuals(data, gamma_obs, theta, window.contains(data.s))
    Xp = data.X * plus[:, None]
    Xm = data.X * minus[:, None]
    sig = np.zeros((2 * d, 2 * d))
    sig[:d, :d] = Xp.T @ data.X / n
    sig[d:, d:] = Xm.T @ data.X / n
    for blk in (sig[:d, :d], sig[d:, d:]):
        if np.linalg.matrix_rank(blk) < d:
            raise SingularMomentError("a regime moment matrix is singular")
    scores = np.column_stack([Xp * u[:, None], Xm * u[:, None]])
    if coords is None:
        coords = default_coords(data)
    omega = conley_lrv(scores, coords, lag_cutoff, taper)
    if adjusted:
        omega = omega / theta.truncation_fraction
    sig_inv = np.linalg.inv(sig)
    v_star = sig_inv @ omega @ sig_inv / n
    v_star = 0.5 * (v_star + v_star.T)
    T = delta_transform(d)
    return VcovEstimate(sig, omega, v_star, T @ v_star @ T.T, int(lag_cutoff), bool(adjusted))
