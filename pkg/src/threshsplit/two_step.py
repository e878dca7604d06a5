"""Second-step regime coefficients from observations away from the threshold."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, EvalWindow
from .errors import InsufficientRegimeError
from .local_threshold import ThresholdCurve


def truncation_pi_n(n: int, b_n: float) -> float:
    """Default truncation margin (n b_n)^{-1/2}."""
    if n < 1 or b_n <= 0:
        raise ValueError("need n >= 1 and b_n > 0")
    return 1.0 / math.sqrt(n * b_n)


@dataclass(frozen=True)
class ThetaEstimate:
    beta_hat: np.ndarray
    delta_star_hat: np.ndarray
    delta_hat: np.ndarray
    n_plus: int
    n_minus: int
    truncation_fraction: float
    pi_n: float
    n_window: int = 0
    n_failed: int = 0
    plus_mask: np.ndarray | None = None
    minus_mask: np.ndarray | None = None

    @property
    def theta_star(self):
        return np.concatenate([self.beta_hat, self.delta_star_hat])

    @property
    def theta(self):
        return np.concatenate([self.beta_hat, self.delta_hat])

    def to_dict(self):
        return {
            "beta_hat": self.beta_hat.tolist(),
            "delta_star_hat": self.delta_star_hat.tolist(),
            "delta_hat": self.delta_hat.tolist(),
            "n_plus": self.n_plus,
            "n_minus": self.n_minus,
            "n_window": self.n_window,
            "n_failed": self.n_failed,
            "truncation_fraction": self.truncation_fraction,
            "pi_n": self.pi_n,
        }


def _ols(X, y, side):
    if X.shape[0] < X.shape[1]:
        raise InsufficientRegimeError(
            f"{side} regime has {X.shape[0]} observations, fewer than d={X.shape[1]}", side=side
        )
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise InsufficientRegimeError(f"{side} regime design is rank deficient (rank {rank})", side=side)
    return coef


def gamma_at_observations(data: Dataset, curve: ThresholdCurve, interpolate: bool = False):
    """gamma_hat(s_i) for every observation, read off the curve."""
    return curve.evaluate(data.s, interpolate=interpolate)


def estimate_theta_from_gamma(data: Dataset, gamma_obs, in_window, pi_n: float) -> ThetaEstimate:
    """Truncated regime OLS given gamma_hat(s_i); NaN entries are excluded."""
    gamma_obs = np.asarray(gamma_obs, dtype=float)
    in_window = np.asarray(in_window, dtype=bool)
    valid = in_window & np.isfinite(gamma_obs)
    with np.errstate(invalid="ignore"):
        plus = valid & (data.q > gamma_obs + pi_n)
        minus = valid & (data.q < gamma_obs - pi_n)
    beta = _ols(data.X[plus], data.y[plus], "upper")
    dstar = _ols(data.X[minus], data.y[minus], "lower")
    n_win = int(in_window.sum())
    n_plus, n_minus = int(plus.sum()), int(minus.sum())
    return ThetaEstimate(
        beta, dstar, dstar - beta, n_plus, n_minus,
        (n_plus + n_minus) / n_win if n_win else math.nan,
        float(pi_n), n_win, int((in_window & ~np.isfinite(gamma_obs)).sum()), plus, minus,
    )


def estimate_theta(data: Dataset, curve: ThresholdCurve, window: EvalWindow, pi_n: float | None = None,
                   interpolate: bool = False) -> ThetaEstimate:
    """beta from {q_i > gamma_hat(s_i) + pi_n}, beta + delta from {q_i < gamma_hat(s_i) - pi_n}, s_i in S0."""
    if pi_n is None:
        pi_n = truncation_pi_n(data.n, curve.bandwidth)
    gamma_obs = gamma_at_observations(data, curve, interpolate)
    return estimate_theta_from_gamma(data, gamma_obs, window.contains(data.s), pi_n)
