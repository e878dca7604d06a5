"""Star-shaped boundary estimation by rotating around a center point.

Coordinates: ``s`` is the horizontal axis and ``q`` the vertical one, so a
point with polar angle ``phi`` (degrees, counterclockwise from the positive
s axis) sits at ``(q, s) = (l sin phi, l cos phi)``.

Rotation by ``a`` maps polar angle ``phi`` to ``phi - a``.  The ray with
direction ``theta`` therefore lands on the positive q axis after rotating by
``theta - 90``; there the radius is a threshold in ``q(a)`` evaluated at
``s(a) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, RasterGrid
from .errors import ContourError, ThreshSplitError
from .local_threshold import DEFAULT_TRIM, _kernel, estimate_gamma_at


@dataclass(frozen=True)
class PolarObservation:
    l: np.ndarray
    a_deg: np.ndarray
    q: np.ndarray
    s: np.ndarray


def polar_transform(q, s) -> PolarObservation:
    """Radius and angle in [0, 360); the origin gets angle 0."""
    q = np.asarray(q, dtype=float)
    s = np.asarray(s, dtype=float)
    l = np.hypot(q, s)
    a = np.degrees(np.arctan2(q, s)) % 360.0
    # arctan2 may return -0.0 or round up to exactly 360 after the modulo
    a = np.where((a >= 360.0) | (l == 0), 0.0, a) + 0.0
    return PolarObservation(l, a, q, s)


def rotate(q, s, a_deg):
    """Counterclockwise rotation: (q cos a - s sin a, s cos a + q sin a)."""
    a = math.radians(float(a_deg) % 360.0)
    c, sn = math.cos(a), math.sin(a)
    q = np.asarray(q, dtype=float)
    s = np.asarray(s, dtype=float)
    return q * c - s * sn, s * c + q * sn


def shoelace_area(x, y) -> float:
    """Area of the closed polygon through the vertices in order."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass(frozen=True)
class ContourEstimate:
    angles_deg: np.ndarray
    radius_hat: np.ndarray
    inner_level: np.ndarray
    outer_level: np.ndarray
    ok: np.ndarray
    center: tuple
    bandwidth: float
    errors: tuple = ()

    @property
    def inner_mean(self) -> float:
        """Average over angles of the inside (lower-regime) level beta + delta."""
        return float(np.nanmean(self.inner_level)) if self.ok.any() else math.nan

    @property
    def outer_mean(self) -> float:
        return float(np.nanmean(self.outer_level)) if self.ok.any() else math.nan

    def polyline(self):
        """Boundary vertices ``(s, q)`` in the original coordinates; failed angles skipped."""
        t = np.radians(self.angles_deg[self.ok])
        r = self.radius_hat[self.ok]
        return self.center[1] + r * np.cos(t), self.center[0] + r * np.sin(t)

    def area(self) -> float:
        x, y = self.polyline()
        return shoelace_area(x, y) if x.size >= 3 else math.nan

    def to_dict(self):
        return {
            "n_angles": int(self.angles_deg.size),
            "n_failed": int((~self.ok).sum()),
            "center_q": float(self.center[0]),
            "center_s": float(self.center[1]),
            "bandwidth": self.bandwidth,
            "inner_mean": self.inner_mean,
            "outer_mean": self.outer_mean,
            "area": self.area(),
        }


def angle_grid(n_angles: int):
    return np.arange(n_angles) * (360.0 / n_angles)


def estimate_contour(data: Dataset, n_angles: int = 500, b_n: float | None = None, kernel=None,
                     trim=DEFAULT_TRIM, center=(0.0, 0.0), c: float = 1.0) -> ContourEstimate:
    """Radius of the boundary along ``n_angles`` equally spaced rays from ``center = (q*, s*)``.

    Along each ray the half-plane in front of it (``q(a) >= 0``) is fit with a
    single threshold in ``q(a)`` at ``s(a) = 0``; inside means
    ``q(a) <= radius``.  ``b_n`` defaults to ``c n^{-1/2}`` with the full ``n``.
    """
    if n_angles < 4:
        raise ValueError("need at least 4 angles")
    kernel = _kernel(kernel)
    if b_n is None:
        b_n = c / math.sqrt(data.n)
    qc = data.q - center[0]
    sc = data.s - center[1]
    thetas = angle_grid(n_angles)
    radius = np.full(n_angles, np.nan)
    inner = np.full(n_angles, np.nan)
    outer = np.full(n_angles, np.nan)
    ok = np.zeros(n_angles, dtype=bool)
    errs = []
    for k, th in enumerate(thetas):
        qa, sa = rotate(qc, sc, th - 90.0)
        keep = qa >= 0
        try:
            if keep.sum() < 2 * data.d:
                raise ContourError("too few observations in front of the ray")
            sub = Dataset(data.y[keep], data.X[keep], qa[keep], sa[keep], data.x_names)
            fit = estimate_gamma_at(sub, 0.0, b_n, kernel, trim)
        except ThreshSplitError as exc:
            errs.append(f"{th:g}: {exc}")
            continue
        radius[k] = fit.gamma_hat
        outer[k] = fit.beta_local[0]
        inner[k] = fit.beta_local[0] + fit.delta_local[0]
        ok[k] = True
    if not ok.any():
        raise ContourError(f"boundary estimation failed at all {n_angles} angles")
    return ContourEstimate(thetas, radius, inner, outer, ok, (float(center[0]), float(center[1])), float(b_n),
                           tuple(errs))


def implied_quantile(values, level: float) -> float:
    """Share of intensities at or below ``level``."""
    v = np.asarray(values, dtype=float).ravel()
    return float(np.mean(v <= level))


def quantile_area(raster: RasterGrid, p: float = 0.95) -> float:
    """Normalized area of pixels at or above the p-quantile (the fixed-cutoff benchmark)."""
    v = raster.values
    cut = np.quantile(v, p)
    return float((v >= cut).sum()) / v.size


def raster_contour(raster: RasterGrid, center_pixel, n_angles: int = 500, c: float = 1.0, kernel=None,
                   trim=DEFAULT_TRIM):
    """Contour on a raster with the center given as a 1-based (row from south, column from west) pixel."""
    data = raster.flatten()
    center = raster.center_coords(*center_pixel)
    est = estimate_contour(data, n_angles, None, kernel, trim, center, c)
    return est, data
