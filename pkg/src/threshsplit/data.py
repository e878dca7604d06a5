"""Datasets, evaluation windows and rasters."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import EmptyDataError, ParseError, SchemaError, ShapeError, SizeError


def _frozen(a, ndim):
    a = np.array(a, dtype=float, copy=True)
    if ndim == 2 and a.ndim == 1:
        a = a[:, None]
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable observation table ``(y, X, q, s)``.

    ``norm_meta`` maps a column name (``"q"``/``"s"``) to the ``(mean, std)``
    pair removed by :meth:`standardized`; it is empty for raw data.
    """

    y: np.ndarray
    X: np.ndarray
    q: np.ndarray
    s: np.ndarray
    x_names: tuple = ()
    norm_meta: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        y = _frozen(self.y, 1)
        X = _frozen(self.X, 2)
        q = _frozen(self.q, 1)
        s = _frozen(self.s, 1)
        n = y.shape[0]
        if n == 0:
            raise EmptyDataError("dataset has no rows")
        if not (X.shape[0] == q.shape[0] == s.shape[0] == n):
            raise ShapeError(
                f"column lengths differ: y={n}, X={X.shape[0]}, q={q.shape[0]}, s={s.shape[0]}"
            )
        for name, a in (("y", y), ("X", X), ("q", q), ("s", s)):
            if not np.all(np.isfinite(a)):
                raise ParseError(f"non-finite entries in column {name}")
        names = tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ShapeError("x_names length does not match the number of regressors")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "x_names", names)
        object.__setattr__(self, "norm_meta", dict(self.norm_meta))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def standardized_flag(self) -> bool:
        return bool(self.norm_meta)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.X[idx], self.q[idx], self.s[idx], self.x_names, self.norm_meta)

    def replace(self, **cols) -> "Dataset":
        kw = dict(y=self.y, X=self.X, q=self.q, s=self.s, x_names=self.x_names, norm_meta=self.norm_meta)
        kw.update(cols)
        return Dataset(**kw)

    def standardized(self) -> "Dataset":
        """Center and scale q and s (sample std-dev, divisor n-1).

        Applying it to already standardized data is a no-op on the values; the
        recorded metadata composes so the original scale stays recoverable.
        """
        if self.n < 2:
            raise SizeError("standardization needs at least two observations")
        meta = dict(self.norm_meta)
        cols = {}
        for name in ("q", "s"):
            a = getattr(self, name)
            mu = float(a.mean())
            sd = float(a.std(ddof=1))
            if sd == 0.0:
                raise SizeError(f"column {name} is constant and cannot be standardized")
            cols[name] = (a - mu) / sd
            m0, s0 = meta.get(name, (0.0, 1.0))
            meta[name] = (m0 + s0 * mu, s0 * sd)
        return self.replace(norm_meta=meta, **cols)

    def to_csv(self, path, y_name="y", q_name="q", s_name="s"):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([y_name, *self.x_names, q_name, s_name])
            for i in range(self.n):
                w.writerow([repr(float(v)) for v in (self.y[i], *self.X[i], self.q[i], self.s[i])])
        return path


def load_csv_dataset(path, column_map: Mapping, standardize: bool = False, add_intercept: bool = False) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    ``column_map`` has keys ``y``, ``q``, ``s`` (column names) and ``x`` (a
    name or list of names, possibly empty).  With ``add_intercept`` a leading
    constant column named ``const`` is prepended to X.
    """
    path = Path(path)
    for key in ("y", "q", "s"):
        if key not in column_map:
            raise SchemaError(f"column_map lacks the {key!r} entry")
    xcols = column_map.get("x", [])
    if isinstance(xcols, str):
        xcols = [c for c in xcols.split(",") if c]
    xcols = list(xcols)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataError(f"{path} is empty") from None
        wanted = [column_map["y"], *xcols, column_map["q"], column_map["s"]]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"columns not found in {path.name}: {missing}")
        pos = [header.index(c) for c in wanted]
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(row[p]) for p in pos])
            except (ValueError, IndexError):
                raise ParseError(f"row {lineno}: could not parse numeric values", row=lineno) from None
    if not rows:
        raise EmptyDataError(f"{path} has a header but no data rows")
    a = np.asarray(rows)
    if not np.all(np.isfinite(a)):
        bad = int(np.argwhere(~np.isfinite(a))[0, 0]) + 1
        raise ParseError(f"row {bad}: non-finite value", row=bad)
    k = len(xcols)
    X = a[:, 1:1 + k]
    names = tuple(xcols)
    if add_intercept:
        X = np.column_stack([np.ones(len(a)), X])
        names = ("const", *names)
    if X.shape[1] == 0:
        raise SchemaError("no regressors: give x columns or add an intercept")
    data = Dataset(a[:, 0], X, a[:, 1 + k], a[:, 2 + k], names)
    return data.standardized() if standardize else data


@dataclass(frozen=True)
class EvalWindow:
    """Interior window S0 = [s0_lo, s0_hi] and the evaluation grid inside it."""

    s0_lo: float
    s0_hi: float
    grid: np.ndarray
    mode: str = "grid"

    def __post_init__(self):
        g = _frozen(np.sort(np.asarray(self.grid, dtype=float)), 1)
        object.__setattr__(self, "grid", g)

    def contains(self, s):
        s = np.asarray(s, dtype=float)
        return (s >= self.s0_lo) & (s <= self.s0_hi)


def empirical_quantile(a, p):
    """Linear interpolation between order statistics at position (n-1) p."""
    return np.quantile(np.asarray(a, dtype=float), p, method="linear")


def make_eval_window(data: Dataset, coverage: float = 0.7, n_grid: int | None = 100, mode: str = "grid") -> EvalWindow:
    """Window covering the middle ``coverage`` share of s.

    ``mode="grid"`` places ``n_grid`` equally spaced points in the window;
    ``mode="observed"`` uses the observed s values inside the window (all of
    them, or ``n_grid`` evenly thinned ones when ``n_grid`` is given).
    """
    if not (0.0 < coverage <= 1.0):
        raise ValueError("coverage must lie in (0, 1]")
    tail = (1.0 - coverage) / 2.0
    lo, hi = (float(v) for v in empirical_quantile(data.s, [tail, 1.0 - tail]))
    if mode == "grid":
        if n_grid is None or n_grid < 1:
            raise ValueError("n_grid must be at least 1")
        grid = np.linspace(lo, hi, n_grid) if n_grid > 1 else np.array([(lo + hi) / 2.0])
    elif mode == "observed":
        pts = np.unique(data.s[(data.s >= lo) & (data.s <= hi)])
        if n_grid is not None:
            if n_grid > data.n:
                raise SizeError(f"n_grid={n_grid} exceeds the sample size {data.n}")
            if n_grid < pts.size:
                pts = pts[np.unique(np.linspace(0, pts.size - 1, n_grid).round().astype(int))]
        grid = pts
    else:
        raise ValueError(f"unknown grid mode {mode!r}")
    if hi == lo:
        hi = math.nextafter(lo, math.inf)
    return EvalWindow(lo, hi, grid, mode)


@dataclass(frozen=True)
class RasterGrid:
    """Intensity matrix on the normalized lattice.

    Row ``r`` (0-based, file order) sits at ``q = (r + 1) / n1`` when row 0 is
    the southern edge (the default) and at ``q = (n1 - r) / n1`` when
    ``origin_flip`` says row 0 is north.  Column ``c`` sits at ``s = (c + 1) / n2``.
    """

    values: np.ndarray
    origin_flip: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise ShapeError("raster must be a non-empty 2-d matrix")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @property
    def q_coords(self):
        """q coordinate of each file row."""
        n1 = self.values.shape[0]
        r = np.arange(n1)
        return (n1 - r) / n1 if self.origin_flip else (r + 1) / n1

    @property
    def s_coords(self):
        n2 = self.values.shape[1]
        return np.arange(1, n2 + 1) / n2

    def center_coords(self, row_from_south: int, col_from_west: int):
        """Normalized (q, s) of a 1-based pixel position counted from the south-west corner."""
        n1, n2 = self.values.shape
        return row_from_south / n1, col_from_west / n2

    def flatten(self) -> Dataset:
        n1, n2 = self.values.shape
        qq = np.repeat(self.q_coords, n2)
        ss = np.tile(self.s_coords, n1)
        return Dataset(self.values.ravel(), np.ones((n1 * n2, 1)), qq, ss, ("const",))


def load_raster_grid(path, origin_flip: bool = False) -> RasterGrid:
    """Read a header-less numeric CSV matrix."""
    rows = []
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError(f"raster row {lineno}: non-numeric cell", row=lineno) from None
    if not rows:
        raise EmptyDataError(f"{path} holds no raster rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ShapeError(f"ragged raster: row lengths {sorted(widths)}")
    return RasterGrid(np.asarray(rows), origin_flip)
