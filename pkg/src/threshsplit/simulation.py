"""Monte Carlo designs and samplers for the limiting distributions.

Random numbers come from Philox streams keyed by ``(seed, replication)``,
so a replication's draws do not depend on how replications are split
across worker processes.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import integrate
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.stats import norm

from . import _accel
from ._accel import njit
from .data import Dataset, make_eval_window
from .errors import ThreshSplitError
from .inference import lr_critical_value, lr_statistic, theta_vcov
from .kernels import GAUSSIAN, KernelSpec, eval_kernel, kappa2
from .local_threshold import DEFAULT_TRIM, bandwidth_from_c, gamma_many
from .two_step import estimate_theta_from_gamma, truncation_pi_n

GAMMA0 = {
    "sin_half": lambda s: np.sin(s) / 2.0,
    "zero": lambda s: np.zeros_like(np.asarray(s, dtype=float)),
}
COEF_NAMES = ("beta2", "beta2+delta2", "delta2")


def rng_stream(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep)])))


@dataclass(frozen=True)
class SimConfig:
    n: int = 500
    delta: float = 2.0
    rho: float = 0.0
    m: int = 10
    beta0: tuple = (0.0, 0.0)
    gamma0: str = "sin_half"
    c_bandwidth: float = 0.5
    reps: int = 1000
    seed: int = 42
    eval_s: tuple = (0.0, 0.5, 1.0)
    alpha: float = 0.05
    lag: int = 5
    adjusted: bool = False
    coverage: float = 0.7
    trim: tuple = DEFAULT_TRIM
    noise_scale: float = 1.0
    kernel: str = "gaussian"

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError("rho must lie in [0, 1]")
        if self.n < 4:
            raise ValueError("n must be at least 4")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.gamma0 not in GAMMA0:
            raise ValueError(f"unknown gamma0 tag {self.gamma0!r}")


# ---------------------------------------------------------------------------
# data generating process
# ---------------------------------------------------------------------------

def _noise_factor_blocks(points, rho, m, n):
    """Connected blocks of Sigma_ij = rho^floor(l_ij n) 1{l_ij < m/n} with their square-root factors.

    Returns ``(blocks, repair)``: a list of ``(index, factor)`` pairs for the
    non-trivial blocks and the total magnitude of clipped negative eigenvalues.
    """
    if rho == 0.0 or m <= 0:
        return [], 0.0
    tree = cKDTree(points)
    pairs = tree.query_pairs(r=m / n, output_type="ndarray")
    if pairs.size == 0:
        return [], 0.0
    dist = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    keep = dist < m / n
    pairs, dist = pairs[keep], dist[keep]
    if pairs.size == 0:
        return [], 0.0
    vals = rho ** np.floor(dist * n)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, label = connected_components(graph, directed=False)
    blocks = []
    repair = 0.0
    pair_label = label[pairs[:, 0]]
    for lab in np.unique(pair_label):
        idx = np.flatnonzero(label == lab)
        pos = {v: k for k, v in enumerate(idx)}
        S = np.eye(idx.size)
        sel = pair_label == lab
        for (a, b), v in zip(pairs[sel], vals[sel]):
            S[pos[a], pos[b]] = S[pos[b], pos[a]] = v
        lam, V = np.linalg.eigh(S)
        if lam.min() < -1e-12:
            repair += float(-lam[lam < 0].sum())
        blocks.append((idx, V * np.sqrt(np.maximum(lam, 0.0))))
    if repair > 0:
        warnings.warn(f"noise covariance not PSD; clipped eigenvalue mass {repair:.3g}", RuntimeWarning,
                      stacklevel=3)
    return blocks, repair


def gen_dgp(cfg: SimConfig, rng: np.random.Generator):
    """Draw one sample; returns ``(Dataset, gamma0(s_i))``.

    Draw order: (q, s), then x2 given (q, s), then the correlated noise.
    ``rho = 0`` is the independent design (the zero power is not read as one).
    """
    n = cfg.n
    qs = rng.standard_normal((n, 2))
    q, s = qs[:, 0], qs[:, 1]
    x2 = rng.standard_normal(n) / np.sqrt(1.0 + cfg.rho * (s * s + q * q))
    z = rng.standard_normal(n)
    u = z.copy()
    blocks, _ = _noise_factor_blocks(np.column_stack([s, q]), cfg.rho, cfg.m, n)
    for idx, F in blocks:
        u[idx] = F @ z[idx]
    u *= cfg.noise_scale
    X = np.column_stack([np.ones(n), x2])
    g0 = GAMMA0[cfg.gamma0](s)
    beta0 = np.asarray(cfg.beta0, dtype=float)
    delta0 = np.full(2, float(cfg.delta))
    y = X @ beta0 + (X @ delta0) * (q <= g0) + u
    return Dataset(y, X, q, s, ("const", "x2")), g0


def noise_covariance(points, rho, m, n):
    """Dense Sigma (for checks on small designs); ``n`` sets the distance scale."""
    S = np.eye(len(points))
    if rho == 0.0:
        return S
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    off = (dist < m / n) & ~np.eye(len(points), dtype=bool)
    S[off] = rho ** np.floor(dist[off] * n)
    return S


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

@dataclass
class SimReport:
    study: str
    cells: dict
    reps_used: int
    runtime: float
    failures: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    table: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def cell_key(n, delta, rho, m, label):
    return f"n={n}|delta={delta:g}|rho={rho:g}|m={m}|{label}"


def _rejection_rep(cfg: SimConfig, rep: int):
    """Reject flags (1/0) per eval point for one replication; -1 marks a failure."""
    rng = rng_stream(cfg.seed, rep)
    data, _ = gen_dgp(cfg, rng)
    kernel = KernelSpec(cfg.kernel)
    b_n = bandwidth_from_c(cfg.c_bandwidth, cfg.n)
    s_pts = np.asarray(cfg.eval_s, dtype=float)
    res = gamma_many(data, s_pts, b_n, kernel, cfg.trim)
    cv = -math.inf if cfg.alpha >= 1.0 else lr_critical_value(1.0 - cfg.alpha, kappa2(kernel))
    g_null = GAMMA0[cfg.gamma0](s_pts)
    out = np.full(s_pts.size, -1, dtype=int)
    for t, s in enumerate(s_pts):
        if res["status"][t] != 0:
            continue
        try:
            lr = lr_statistic(data, s, b_n, kernel, float(g_null[t]), float(res["gamma_hat"][t]))
        except ThreshSplitError:
            continue
        out[t] = int(lr > cv)
    return out


def _coverage_rep(cfg: SimConfig, rep: int):
    """Coverage flags for (beta2, beta2 + delta2, delta2); -1 marks a failure."""
    rng = rng_stream(cfg.seed, rep)
    data, _ = gen_dgp(cfg, rng)
    kernel = KernelSpec(cfg.kernel)
    b_n = bandwidth_from_c(cfg.c_bandwidth, cfg.n)
    window = make_eval_window(data, cfg.coverage, mode="observed")
    inwin = window.contains(data.s)
    idx = np.flatnonzero(inwin)
    res = gamma_many(data, data.s[idx], b_n, kernel, cfg.trim)
    gamma_obs = np.full(data.n, np.nan)
    gamma_obs[idx] = np.where(res["status"] == 0, res["gamma_hat"], np.nan)
    try:
        theta = estimate_theta_from_gamma(data, gamma_obs, inwin, truncation_pi_n(data.n, b_n))
        coords = data.n * np.column_stack([data.q, data.s])
        vc = theta_vcov(data, None, window, theta, cfg.lag, cfg.adjusted, coords=coords, gamma_obs=gamma_obs)
    except (ThreshSplitError, np.linalg.LinAlgError):
        return np.full(3, -1, dtype=int)
    d = data.d
    beta0 = np.asarray(cfg.beta0, dtype=float)
    delta0 = np.full(d, float(cfg.delta))
    est = np.array([theta.beta_hat[1], theta.delta_star_hat[1], theta.delta_hat[1]])
    truth = np.array([beta0[1], beta0[1] + delta0[1], delta0[1]])
    se = np.array([vc.se_theta_star[1], vc.se_theta_star[d + 1], vc.se_theta[d + 1]])
    z = norm.ppf(1.0 - cfg.alpha / 2.0)
    slack = 1e-10 * (1.0 + np.abs(truth))
    return (np.abs(est - truth) <= z * se + slack).astype(int)


def _run_block(args):
    fn, cfg, reps = args
    return np.array([fn(cfg, r) for r in reps])


def _run_reps(fn, cfg: SimConfig, workers: int | None):
    reps = list(range(cfg.reps))
    if not workers or workers <= 1:
        return _run_block((fn, cfg, reps))
    chunks = [reps[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_run_block, [(fn, cfg, c) for c in chunks]))
    out = np.empty((cfg.reps, parts[0].shape[1]), dtype=int)
    for c, p in zip(chunks, parts):
        out[c] = p
    return out


def _tally(flags):
    ok = flags >= 0
    used = ok.sum(axis=0)
    hits = np.where(ok, flags, 0).sum(axis=0)
    freq = np.where(used > 0, hits / np.maximum(used, 1), np.nan)
    return freq, flags.shape[0] - used


def run_rejection_study(cfgs, workers: int | None = None) -> SimReport:
    """Rejection frequency of the LR test of the true gamma0(s) per (n, delta, rho, m, s) cell."""
    if isinstance(cfgs, SimConfig):
        cfgs = [cfgs]
    t0 = time.perf_counter()
    cells, fails, table = {}, {}, {}
    for cfg in cfgs:
        freq, failed = _tally(_run_reps(_rejection_rep, cfg, workers))
        for s, f, nf in zip(cfg.eval_s, freq, failed):
            key = cell_key(cfg.n, cfg.delta, cfg.rho, cfg.m, f"s={s:g}")
            cells[key] = float(f)
            fails[key] = int(nf)
            table.setdefault(f"s={s:g}", {}).setdefault(f"n={cfg.n}", {})[f"delta={cfg.delta:g}"] = float(f)
    return SimReport("rejection", cells, cfgs[0].reps, time.perf_counter() - t0, fails,
                     {"configs": [asdict(c) for c in cfgs]}, table)


def run_coverage_study(cfgs, adjusted: bool | None = None, workers: int | None = None) -> SimReport:
    """Coverage of normal-theory 95% intervals for beta2, beta2 + delta2 and delta2."""
    if isinstance(cfgs, SimConfig):
        cfgs = [cfgs]
    if adjusted is not None:
        cfgs = [replace(c, adjusted=adjusted) for c in cfgs]
    t0 = time.perf_counter()
    cells, fails, table = {}, {}, {}
    for cfg in cfgs:
        freq, failed = _tally(_run_reps(_coverage_rep, cfg, workers))
        for name, f, nf in zip(COEF_NAMES, freq, failed):
            key = cell_key(cfg.n, cfg.delta, cfg.rho, cfg.m, name)
            cells[key] = float(f)
            fails[key] = int(nf)
            table.setdefault(name, {}).setdefault(f"n={cfg.n}", {})[f"delta={cfg.delta:g}"] = float(f)
    return SimReport("coverage", cells, cfgs[0].reps, time.perf_counter() - t0, fails,
                     {"configs": [asdict(c) for c in cfgs]}, table)


# ---------------------------------------------------------------------------
# limiting processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftParams:
    varrho: float = 1.0
    gamma0_slope: float = 1.0
    xi: float = 1.0
    kernel: KernelSpec = GAUSSIAN

    @property
    def ratio(self) -> float:
        """xi / (varrho |gamma0'|); infinite in the undersmoothed limit."""
        denom = self.varrho * abs(self.gamma0_slope)
        return math.inf if denom == 0 else self.xi / denom


def _psi(kernel: KernelSpec, j: int, upper: float) -> float:
    f = lambda t: t ** j * eval_kernel(kernel, t)  # noqa: E731
    lim = min(upper, kernel.support_radius)
    if lim <= 0:
        return 0.0
    if math.isinf(lim):
        return integrate.quad(f, 0.0, math.inf, epsabs=1e-13, epsrel=1e-12)[0]
    return integrate.quad(f, 0.0, lim, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


def drift_mu(p: DriftParams, r):
    """-|r| psi0 + (varrho |gamma0'| / xi) psi1, psi_j the partial moments of K up to |r| ratio."""
    r_arr = np.abs(np.atleast_1d(np.asarray(r, dtype=float)))
    a = p.ratio
    out = np.empty_like(r_arr)
    for i, ri in enumerate(r_arr):
        if math.isinf(a):
            out[i] = -0.5 * ri
        else:
            out[i] = -ri * _psi(p.kernel, 0, ri * a) + _psi(p.kernel, 1, ri * a) / a
    return out if np.ndim(r) else float(out[0])


@njit
def _path_extreme_nb(incr_r, incr_l, scale, drift, unif_r, unif_l, bridge_var):
    """Max and argmax index (signed) of scale W(r) + drift(|r|) along each row.

    With ``bridge_var > 0`` the maximum inside each grid interval is drawn
    exactly from the Brownian bridge between its endpoints (``unif_*`` are
    the uniforms driving that draw); the argmax index stays on the grid.
    """
    reps, K = incr_r.shape
    best = np.empty(reps)
    where = np.empty(reps, np.int64)
    for t in range(reps):
        gv = drift[0]
        bv = gv
        bk = 0
        for side in range(2):
            w = 0.0
            prev = drift[0]
            for k in range(K):
                if side == 0:
                    w += incr_r[t, k]
                else:
                    w += incr_l[t, k]
                v = scale * w + drift[k + 1]
                if v > gv:
                    gv = v
                    bk = k + 1 if side == 0 else -(k + 1)
                if v > bv:
                    bv = v
                if bridge_var > 0.0:
                    u = unif_r[t, k] if side == 0 else unif_l[t, k]
                    gap = v - prev
                    top = 0.5 * (v + prev + math.sqrt(gap * gap - 2.0 * bridge_var * math.log(u)))
                    if top > bv:
                        bv = top
                prev = v
        best[t] = bv
        where[t] = bk
    return best, where


def _side_np(incr, scale, drift, unif, bridge_var):
    v = scale * np.cumsum(incr, axis=1) + drift[1:]
    k = np.argmax(v, axis=1)
    m = v[np.arange(v.shape[0]), k]
    top = np.full(v.shape[0], -np.inf)
    if bridge_var > 0.0:
        prev = np.concatenate([np.full((v.shape[0], 1), drift[0]), v[:, :-1]], axis=1)
        gap = v - prev
        top = (0.5 * (v + prev + np.sqrt(gap * gap - 2.0 * bridge_var * np.log(unif))) ).max(axis=1)
    return m, k, top


def _path_extreme_np(incr_r, incr_l, scale, drift, unif_r, unif_l, bridge_var):
    reps = incr_r.shape[0]
    mr, kr, tr = _side_np(incr_r, scale, drift, unif_r, bridge_var)
    ml, kl, tl = _side_np(incr_l, scale, drift, unif_l, bridge_var)
    best = np.full(reps, drift[0])
    where = np.zeros(reps, np.int64)
    take_r = mr > best
    best = np.where(take_r, mr, best)
    where = np.where(take_r, kr + 1, where)
    take_l = ml > best
    best = np.where(take_l, ml, best)
    where = np.where(take_l, -(kl + 1), where)
    return np.maximum(best, np.maximum(tr, tl)), where


path_extreme = _path_extreme_nb if _accel.USE_NUMBA else _path_extreme_np


def _argmax_block(args):
    mode, drift, K, dr, seed, reps, bridge = args
    incr_r = np.empty((len(reps), K))
    incr_l = np.empty((len(reps), K))
    unif_r = np.ones((len(reps), K) if bridge else (1, 1))
    unif_l = np.ones((len(reps), K) if bridge else (1, 1))
    sd = math.sqrt(dr)
    for row, rep in enumerate(reps):
        g = rng_stream(seed, rep)
        z = g.standard_normal(2 * K)
        incr_r[row] = z[:K] * sd
        incr_l[row] = z[K:] * sd
        if bridge:
            # 1 - U lies in (0, 1], keeping the logarithm finite
            v = 1.0 - g.random(2 * K)
            unif_r[row] = v[:K]
            unif_l[row] = v[K:]
    scale = 2.0 if mode == "zeta" else 1.0
    bvar = scale * scale * dr if bridge else 0.0
    best, where = path_extreme(incr_r, incr_l, scale, drift, unif_r, unif_l, bvar)
    return best if mode == "zeta" else where * dr


def simulate_argmax(params=None, mode: str = "drift", R: float | None = None, dr: float = 0.05,
                    reps: int = 20000, seed: int = 42, drift=None, chunk: int = 1000,
                    workers: int | None = None, bridge: bool | None = None):
    """Samples of argmax_r (W(r) + mu(r)) (``mode="drift"``) or max_r (2 W(r) - |r|) (``mode="zeta"``).

    W is a two-sided Brownian motion discretized on ``r = k dr``, ``|r| <= R``.
    ``drift`` (a callable of |r|) overrides the drift implied by ``params``.
    ``bridge`` (default on in zeta mode) adds the exact within-interval bridge
    maximum, removing the downward bias of a grid maximum; it only affects
    the zeta value.
    """
    if mode not in ("drift", "zeta"):
        raise ValueError("mode must be 'drift' or 'zeta'")
    if dr <= 0:
        raise ValueError("dr must be positive")
    if R is None:
        R = 100.0
        if mode == "drift" and params is not None and math.isfinite(params.ratio):
            R = 100.0 * max(1.0, 1.0 / params.ratio)
    if R <= 0:
        raise ValueError("R must be positive")
    K = int(round(R / dr))
    grid = np.arange(K + 1) * dr
    if mode == "zeta":
        dgrid = -grid
    elif drift is not None:
        dgrid = np.asarray(drift(grid), dtype=float)
    else:
        dgrid = drift_mu(params if params is not None else DriftParams(), grid)
    dgrid = np.ascontiguousarray(dgrid, dtype=float)
    blocks = [list(range(i, min(reps, i + chunk))) for i in range(0, reps, chunk)]
    if bridge is None:
        bridge = mode == "zeta"
    bridge = bool(bridge) and mode == "zeta"
    jobs = [(mode, dgrid, K, dr, seed, b, bridge) for b in blocks]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_argmax_block, jobs))
    else:
        parts = [_argmax_block(j) for j in jobs]
    return np.concatenate(parts)
