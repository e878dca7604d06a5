from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from threshsplit import simulation as sim
from threshsplit.kernels import KernelSpec
from threshsplit.simulation import (
    DriftParams,
    SimConfig,
    drift_mu,
    gen_dgp,
    noise_covariance,
    rng_stream,
    run_coverage_study,
    run_rejection_study,
    simulate_argmax,
)

UNIFORM = KernelSpec("uniform")


def _noise(cfg, data, g0):
    return data.y - data.X @ np.asarray(cfg.beta0) - (data.X @ np.full(2, cfg.delta)) * (data.q <= g0)


def test_independent_design_has_identity_covariance():
    pts = np.random.default_rng(0).standard_normal((50, 2)) * 0.01
    np.testing.assert_array_equal(noise_covariance(pts, 0.0, 10, 50), np.eye(50))
    assert sim._noise_factor_blocks(pts, 0.0, 10, 50) == ([], 0.0)


def test_unit_rho_is_indicator_of_cutoff():
    pts = np.array([[0.0, 0.0], [0.05, 0.0], [0.5, 0.0]])
    S = noise_covariance(pts, 1.0, 2, 20)  # cutoff m / n = 0.1
    np.testing.assert_array_equal(S, [[1, 1, 0], [1, 1, 0], [0, 0, 1]])


def test_power_decay():
    pts = np.array([[0.0, 0.0], [0.25, 0.0]])
    S = noise_covariance(pts, 0.5, 3, 10)  # floor(2.5) = 2
    assert S[0, 1] == pytest.approx(0.25)


def test_block_factors_rebuild_dense_covariance():
    rng = np.random.default_rng(3)
    n = 120
    pts = rng.standard_normal((n, 2))
    blocks, repair = sim._noise_factor_blocks(pts, 0.5, 3, n)
    assert repair == 0.0 and blocks
    L = np.eye(n)
    for idx, F in blocks:
        L[np.ix_(idx, idx)] = F
    np.testing.assert_allclose(L @ L.T, noise_covariance(pts, 0.5, 3, n), atol=1e-12)


def test_dgp_moments():
    cfg = SimConfig(n=200, delta=2.0)
    x2, u = [], []
    for rep in range(40):
        data, g0 = gen_dgp(cfg, rng_stream(1, rep))
        np.testing.assert_array_equal(data.X[:, 0], 1.0)
        np.testing.assert_allclose(g0, np.sin(data.s) / 2)
        x2.append(data.X[:, 1])
        u.append(_noise(cfg, data, g0))
    x2, u = np.concatenate(x2), np.concatenate(u)
    assert abs(x2.mean()) < 0.05 and abs(x2.var() - 1) < 0.05
    assert abs(u.mean()) < 0.05 and abs(u.var() - 1) < 0.05


def test_heteroskedastic_regressor_is_heavy_tailed():
    # x2 = z v^{1/2}, v = 1 / (1 + E) with E ~ Exp(1) at rho = 1/2, so the
    # excess kurtosis is 3 E[v^2] / E[v]^2 - 3 with E[v^2] = 1 - E[v]
    ev = math.e * special.exp1(1.0)
    target = 3 * (1 - ev) / ev ** 2 - 3
    draws = [gen_dgp(SimConfig(n=5000, rho=0.5), rng_stream(2, r))[0].X[:, 1] for r in range(8)]
    assert stats.kurtosis(np.concatenate(draws)) == pytest.approx(target, abs=0.1)
    indep = [gen_dgp(SimConfig(n=5000, rho=0.0), rng_stream(2, r))[0].X[:, 1] for r in range(8)]
    assert abs(stats.kurtosis(np.concatenate(indep))) < 0.1


def test_config_validation():
    for bad in ({"reps": 0}, {"rho": 1.5}, {"n": 2}, {"alpha": 0.0}, {"gamma0": "cos"}):
        with pytest.raises(ValueError):
            SimConfig(**bad)


# --- limiting processes ----------------------------------------------------

def test_drift_vanishes_at_origin_and_is_even():
    p = DriftParams(xi=0.7)
    assert drift_mu(p, 0.0) == 0.0
    r = np.linspace(0, 4, 9)
    np.testing.assert_allclose(drift_mu(p, r), drift_mu(p, -r), atol=1e-15)
    assert np.all(np.diff(drift_mu(p, r)) < 0)


@pytest.mark.parametrize("ratio", [0.5, 1.0, 3.0])
def test_uniform_drift_closed_form(ratio):
    p = DriftParams(xi=ratio, kernel=UNIFORM)
    r = np.linspace(0, 3, 31)
    x = np.minimum(r * ratio, 0.5)
    np.testing.assert_allclose(drift_mu(p, r), -r * x + 0.5 * x * x / ratio, atol=1e-8)


def test_undersmoothed_drift():
    p = DriftParams(gamma0_slope=0.0)
    assert math.isinf(p.ratio)
    assert drift_mu(p, 2.0) == pytest.approx(-1.0)


def test_stronger_drift_concentrates_argmax():
    a = simulate_argmax(mode="drift", drift=lambda r: -r, R=40, reps=3000, seed=1)
    b = simulate_argmax(mode="drift", drift=lambda r: -0.5 * r, R=40, reps=3000, seed=1)
    assert a.var() < b.var()


def test_zeta_grid_error_shrinks_with_step():
    z = np.array([1.268, 2.074, 2.988])
    target = (1 - np.exp(-z / 2)) ** 2
    err = []
    for dr in (0.2, 0.05):
        v = simulate_argmax(mode="zeta", R=40, dr=dr, reps=6000, seed=3, bridge=False)
        err.append(np.abs((v[:, None] <= z).mean(0) - target).max())
    assert err[1] < err[0]


@given(st.integers(0, 1000), st.booleans())
def test_path_backends_agree(seed, bridge):
    rng = np.random.default_rng(seed)
    K = 60
    ir, il = rng.standard_normal((2, 5, K)) * 0.2
    ur, ul = 1.0 - rng.random((2, 5, K))
    drift = -np.arange(K + 1) * 0.05
    bvar = 0.16 if bridge else 0.0
    a = sim._path_extreme_nb(ir, il, 2.0, drift, ur, ul, bvar)
    b = sim._path_extreme_np(ir, il, 2.0, drift, ur, ul, bvar)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    np.testing.assert_array_equal(a[1], b[1])


def test_argmax_seed_and_chunk_determinism():
    a = simulate_argmax(mode="drift", R=20, reps=500, seed=9, chunk=100)
    b = simulate_argmax(mode="drift", R=20, reps=500, seed=9, chunk=250)
    c = simulate_argmax(mode="drift", R=20, reps=500, seed=10, chunk=100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_argmax_rejects_bad_arguments():
    with pytest.raises(ValueError):
        simulate_argmax(mode="levy")
    with pytest.raises(ValueError):
        simulate_argmax(dr=0.0)


# --- studies ---------------------------------------------------------------

def _strip(rep):
    d = rep.to_dict()
    d.pop("runtime")
    return d


def test_rejection_study_deterministic_across_workers():
    cfg = SimConfig(n=80, delta=3.0, reps=6, seed=5, eval_s=(0.0, 0.5))
    a = run_rejection_study(cfg)
    b = run_rejection_study(cfg, workers=2)
    assert _strip(a) == _strip(b)
    assert all(0.0 <= v <= 1.0 for v in a.cells.values())


def test_rejection_always_at_unit_alpha():
    rep = run_rejection_study(SimConfig(n=80, delta=3.0, reps=4, alpha=1.0, eval_s=(0.0,)))
    assert list(rep.cells.values()) == [1.0]


def test_noiseless_coverage_is_one():
    rep = run_coverage_study(SimConfig(n=120, delta=3.0, reps=3, noise_scale=0.0, gamma0="zero"))
    assert all(v == 1.0 for v in rep.cells.values())
    assert set(rep.table) == set(sim.COEF_NAMES)


def test_coverage_study_seed_determinism():
    cfg = SimConfig(n=100, delta=4.0, reps=4, seed=8, rho=0.5, m=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = run_coverage_study(cfg, adjusted=True)
        b = run_coverage_study(cfg, adjusted=True, workers=2)
    assert _strip(a) == _strip(b)
    assert a.config["configs"][0]["adjusted"] is True
