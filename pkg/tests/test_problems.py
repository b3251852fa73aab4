"""Gaussian random fields, reference solvers, and the dataset format.

Solver accuracy is checked against closed-form solutions computed by
independent routes (characteristics, eigenfunction series, quadrature
identities), never against the solver itself.
"""

import numpy as np
import pytest

from hyperpde.exceptions import (ConfigError, FormatError, NumericalError,
                                 SolverError)
from hyperpde.physics import uniform_sensors
from hyperpde.problems import (BENCHMARK_IDS, Dataset, _cholesky_with_jitter,
                               generate_dataset, grf_covariance, grf_sample,
                               load_dataset, save_dataset,
                               solve_advection, solve_antiderivative,
                               solve_burgers, solve_diffusion)
from hyperpde.rng import stream


# ---------------------------------------------------------------------------
# Gaussian random fields
# ---------------------------------------------------------------------------

def test_covariance_kernel_properties():
    x = uniform_sensors(20)
    cov = grf_covariance(x, 0.2)
    assert np.allclose(cov, cov.T)
    assert np.allclose(np.diag(cov), 1.0)
    assert cov[0, 1] == pytest.approx(np.exp(-(x[1] ** 2) / (2 * 0.04)))
    with pytest.raises(ConfigError):
        grf_covariance(x, 0.0)


def test_periodic_kernel_wraps_the_domain():
    x = uniform_sensors(11)
    cov = grf_covariance(x, 2.5, periodic=True)
    # endpoints are the same point on the circle
    assert cov[0, -1] == pytest.approx(1.0)
    d = 0.3
    expect = np.exp(-2.0 * np.sin(np.pi * d) ** 2 / 2.5**2)
    assert cov[0, 3] == pytest.approx(expect)


def test_empirical_covariance_matches_kernel():
    """20k draws reproduce selected covariance entries within 5%."""
    x = uniform_sensors(30)
    cov = grf_covariance(x, 0.2)
    draws = grf_sample(stream(0, "grf-test"), x, 0.2, n_samples=20000)
    emp = draws.T @ draws / draws.shape[0]
    for i, j in [(0, 0), (5, 5), (3, 7), (0, 29), (10, 14)]:
        assert emp[i, j] == pytest.approx(cov[i, j], abs=0.05)


def test_grf_sample_shapes_and_determinism():
    x = uniform_sensors(12)
    one = grf_sample(stream(7, "g"), x, 0.2)
    assert one.shape == (12,)
    many = grf_sample(stream(7, "g"), x, 0.2, n_samples=4)
    assert many.shape == (4, 12)
    again = grf_sample(stream(7, "g"), x, 0.2, n_samples=4)
    assert np.array_equal(many, again)


def test_cholesky_jitter_rescues_singular_covariance():
    # duplicated points make the kernel matrix exactly singular
    x = np.array([0.0, 0.0, 0.5, 1.0])
    cov = grf_covariance(x, 0.2)
    with pytest.raises(np.linalg.LinAlgError):
        np.linalg.cholesky(cov)
    chol = _cholesky_with_jitter(cov)
    assert np.all(np.isfinite(chol))


def test_cholesky_jitter_gives_up_on_indefinite_input():
    with pytest.raises(NumericalError):
        _cholesky_with_jitter(-np.eye(3))


def test_long_length_scale_gives_near_constant_samples():
    """l = 1000 on the unit interval: every draw is flat to within 0.01.

    The increment std between the endpoints is sqrt(2(1 - rho(1)))
    ~ 1e-3, so a 0.01 range over 200 independent draws is a safe bound.
    """
    x = uniform_sensors(50)
    for seed in range(200):
        draw = grf_sample(stream(seed, "flat"), x, 1000.0)
        assert draw.max() - draw.min() < 0.01


# ---------------------------------------------------------------------------
# reference solvers vs closed forms
# ---------------------------------------------------------------------------

def test_antiderivative_quadrature_vs_closed_form():
    xs = uniform_sensors(100)
    sol = solve_antiderivative(lambda x: np.cos(np.pi * x), xs)
    assert sol.t is None
    assert np.max(np.abs(sol.values - np.sin(np.pi * xs) / np.pi)) < 1e-6


def test_antiderivative_accepts_sensor_values():
    xs = uniform_sensors(200)
    sol = solve_antiderivative(2.0 * np.ones(200), xs)
    assert np.max(np.abs(sol.values - 2.0 * xs)) < 1e-8


def test_advection_vs_characteristics():
    """a == 1: s = sin(pi (x-t)) ahead of the inflow front, and the
    boundary value sin(pi (t-x)/2) behind it."""
    sol = solve_advection(lambda x: np.ones_like(x))
    xg, tg = np.meshgrid(sol.x, sol.t)
    truth = np.where(xg >= tg, np.sin(np.pi * (xg - tg)),
                     np.sin(0.5 * np.pi * (tg - xg)))
    rel = np.linalg.norm(sol.values - truth) / np.linalg.norm(truth)
    assert rel < 2e-2


def test_advection_negative_speed_uses_right_inflow():
    # a == -1: characteristics run right-to-left from x = 1
    sol = solve_advection(lambda x: -np.ones_like(x))
    xg, tg = np.meshgrid(sol.x, sol.t)
    truth = np.where(1.0 - xg >= tg, np.sin(np.pi * (xg + tg)),
                     np.sin(0.5 * np.pi * (tg - (1.0 - xg))))
    rel = np.linalg.norm(sol.values - truth) / np.linalg.norm(truth)
    assert rel < 2e-2


def test_burgers_constant_profile_is_invariant():
    sol = solve_burgers(lambda x: np.full_like(x, 0.7))
    assert float(np.abs(sol.values - 0.7).max()) == 0.0


def test_burgers_grid_refinement_consistency():
    """Doubling the mode count barely changes the solution (the
    dual-route check: same PDE, different discretizations)."""
    u0 = lambda x: np.sin(2 * np.pi * x)
    a = solve_burgers(u0, n_modes=256)
    b = solve_burgers(u0, n_modes=512)
    rel = np.linalg.norm(a.values - b.values) / np.linalg.norm(a.values)
    assert rel < 1e-3


def test_burgers_energy_decays():
    u0 = lambda x: np.sin(2 * np.pi * x) + 0.3 * np.cos(4 * np.pi * x)
    sol = solve_burgers(u0)
    energy = (sol.values**2).mean(axis=1)
    assert energy[-1] < energy[0]
    assert np.all(np.diff(energy) < 1e-12)


def test_diffusion_vs_eigenfunction_series():
    """k = 0, u == 1: the linear heat equation with constant source has
    s(x,t) = sum_odd 4/(n pi) (1 - exp(-D (n pi)^2 t)) / (D (n pi)^2)
    sin(n pi x)."""
    dcoef = 0.01
    sol = solve_diffusion(lambda x: np.ones_like(x), kcoef=0.0, dcoef=dcoef)
    x, t = sol.x, sol.t
    truth = np.zeros((len(t), len(x)))
    for n in range(1, 400, 2):
        lam = dcoef * (n * np.pi) ** 2
        bn = 4.0 / (n * np.pi)
        truth += np.outer((1.0 - np.exp(-lam * t)) / lam, bn * np.sin(n * np.pi * x))
    rel = np.linalg.norm(sol.values - truth) / np.linalg.norm(truth)
    assert rel < 1e-3


def test_diffusion_zero_boundaries_and_ic():
    sol = solve_diffusion(lambda x: np.sin(np.pi * x))
    assert np.all(sol.values[0] == 0.0)
    assert np.all(sol.values[:, 0] == 0.0)
    assert np.all(sol.values[:, -1] == 0.0)


def test_solver_rejects_oversized_initial_profile():
    with pytest.raises(SolverError, match="t=0.0000"):
        solve_burgers(lambda x: 1e4 * np.sin(2 * np.pi * x))


def test_solver_blowup_raises_mid_run():
    # inviscid + a step far past the RK4 stability limit: the solution
    # grows without bound and must trip the growth guard, not return junk
    with pytest.raises(SolverError, match="blew up"):
        solve_burgers(lambda x: np.sin(2 * np.pi * x), nu=0.0, cfl=500.0)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def test_generate_dataset_shapes_and_determinism():
    a = generate_dataset("antiderivative", 3, seed=1, m=40)
    assert a.etas.shape == (3, 40)
    assert a.fields.shape == (3, 1, 40)
    assert a.n_samples == 3
    b = generate_dataset("antiderivative", 3, seed=1, m=40)
    assert np.array_equal(a.etas, b.etas)
    assert np.array_equal(a.fields, b.fields)
    c = generate_dataset("antiderivative", 3, seed=2, m=40)
    assert not np.array_equal(a.etas, c.etas)


def test_dataset_fields_solve_their_etas():
    ds = generate_dataset("antiderivative", 2, seed=3, m=50)
    for i in range(2):
        direct = solve_antiderivative(ds.etas[i], ds.sensors)
        assert np.allclose(ds.fields[i, 0], direct.values, atol=1e-10)


def test_dataset_grid():
    ds = generate_dataset("antiderivative", 1, seed=0, m=25)
    x, t = ds.grid()
    assert t is None and x.shape == (25,)


def test_dataset_roundtrip(tmp_path):
    ds = generate_dataset("antiderivative", 4, seed=5, m=30)
    path = str(tmp_path / "data.lfrd")
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.benchmark == ds.benchmark
    assert np.array_equal(back.etas, ds.etas)
    assert np.array_equal(back.fields, ds.fields)
    assert np.array_equal(back.sensors, ds.sensors)


def test_dataset_save_is_byte_deterministic(tmp_path):
    ds = generate_dataset("antiderivative", 2, seed=6, m=20)
    p1, p2 = str(tmp_path / "a.lfrd"), str(tmp_path / "b.lfrd")
    save_dataset(ds, p1)
    save_dataset(ds, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.lfrd"
    path.write_bytes(b"NOPE" + bytes(24))
    with pytest.raises(FormatError, match="magic"):
        load_dataset(str(path))


def test_load_rejects_truncation(tmp_path):
    ds = generate_dataset("antiderivative", 2, seed=7, m=20)
    path = str(tmp_path / "data.lfrd")
    save_dataset(ds, path)
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-10])
    with pytest.raises(FormatError, match="size"):
        load_dataset(path)
    open(path, "wb").write(raw[:8])
    with pytest.raises(FormatError, match="header"):
        load_dataset(path)


def test_load_rejects_wrong_version_and_id(tmp_path):
    ds = generate_dataset("antiderivative", 1, seed=8, m=20)
    path = str(tmp_path / "data.lfrd")
    save_dataset(ds, path)
    raw = bytearray(open(path, "rb").read())
    good = bytes(raw)
    raw[4] = 99  # version field
    open(path, "wb").write(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load_dataset(path)
    raw = bytearray(good)
    raw[8] = 99  # benchmark id field
    open(path, "wb").write(bytes(raw))
    with pytest.raises(FormatError, match="benchmark id"):
        load_dataset(path)


def test_missing_dataset_file_raises_oserror():
    with pytest.raises(OSError):
        load_dataset("/nonexistent/nowhere.lfrd")


def test_benchmark_ids_are_stable():
    assert BENCHMARK_IDS == {"antiderivative": 1, "advection": 2,
                             "burgers": 3, "diffusion": 4}


def test_generate_dataset_validation():
    with pytest.raises(ConfigError):
        generate_dataset("antiderivative", 0, seed=0)
    with pytest.raises(ConfigError):
        generate_dataset("wave", 1, seed=0)
