"""Task sampling and reference solutions for the benchmark problems.

Gaussian random field draws provide the task functions; classical solvers
provide the ground truth the operator networks are scored against:

    anti-derivative    adaptive RK45 quadrature of s' = u, s(0) = 0
    advection          signed upwind finite differences, CFL-limited steps
    Burgers            pseudo-spectral collocation, RK4, 2/3 dealiasing
    diffusion-reaction Crank-Nicolson diffusion, explicit reaction/source

Solvers accept the task either as a callable on [0,1] or as sensor values
(then linearly interpolated, matching what the networks observe). Results
land on the fixed 100 x 100 evaluation lattice; the anti-derivative is
reported at the sensors themselves.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from .exceptions import ConfigError, FormatError, NumericalError, SolverError
from .fileio import atomic_write_bytes, read_bytes
from .physics import (ADVECTION_BASE, ADVECTION_SCALE, BURGERS_NU,
                      DIFFUSION_D, DIFFUSION_K, EVAL_NT, EVAL_NX,
                      get_problem, uniform_sensors)
from .rng import stream

_JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


# ---------------------------------------------------------------------------
# Gaussian random fields
# ---------------------------------------------------------------------------

def grf_covariance(x: np.ndarray, length_scale: float,
                   periodic: bool = False) -> np.ndarray:
    """Squared-exponential kernel matrix; periodic variant wraps [0,1]."""
    if length_scale <= 0:
        raise ConfigError("length scale must be positive")
    x = np.asarray(x, float)
    d = x[:, None] - x[None, :]
    if periodic:
        return np.exp(-2.0 * np.sin(np.pi * d) ** 2 / length_scale**2)
    return np.exp(-(d**2) / (2.0 * length_scale**2))


def _cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    eye = np.eye(cov.shape[0])
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"covariance not positive definite even with jitter {_JITTERS[-1]}"
    )


def grf_sample(rng: np.random.Generator, x: np.ndarray, length_scale: float,
               periodic: bool = False, n_samples: int | None = None) -> np.ndarray:
    """Zero-mean GRF draw(s) at points x; shape (len(x),) or (n, len(x))."""
    chol = _cholesky_with_jitter(grf_covariance(x, length_scale, periodic))
    if n_samples is None:
        return chol @ rng.standard_normal(len(x))
    return (chol @ rng.standard_normal((len(x), n_samples))).T


# ---------------------------------------------------------------------------
# reference solvers
# ---------------------------------------------------------------------------

@dataclass
class ReferenceSolution:
    """Ground truth on its evaluation grid; t is None for static problems."""

    x: np.ndarray
    t: np.ndarray | None
    values: np.ndarray  # (nt, nx) or (nx,)
    meta: dict


def _as_callable(u, sensors=None):
    if callable(u):
        return u
    vals = np.asarray(u, float)
    xs = uniform_sensors(len(vals)) if sensors is None else np.asarray(sensors, float)
    return lambda x: np.interp(x, xs, vals)


def solve_antiderivative(u, sensors: np.ndarray | None = None,
                         rtol: float = 1e-10, atol: float = 1e-12) -> ReferenceSolution:
    """Integrate s' = u with s(0) = 0; reported at the sensor points."""
    xs = uniform_sensors(100) if sensors is None else np.asarray(sensors, float)
    fn = _as_callable(u, xs)
    sol = solve_ivp(lambda x, y: [float(fn(x))], (0.0, 1.0), [0.0],
                    t_eval=xs, rtol=rtol, atol=atol, method="RK45")
    if not sol.success:
        raise SolverError(f"quadrature failed: {sol.message}")
    return ReferenceSolution(xs, None, sol.y[0].copy(),
                             {"solver": "rk45", "rtol": rtol, "atol": atol})


def _eval_times():
    return np.linspace(0.0, 1.0, EVAL_NT)


def _time_interp(snap_t, snaps, x_solver, x_eval, t_eval):
    """Sample stored snapshots onto the evaluation lattice (linear both ways)."""
    out = np.empty((len(t_eval), len(x_eval)))
    for i, t in enumerate(t_eval):
        j = min(np.searchsorted(snap_t, t), len(snap_t) - 1)
        if snap_t[j] > t and j > 0:
            w = (t - snap_t[j - 1]) / (snap_t[j] - snap_t[j - 1])
            row = (1 - w) * snaps[j - 1] + w * snaps[j]
        else:
            row = snaps[j]
        out[i] = np.interp(x_eval, x_solver, row)
    return out


def solve_advection(a, sensors: np.ndarray | None = None, nx: int = 513,
                    cfl: float = 0.5) -> ReferenceSolution:
    """First-order signed upwind for s_t + a(x) s_x = 0.

    s(x,0) = sin(pi x); the inflow boundary (x=0 for a>0, x=1 for a<0)
    carries sin(pi t / 2). The step count is chosen from the CFL bound
    up front, so larger wave speeds automatically refine the stepping.
    """
    fn = _as_callable(a, sensors)
    x = np.linspace(0.0, 1.0, nx)
    dx = x[1] - x[0]
    av = np.asarray(fn(x), float)
    amax = np.abs(av).max()
    if amax == 0.0:
        amax = 1.0
    nt = int(np.ceil(amax / (cfl * dx)))
    dt = 1.0 / nt
    pos = av > 0.0

    s = np.sin(np.pi * x)
    snaps = np.empty((nt + 1, nx))
    snaps[0] = s
    for n in range(nt):
        ds = np.empty_like(s)
        ds[1:] = s[1:] - s[:-1]
        ds[0] = 0.0
        fwd = np.empty_like(s)
        fwd[:-1] = s[1:] - s[:-1]
        fwd[-1] = 0.0
        grad = np.where(pos, ds, fwd) / dx
        s = s - dt * av * grad
        t_next = (n + 1) * dt
        if av[0] > 0:
            s[0] = np.sin(0.5 * np.pi * t_next)
        if av[-1] < 0:
            s[-1] = np.sin(0.5 * np.pi * t_next)
        snaps[n + 1] = s
        if not np.abs(s).max() <= 1e3:  # also catches NaN
            raise SolverError(f"advection solution blew up at t={t_next:.4f}")

    t_eval = _eval_times()
    x_eval = np.linspace(0.0, 1.0, EVAL_NX)
    vals = _time_interp(np.linspace(0.0, 1.0, nt + 1), snaps, x, x_eval, t_eval)
    return ReferenceSolution(x_eval, t_eval, vals,
                             {"solver": "upwind", "nx": nx, "nt": nt, "cfl": cfl})


def solve_burgers(u0, sensors: np.ndarray | None = None, n_modes: int = 256,
                  nu: float = BURGERS_NU, cfl: float = 0.4) -> ReferenceSolution:
    """Pseudo-spectral RK4 for s_t + s s_x = nu s_xx, periodic on [0,1].

    The nonlinear product is dealiased with the 2/3 rule. The step size
    obeys both the advective CFL bound and the RK4 diffusion stability
    limit on the retained modes. Blow-up (|s| > 1e3) raises SolverError.
    """
    n = n_modes
    x = np.arange(n) / n
    if callable(u0):
        s = np.asarray(u0(x), float)
    else:
        vals = np.asarray(u0, float)
        xs = uniform_sensors(len(vals)) if sensors is None else sensors
        s = np.interp(x, xs, vals, period=1.0)

    freqs = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers
    ik = 2j * np.pi * freqs
    k2 = -((2.0 * np.pi * freqs) ** 2)
    keep = np.abs(freqs) <= n // 3

    def rhs(u):
        u_hat = np.fft.fft(u)
        ux = np.fft.ifft(ik * u_hat).real
        nl_hat = np.fft.fft(u * ux)
        nl_hat[~keep] = 0.0
        nl = np.fft.ifft(nl_hat).real
        uxx = np.fft.ifft(k2 * u_hat).real
        return -nl + nu * uxx

    def project(u):
        # drop unretained modes: they receive no nonlinear forcing, and
        # keeping them would put the viscous term outside the RK4
        # stability region at this step size
        u_hat = np.fft.fft(u)
        u_hat[~keep] = 0.0
        return np.fft.ifft(u_hat).real

    kmax = 2.0 * np.pi * (n // 3)
    dt_visc = 2.5 / (nu * kmax**2) if nu > 0 else np.inf
    umax = max(np.abs(s).max(), 1.0)
    dt_adv = cfl / (n * umax)
    dt_raw = min(dt_visc, dt_adv)
    t_eval = _eval_times()
    span = t_eval[1] - t_eval[0]
    sub = int(np.ceil(span / dt_raw))
    dt = span / sub

    vals = np.empty((EVAL_NT, EVAL_NX))
    x_eval = np.linspace(0.0, 1.0, EVAL_NX)
    xp = np.append(x, 1.0)

    def record(i, u):
        vals[i] = np.interp(x_eval, xp, np.append(u, u[0]))

    def check(u, t):
        peak = np.abs(u).max()
        # not-less-or-equal also catches NaN, which compares False with >
        if not peak <= 1e3:
            raise SolverError(f"Burgers solution blew up near t={t:.4f}: "
                              f"|s| reached {peak:.3e}")

    s = project(s)
    check(s, 0.0)
    record(0, s)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, EVAL_NT):
            for _ in range(sub):
                k1 = rhs(s)
                k2_ = rhs(s + 0.5 * dt * k1)
                k3 = rhs(s + 0.5 * dt * k2_)
                k4 = rhs(s + dt * k3)
                s = project(s + (dt / 6.0) * (k1 + 2 * k2_ + 2 * k3 + k4))
                check(s, t_eval[i])
            record(i, s)

    return ReferenceSolution(x_eval, t_eval, vals,
                             {"solver": "spectral-rk4", "n_modes": n,
                              "nu": nu, "dt": dt, "substeps": sub})


def solve_diffusion(u, sensors: np.ndarray | None = None,
                    dcoef: float = DIFFUSION_D, kcoef: float = DIFFUSION_K,
                    refine: int = 4) -> ReferenceSolution:
    """Crank-Nicolson for s_t = D s_xx + k s^2 + u(x), zero IC and BCs.

    Diffusion is implicit (tridiagonal solve per step); the reaction and
    source are explicit, which is stable here since k is small. The
    internal grid nests the evaluation lattice `refine` times over.
    """
    fn = _as_callable(u, sensors)
    nx = refine * (EVAL_NX - 1) + 1
    nt = refine * (EVAL_NT - 1)
    x = np.linspace(0.0, 1.0, nx)
    dx = x[1] - x[0]
    dt = 1.0 / nt
    beta = dcoef * dt / (2.0 * dx * dx)

    nin = nx - 2  # interior unknowns; boundaries pinned to zero
    uin = np.asarray(fn(x[1:-1]), float)

    # banded form of (I - beta A), A the tridiagonal Laplacian stencil
    ab = np.zeros((3, nin))
    ab[0, 1:] = -beta
    ab[1, :] = 1.0 + 2.0 * beta
    ab[2, :-1] = -beta

    def apply_rhs(v):
        out = (1.0 - 2.0 * beta) * v
        out[1:] += beta * v[:-1]
        out[:-1] += beta * v[1:]
        return out

    s = np.zeros(nin)
    snaps = np.empty((EVAL_NT, nx))
    snaps[0] = 0.0
    for step in range(1, nt + 1):
        rhs_vec = apply_rhs(s) + dt * (kcoef * s * s + uin)
        s = solve_banded((1, 1), ab, rhs_vec)
        if not np.abs(s).max() <= 1e6:  # also catches NaN
            raise SolverError(f"diffusion-reaction blew up at step {step}")
        if step % refine == 0:
            row = snaps[step // refine]
            row[0] = 0.0
            row[-1] = 0.0
            row[1:-1] = s

    t_eval = _eval_times()
    x_eval = np.linspace(0.0, 1.0, EVAL_NX)
    vals = snaps[:, ::refine]
    return ReferenceSolution(x_eval, t_eval, vals,
                             {"solver": "crank-nicolson", "nx": nx, "nt": nt,
                              "D": dcoef, "k": kcoef})


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

BENCHMARK_IDS = {"antiderivative": 1, "advection": 2, "burgers": 3, "diffusion": 4}
_ID_TO_BENCHMARK = {v: k for k, v in BENCHMARK_IDS.items()}

_MAGIC = b"LFRD"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")  # magic, version, benchmark, m, nx, nt, n


@dataclass
class Dataset:
    """Task samples plus their reference solutions."""

    benchmark: str
    sensors: np.ndarray          # (m,)
    etas: np.ndarray             # (n, m)
    fields: np.ndarray           # (n, nt, nx)

    @property
    def n_samples(self) -> int:
        return self.etas.shape[0]

    def grid(self) -> tuple[np.ndarray, np.ndarray | None]:
        nt, nx = self.fields.shape[1], self.fields.shape[2]
        if nt == 1:
            return self.sensors.copy(), None
        return np.linspace(0.0, 1.0, nx), np.linspace(0.0, 1.0, nt)


def _reference_field(benchmark: str, sensors: np.ndarray,
                     eta: np.ndarray) -> np.ndarray:
    interp = lambda x: np.interp(x, sensors, eta)
    if benchmark == "antiderivative":
        return solve_antiderivative(interp, sensors).values[None, :]
    if benchmark == "advection":
        speed = lambda x: ADVECTION_BASE + ADVECTION_SCALE * interp(x)
        return solve_advection(speed).values
    if benchmark == "burgers":
        u0 = lambda x: np.interp(x, sensors, eta, period=1.0)
        return solve_burgers(u0).values
    if benchmark == "diffusion":
        return solve_diffusion(interp).values
    raise ConfigError(f"unknown benchmark {benchmark!r}")


def generate_dataset(benchmark: str, n_samples: int, seed: int,
                     m: int = 100) -> Dataset:
    """Draw n task samples from the benchmark's GRF and solve each one."""
    problem = get_problem(benchmark)
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    sensors = uniform_sensors(m)
    rng = stream(seed, f"dataset/{benchmark}")
    etas = grf_sample(rng, sensors, problem.grf_length_scale,
                      periodic=problem.grf_periodic, n_samples=n_samples)
    fields = np.stack([
        _reference_field(benchmark, sensors, etas[i]) for i in range(n_samples)
    ])
    return Dataset(benchmark, sensors, etas, fields)


def save_dataset(ds: Dataset, path: str) -> None:
    n, m = ds.etas.shape
    nt, nx = ds.fields.shape[1], ds.fields.shape[2]
    header = _HEADER.pack(_MAGIC, _VERSION, BENCHMARK_IDS[ds.benchmark],
                          m, nx, nt, n)
    body = ds.etas.astype("<f8").tobytes() + ds.fields.astype("<f8").tobytes()
    atomic_write_bytes(path, header + body)


def load_dataset(path: str) -> Dataset:
    raw = read_bytes(path)
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: shorter than the dataset header")
    magic, version, bid, m, nx, nt, n = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if bid not in _ID_TO_BENCHMARK:
        raise FormatError(f"{path}: unknown benchmark id {bid}")
    expect = _HEADER.size + 8 * (n * m + n * nt * nx)
    if len(raw) != expect:
        raise FormatError(f"{path}: size {len(raw)} != expected {expect}")
    off = _HEADER.size
    etas = np.frombuffer(raw, "<f8", n * m, off).reshape(n, m).copy()
    off += 8 * n * m
    fields = np.frombuffer(raw, "<f8", n * nt * nx, off).reshape(n, nt, nx).copy()
    return Dataset(_ID_TO_BENCHMARK[bid], uniform_sensors(m), etas, fields)
