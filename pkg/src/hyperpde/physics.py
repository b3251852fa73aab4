"""Physics-informed losses for the four benchmark problems.

Each problem knows how to sample collocation points, evaluate its PDE
residual through the tape (so weight gradients flow through the input
derivatives), and assemble the weighted loss

    L = mean(r^2) + lambda_bc * mean(bc^2) + lambda_ic * mean(ic^2)

where each mean runs over all points of that family. Spatial coordinates
come first in the input ordering: points are columns (x,) or (x, t).

eta is the task sample: a function observed at m uniform sensors on [0,1]
(the forcing for the anti-derivative and diffusion problems, the wave
speed perturbation for advection, the initial condition for Burgers).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, ShapeError
from .nets import Activation

# advection wave speed a(x) = ADVECTION_BASE + ADVECTION_SCALE * g(x)
ADVECTION_BASE = 1.0
ADVECTION_SCALE = 0.2

BURGERS_NU = 0.01
DIFFUSION_D = 0.01
DIFFUSION_K = 0.01

EVAL_NX = 100
EVAL_NT = 100


@dataclass(frozen=True)
class ParameterSample:
    """One task: function values at m uniform sensors on [0, 1]."""

    values: np.ndarray
    sensors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        s = np.asarray(self.sensors, float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sensors", s)
        if v.ndim != 1 or v.shape != s.shape:
            raise ShapeError(
                f"values {v.shape} and sensors {s.shape} must be equal-length vectors"
            )

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def interp(self, x: np.ndarray) -> np.ndarray:
        """Linear interpolation of the sample at query points in [0, 1]."""
        x = np.asarray(x, float)
        if x.size and (x.min() < self.sensors[0] - 1e-12
                       or x.max() > self.sensors[-1] + 1e-12):
            raise ShapeError("interpolation query outside the sensor range")
        return np.interp(x, self.sensors, self.values)


def uniform_sensors(m: int) -> np.ndarray:
    if m < 2:
        raise ConfigError("need at least two sensors")
    return np.linspace(0.0, 1.0, m)


@dataclass
class CollocationBatch:
    """Sampled points for one loss evaluation."""

    residual_pts: np.ndarray                 # (M_r, d)
    bc_pts: dict = field(default_factory=dict)   # facet name -> points
    ic_pts: np.ndarray | None = None         # (M_ic, d) at t = 0
    lambda_bc: float = 1.0
    lambda_ic: float = 1.0

    def __post_init__(self):
        if self.lambda_bc < 0 or self.lambda_ic < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass
class LossParts:
    """Scalar loss Vars: total and its residual / bc / ic components."""

    total: ad.Var
    residual: ad.Var
    bc: ad.Var | None = None
    ic: ad.Var | None = None

    def numbers(self) -> tuple[float, float, float, float]:
        def f(v):
            return float(v.value) if v is not None else 0.0
        return f(self.total), f(self.residual), f(self.bc), f(self.ic)


def assemble_loss(residual: ad.Var, bc_terms: list[ad.Var],
                  ic_terms: list[ad.Var], lambda_bc: float,
                  lambda_ic: float) -> LossParts:
    """Weighted mean-square combination of the residual families.

    Each family is averaged over its total point count (facets of one
    family share a single normalizer).
    """
    if lambda_bc < 0 or lambda_ic < 0:
        raise ConfigError("loss weights must be nonnegative")
    loss_r = ad.vmean(ad.square(residual))
    total = loss_r
    loss_bc = loss_ic = None
    if bc_terms:
        n = sum(t.value.size for t in bc_terms)
        acc = None
        for t in bc_terms:
            s = ad.vsum(ad.square(t))
            acc = s if acc is None else acc + s
        loss_bc = acc * (1.0 / n)
        total = total + loss_bc * lambda_bc
    if ic_terms:
        n = sum(t.value.size for t in ic_terms)
        acc = None
        for t in ic_terms:
            s = ad.vsum(ad.square(t))
            acc = s if acc is None else acc + s
        loss_ic = acc * (1.0 / n)
        total = total + loss_ic * lambda_ic
    return LossParts(total, loss_r, loss_bc, loss_ic)


# ---------------------------------------------------------------------------
# residual operators (Vars in, Var out)
# ---------------------------------------------------------------------------

def residual_antiderivative(ds_dx: ad.Var, x: np.ndarray,
                            eta: ParameterSample) -> ad.Var:
    """r = ds/dx - u(x) for the operator learning problem s' = u, s(0)=0."""
    u = eta.interp(np.asarray(x, float).reshape(-1))
    return ds_dx - u


def residual_advection(ds_dt: ad.Var, ds_dx: ad.Var, x: np.ndarray,
                       eta: ParameterSample) -> ad.Var:
    """r = s_t + a(x) s_x with a(x) = 1 + 0.2 g(x), g the task sample."""
    a = ADVECTION_BASE + ADVECTION_SCALE * eta.interp(
        np.asarray(x, float).reshape(-1))
    return ds_dt + ds_dx * a


def residual_burgers(s: ad.Var, ds_dt: ad.Var, ds_dx: ad.Var,
                     d2s_dx2: ad.Var, nu: float = BURGERS_NU) -> ad.Var:
    """r = s_t + s s_x - nu s_xx."""
    return ds_dt + s * ds_dx - d2s_dx2 * nu


def residual_diffusion(s: ad.Var, ds_dt: ad.Var, d2s_dx2: ad.Var,
                       x: np.ndarray, eta: ParameterSample,
                       dcoef: float = DIFFUSION_D,
                       kcoef: float = DIFFUSION_K) -> ad.Var:
    """r = s_t - D s_xx - k s^2 - u(x)."""
    u = eta.interp(np.asarray(x, float).reshape(-1))
    return ds_dt - d2s_dx2 * dcoef - ad.square(s) * kcoef - u


# ---------------------------------------------------------------------------
# benchmark problems
# ---------------------------------------------------------------------------

def _facet_points(t_or_x: np.ndarray, fixed: float, axis: int) -> np.ndarray:
    """Points on a domain facet: coordinate `axis` pinned to `fixed`."""
    pts = np.empty((t_or_x.shape[0], 2))
    pts[:, axis] = fixed
    pts[:, 1 - axis] = t_or_x
    return pts


class PdeProblem:
    """Loss-side description of one benchmark."""

    name: str = ""
    in_dim: int = 2
    grf_length_scale: float = 0.2
    grf_periodic: bool = False
    has_ic: bool = True

    def sample_collocation(self, rng: np.random.Generator, n_res: int,
                           n_bc: int, n_ic: int, lambda_bc: float = 1.0,
                           lambda_ic: float = 1.0) -> CollocationBatch:
        raise NotImplementedError

    def loss_parts(self, weight_vars, act: Activation, eta: ParameterSample,
                   batch: CollocationBatch) -> LossParts:
        raise NotImplementedError


class AntiderivativeProblem(PdeProblem):
    """s'(x) = u(x) on [0,1], s(0) = 0; eta is u at the sensors."""

    name = "antiderivative"
    in_dim = 1
    has_ic = False

    def sample_collocation(self, rng, n_res, n_bc, n_ic,
                           lambda_bc=1.0, lambda_ic=1.0):
        # the boundary family is the single pinned point s(0) = 0
        return CollocationBatch(
            residual_pts=rng.uniform(0.0, 1.0, size=(n_res, 1)),
            bc_pts={"x0": np.zeros((1, 1))},
            ic_pts=None,
            lambda_bc=lambda_bc,
            lambda_ic=lambda_ic,
        )

    def loss_parts(self, weight_vars, act, eta, batch):
        x = batch.residual_pts
        _, du, _ = ad.eval_with_input_derivs(weight_vars, act, x, axis=0, order=1)
        r = residual_antiderivative(du, x, eta)
        u0 = ad.taped_forward(weight_vars, act, batch.bc_pts["x0"])
        bc = ad.reshape(u0, (1,))
        return assemble_loss(r, [bc], [], batch.lambda_bc, batch.lambda_ic)


class AdvectionProblem(PdeProblem):
    """s_t + a(x) s_x = 0 with s(x,0)=sin(pi x), inflow value sin(pi t/2)."""

    name = "advection"

    def sample_collocation(self, rng, n_res, n_bc, n_ic,
                           lambda_bc=1.0, lambda_ic=1.0):
        pts = rng.uniform(0.0, 1.0, size=(n_res, 2))
        t_bc = rng.uniform(0.0, 1.0, size=n_bc)
        x_ic = rng.uniform(0.0, 1.0, size=n_ic)
        ic = np.column_stack([x_ic, np.zeros(n_ic)])
        return CollocationBatch(
            residual_pts=pts,
            bc_pts={"x0": _facet_points(t_bc, 0.0, 0),
                    "x1": _facet_points(t_bc, 1.0, 0)},
            ic_pts=ic,
            lambda_bc=lambda_bc,
            lambda_ic=lambda_ic,
        )

    def loss_parts(self, weight_vars, act, eta, batch):
        pts = batch.residual_pts
        _, st, _ = ad.eval_with_input_derivs(weight_vars, act, pts, axis=1, order=1)
        _, sx, _ = ad.eval_with_input_derivs(weight_vars, act, pts, axis=0, order=1)
        r = residual_advection(st, sx, pts[:, 0], eta)

        bc_terms = []
        p0 = batch.bc_pts["x0"]
        u0 = ad.reshape(ad.taped_forward(weight_vars, act, p0), (p0.shape[0],))
        bc_terms.append(u0 - np.sin(0.5 * np.pi * p0[:, 1]))
        # x=1 is an inflow boundary only when the wave speed there is negative
        a_right = ADVECTION_BASE + ADVECTION_SCALE * eta.interp(np.array([1.0]))[0]
        if a_right < 0.0:
            p1 = batch.bc_pts["x1"]
            u1 = ad.reshape(ad.taped_forward(weight_vars, act, p1), (p1.shape[0],))
            bc_terms.append(u1 - np.sin(0.5 * np.pi * p1[:, 1]))

        ic_pts = batch.ic_pts
        ui = ad.reshape(ad.taped_forward(weight_vars, act, ic_pts),
                        (ic_pts.shape[0],))
        ic = ui - np.sin(np.pi * ic_pts[:, 0])
        return assemble_loss(r, bc_terms, [ic], batch.lambda_bc, batch.lambda_ic)


class BurgersProblem(PdeProblem):
    """s_t + s s_x = nu s_xx, periodic in x (value and slope); eta is s(.,0)."""

    name = "burgers"
    grf_length_scale = 2.5
    grf_periodic = True
    nu = BURGERS_NU

    def sample_collocation(self, rng, n_res, n_bc, n_ic,
                           lambda_bc=1.0, lambda_ic=1.0):
        pts = rng.uniform(0.0, 1.0, size=(n_res, 2))
        t_bc = rng.uniform(0.0, 1.0, size=n_bc)
        x_ic = rng.uniform(0.0, 1.0, size=n_ic)
        ic = np.column_stack([x_ic, np.zeros(n_ic)])
        return CollocationBatch(
            residual_pts=pts,
            bc_pts={"x0": _facet_points(t_bc, 0.0, 0),
                    "x1": _facet_points(t_bc, 1.0, 0)},
            ic_pts=ic,
            lambda_bc=lambda_bc,
            lambda_ic=lambda_ic,
        )

    def loss_parts(self, weight_vars, act, eta, batch):
        pts = batch.residual_pts
        s, sx, sxx = ad.eval_with_input_derivs(weight_vars, act, pts, axis=0, order=2)
        _, st, _ = ad.eval_with_input_derivs(weight_vars, act, pts, axis=1, order=1)
        r = residual_burgers(s, st, sx, sxx, self.nu)

        # periodic pairing: match value and slope across x=0 and x=1
        p0, p1 = batch.bc_pts["x0"], batch.bc_pts["x1"]
        v0, d0, _ = ad.eval_with_input_derivs(weight_vars, act, p0, axis=0, order=1)
        v1, d1, _ = ad.eval_with_input_derivs(weight_vars, act, p1, axis=0, order=1)
        bc_terms = [v0 - v1, d0 - d1]

        ic_pts = batch.ic_pts
        ui = ad.reshape(ad.taped_forward(weight_vars, act, ic_pts),
                        (ic_pts.shape[0],))
        ic = ui - eta.interp(ic_pts[:, 0])
        return assemble_loss(r, bc_terms, [ic], batch.lambda_bc, batch.lambda_ic)


class DiffusionProblem(PdeProblem):
    """s_t = D s_xx + k s^2 + u(x), zero initial and boundary data."""

    name = "diffusion"
    dcoef = DIFFUSION_D
    kcoef = DIFFUSION_K

    def sample_collocation(self, rng, n_res, n_bc, n_ic,
                           lambda_bc=1.0, lambda_ic=1.0):
        pts = rng.uniform(0.0, 1.0, size=(n_res, 2))
        t_bc = rng.uniform(0.0, 1.0, size=n_bc)
        x_ic = rng.uniform(0.0, 1.0, size=n_ic)
        ic = np.column_stack([x_ic, np.zeros(n_ic)])
        return CollocationBatch(
            residual_pts=pts,
            bc_pts={"x0": _facet_points(t_bc, 0.0, 0),
                    "x1": _facet_points(t_bc, 1.0, 0)},
            ic_pts=ic,
            lambda_bc=lambda_bc,
            lambda_ic=lambda_ic,
        )

    def loss_parts(self, weight_vars, act, eta, batch):
        pts = batch.residual_pts
        s, _, sxx = ad.eval_with_input_derivs(weight_vars, act, pts, axis=0, order=2)
        _, st, _ = ad.eval_with_input_derivs(weight_vars, act, pts, axis=1, order=1)
        r = residual_diffusion(s, st, sxx, pts[:, 0], eta, self.dcoef, self.kcoef)

        bc_terms = []
        for facet in ("x0", "x1"):
            p = batch.bc_pts[facet]
            v = ad.reshape(ad.taped_forward(weight_vars, act, p), (p.shape[0],))
            bc_terms.append(v)

        ic_pts = batch.ic_pts
        ic = ad.reshape(ad.taped_forward(weight_vars, act, ic_pts),
                        (ic_pts.shape[0],))
        return assemble_loss(r, bc_terms, [ic], batch.lambda_bc, batch.lambda_ic)


PROBLEMS: dict[str, PdeProblem] = {
    p.name: p for p in (AntiderivativeProblem(), AdvectionProblem(),
                        BurgersProblem(), DiffusionProblem())
}


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------

def manufactured_residual(benchmark: str) -> float:
    """Max |residual| of one operator on its closed-form zero-residual case.

    Each case places an exact solution inside the network function class
    (a one-neuron net represents it without approximation), and samples
    eta at the points the residual is evaluated at, so the sensor
    interpolation is exact there:

        antiderivative   s(x) = sin(2x)/2,            u(x)  = cos(2x)
        advection        s(x,t) = sin(2(x - t)),      g == 0, so a == 1
        burgers          s(x) = -2 nu k tanh(k(x - 1/2)), k = 2
                         (the steady viscous shock: s s_x = nu s_xx)
        diffusion        s(x) = sin(3x)/2,            u = 9 D s - k s^2

    Anything above roundoff (~1e-12) indicates a defect in a residual
    operator or in the derivative propagation feeding it.
    """
    from .nets import Architecture, MainNetWeights

    xs = uniform_sensors(50)
    ts = np.linspace(0.0, 1.0, 7)

    def one_neuron(in_dim, w_row, b, w_out, name):
        arch = Architecture(in_dim, 1, 1, 1)
        weights = MainNetWeights(arch, [
            (np.array([w_row], float), np.array([b], float)),
            (np.array([[w_out]], float), None),
        ])
        from .nets import get_activation
        return weights, get_activation(name)

    tape = ad.Tape()

    if benchmark == "antiderivative":
        weights, act = one_neuron(1, [2.0], 0.0, 0.5, "sine")
        eta = ParameterSample(np.cos(2.0 * xs), xs)
        pts = xs[:, None]
        wv = _const_weight_vars(tape, weights)
        _, du, _ = ad.eval_with_input_derivs(wv, act, pts, axis=0, order=1)
        r = residual_antiderivative(du, pts, eta)
    elif benchmark == "advection":
        weights, act = one_neuron(2, [2.0, -2.0], 0.0, 1.0, "sine")
        eta = ParameterSample(np.zeros_like(xs), xs)
        pts = np.column_stack([np.tile(xs, len(ts)), np.repeat(ts, len(xs))])
        wv = _const_weight_vars(tape, weights)
        _, st, _ = ad.eval_with_input_derivs(wv, act, pts, axis=1, order=1)
        _, sx, _ = ad.eval_with_input_derivs(wv, act, pts, axis=0, order=1)
        r = residual_advection(st, sx, pts[:, 0], eta)
    elif benchmark == "burgers":
        k = 2.0
        weights, act = one_neuron(2, [k, 0.0], -0.5 * k,
                                  -2.0 * BURGERS_NU * k, "tanh")
        eta = ParameterSample(np.zeros_like(xs), xs)  # unused by the residual
        pts = np.column_stack([np.tile(xs, len(ts)), np.repeat(ts, len(xs))])
        wv = _const_weight_vars(tape, weights)
        s, sx, sxx = ad.eval_with_input_derivs(wv, act, pts, axis=0, order=2)
        _, st, _ = ad.eval_with_input_derivs(wv, act, pts, axis=1, order=1)
        r = residual_burgers(s, st, sx, sxx)
    elif benchmark == "diffusion":
        a, amp = 3.0, 0.5
        weights, act = one_neuron(2, [a, 0.0], 0.0, amp, "sine")
        s_vals = amp * np.sin(a * xs)
        u_vals = DIFFUSION_D * a * a * s_vals - DIFFUSION_K * s_vals**2
        eta = ParameterSample(u_vals, xs)
        pts = np.column_stack([np.tile(xs, len(ts)), np.repeat(ts, len(xs))])
        wv = _const_weight_vars(tape, weights)
        s, _, sxx = ad.eval_with_input_derivs(wv, act, pts, axis=0, order=2)
        _, st, _ = ad.eval_with_input_derivs(wv, act, pts, axis=1, order=1)
        r = residual_diffusion(s, st, sxx, pts[:, 0], eta)
    else:
        raise ConfigError(f"unknown benchmark {benchmark!r}")
    return float(np.abs(r.value).max())


def _const_weight_vars(tape: ad.Tape, weights):
    """Load concrete weights onto a tape as leaves (for the checks above)."""
    return [(tape.leaf(w), None if b is None else tape.leaf(b))
            for w, b in weights.layers]


def get_problem(name: str) -> PdeProblem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ConfigError(
            f"unknown benchmark {name!r}; choose from {sorted(PROBLEMS)}"
        ) from None


def eval_lattice() -> tuple[np.ndarray, np.ndarray]:
    """The fixed (x, t) evaluation lattice for the time-dependent problems."""
    return np.linspace(0.0, 1.0, EVAL_NX), np.linspace(0.0, 1.0, EVAL_NT)
