"""Diagnostics: error metrics, spectral reports, and theorem checks.

Covers the quantitative claims behind the method: lossless low-frequency
weight coding past half the modes (theorem-1 helper), dominance of
low-frequency gradient magnitudes under the constructive bound (theorem-2
harness), per-layer weight spectra, frequency-resolved error traces during
training, and the weight-continuity study across nearby tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, NumericalError, ShapeError
from .fileio import atomic_write_text
from .hypernet import ModelSpec, weights_to_spectrum
from .nets import Architecture, MainNetWeights, get_activation
from .physics import ParameterSample, get_problem, uniform_sensors
from .problems import Dataset
from .rng import collocation_stream, stream, truncated_normal
from .training import (AdamState, TrainConfig, adam_step, clip_gradient,
                       predict_field, pretrain)

# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    """||pred - truth||_2 / ||truth||_2 over flattened fields."""
    pred = np.asarray(pred, float).ravel()
    truth = np.asarray(truth, float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {truth.shape}")
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise NumericalError("relative L2 undefined: truth has zero norm")
    return float(np.linalg.norm(pred - truth) / denom)


def frequency_error(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-mode relative spectral error Delta_k = |F[t]_k - F[p]_k| / |F[t]_k|.

    Fields are flattened row-major before the transform. Modes where the
    truth spectrum is (numerically) zero are reported as NaN.
    """
    pred = np.asarray(pred, float).ravel()
    truth = np.asarray(truth, float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {truth.shape}")
    ft = np.fft.fft(truth)
    fp = np.fft.fft(pred)
    mag = np.abs(ft)
    top = mag.max()
    if top == 0.0:
        raise NumericalError("frequency error undefined: truth spectrum is zero")
    out = np.full(len(ft), np.nan)
    keep = mag > 1e-12 * top
    out[keep] = np.abs(ft[keep] - fp[keep]) / mag[keep]
    return out


# ---------------------------------------------------------------------------
# theorem 1: truncation error of the Hermitian-completed codec
# ---------------------------------------------------------------------------

def truncation_errors(w: np.ndarray) -> np.ndarray:
    """L2 roundtrip error at every truncation level p = 1..N (index p-1).

    errors[p-1]^2 = (1/N) * sum of |c_k|^2 over the dropped modes
    p..N-p, which equals the reconstruction error by Parseval.
    """
    w = np.asarray(w, float)
    n = w.shape[0]
    e2 = np.abs(np.fft.fft(w)) ** 2
    prefix = np.concatenate([[0.0], np.cumsum(e2)])
    ps = np.arange(1, n + 1)
    lo, hi = ps, n - ps + 1  # dropped modes are [p, n-p] inclusive
    tail = np.where(hi > lo, prefix[np.minimum(hi, n)] - prefix[np.minimum(lo, n)],
                    0.0)
    return np.sqrt(np.maximum(tail, 0.0) / n)


def verify_theorem1(w: np.ndarray, eps: float) -> int:
    """Smallest truncation p whose roundtrip error is <= eps.

    Errors are non-increasing in p and hit zero at p = floor(N/2)+1, where
    the conjugate-mirror completion recovers every mode of a real vector.
    """
    if eps < 0:
        raise ConfigError("eps must be nonnegative")
    errs = truncation_errors(w)
    ok = np.flatnonzero(errs <= eps)
    return int(ok[0]) + 1  # always nonempty: the final entries are zero


# ---------------------------------------------------------------------------
# theorem 2: low-frequency gradient dominance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Theorem2Instance:
    """One constructed check of the gradient-ratio bound.

    g1 and g2 are the per-unit loss gradients of one head row at a low and
    a high frequency. tau is the unit with the extreme ratio; b mixes the
    units with b[tau] = 1 and |b[t]| below the alpha bound (or above it,
    when probing for counterexamples).
    """

    g1: np.ndarray
    g2: np.ndarray
    b: np.ndarray
    tau: int
    eps: float
    alpha: float


@dataclass(frozen=True)
class Theorem2Result:
    lhs_ratio: float
    rhs_ratio: float  # max_ratio - eps
    holds: bool


def alpha_bound(g1: np.ndarray, g2: np.ndarray, eps: float) -> tuple[int, float, float]:
    """(tau, max_ratio, alpha): the constructive mixing bound.

    alpha = min( |g2_tau| eps / (G1 + G2 max_ratio - G2 eps),
                 |g1_tau| / G1 )
    with G1, G2 the off-tau absolute sums. Requires 0 <= eps <= max_ratio.
    """
    g1 = np.asarray(g1, float)
    g2 = np.asarray(g2, float)
    if g1.shape != g2.shape or g1.ndim != 1 or g1.shape[0] < 2:
        raise ShapeError("g1, g2 must be equal-length vectors with >= 2 units")
    if np.any(g2 == 0.0):
        raise NumericalError("g2 has a zero component; ratios undefined")
    ratios = np.abs(g1 / g2)
    tau = int(np.argmax(ratios))
    max_ratio = float(ratios[tau])
    if not 0.0 <= eps <= max_ratio:
        raise ConfigError(f"eps must lie in [0, max_ratio={max_ratio:.3e}]")
    off = np.ones(len(g1), bool)
    off[tau] = False
    G1 = float(np.abs(g1[off]).sum())
    G2 = float(np.abs(g2[off]).sum())
    if G1 == 0.0:  # degenerate: single dominant unit, any mixing works
        return tau, max_ratio, np.inf
    a1 = abs(g2[tau]) * eps / (G1 + G2 * max_ratio - G2 * eps)
    a2 = abs(g1[tau]) / G1
    return tau, max_ratio, float(min(a1, a2))


def make_theorem2_instance(rng: np.random.Generator, n_units: int = 8,
                           eps: float = 1e-6,
                           alpha_scale: float = 1.0) -> Theorem2Instance:
    """Random instance with components bounded away from zero.

    Magnitudes are uniform in [0.1, 1] with random signs, so max_ratio and
    the alpha bound stay well conditioned. alpha_scale > 1 deliberately
    violates the mixing premise to probe for counterexamples.
    """
    def draw():
        mag = rng.uniform(0.1, 1.0, n_units)
        sign = np.where(rng.random(n_units) < 0.5, -1.0, 1.0)
        return mag * sign

    g1, g2 = draw(), draw()
    tau, _, alpha = alpha_bound(g1, g2, eps)
    scale = alpha * alpha_scale
    b = rng.uniform(-scale, scale, n_units)
    b[tau] = 1.0
    return Theorem2Instance(g1, g2, b, tau, eps, alpha)


def verify_theorem2(inst: Theorem2Instance) -> Theorem2Result:
    """Check |sum b g1| / |sum b g2| >= max_ratio - eps for the instance."""
    num = abs(float(inst.b @ inst.g1))
    den = abs(float(inst.b @ inst.g2))
    if den == 0.0:
        raise NumericalError("mixed high-frequency gradient vanished")
    ratios = np.abs(inst.g1 / inst.g2)
    rhs = float(ratios.max()) - inst.eps
    lhs = num / den
    return Theorem2Result(lhs, rhs, bool(lhs >= rhs))


def run_theorem2_sweep(n_instances: int, n_units: int = 8, eps: float = 1e-6,
                       alpha_scale: float = 1.0, seed: int = 0) -> dict:
    """Summary over random instances: how many satisfy the bound."""
    rng = stream(seed, "theorem2")
    n_hold = 0
    violations = []
    for i in range(n_instances):
        inst = make_theorem2_instance(rng, n_units, eps, alpha_scale)
        res = verify_theorem2(inst)
        if res.holds:
            n_hold += 1
        elif len(violations) < 10:
            violations.append({"index": i, "lhs": res.lhs_ratio,
                               "rhs": res.rhs_ratio})
    return {"n": n_instances, "n_hold": n_hold,
            "n_violate": n_instances - n_hold, "alpha_scale": alpha_scale,
            "eps": eps, "violations": violations}


# ---------------------------------------------------------------------------
# weight spectra and training-time frequency error
# ---------------------------------------------------------------------------

def weight_spectrum_rows(weights: MainNetWeights) -> list[tuple[int, int, float, float]]:
    """(layer, k, re, im) rows of each layer's full flat-weight spectrum."""
    rows = []
    for li, (w, b) in enumerate(weights.layers):
        flat = w.ravel() if b is None else np.concatenate([w.ravel(), b])
        spec = weights_to_spectrum(flat, flat.shape[0])
        for k, c in enumerate(spec.coeffs):
            rows.append((li, k, float(c.real), float(c.imag)))
    return rows


def write_spectrum_csv(weights: MainNetWeights, path: str) -> None:
    lines = ["layer,k,re,im"]
    for li, k, re, im in weight_spectrum_rows(weights):
        lines.append(f"{li},{k},{re!r},{im!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def freq_error_trace(ds: Dataset, cfg: TrainConfig, sample_index: int = 0,
                     stride: int = 10) -> list[tuple[int, int, float]]:
    """(step, k, delta) records every `stride` optimizer steps.

    Trains from scratch on the dataset's task samples and, at each probe,
    compares the predicted field of one sample against its reference on
    the dataset grid, mode by mode.
    """
    if not 0 <= sample_index < ds.n_samples:
        raise ConfigError(f"sample index {sample_index} out of range")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    truth = ds.fields[sample_index]
    eta = ds.etas[sample_index]
    spec = cfg.model_spec()
    records: list[tuple[int, int, float]] = []

    def probe(step, theta):
        if step % stride:
            return
        weights = spec.generate_weights(theta, eta)
        pred = predict_field(weights, cfg.activation, cfg.benchmark, cfg.m)
        delta = frequency_error(pred, truth)
        for k in np.flatnonzero(~np.isnan(delta)):
            records.append((step, int(k), float(delta[k])))

    pretrain(ds.etas, cfg, snapshot_hook=probe)
    return records


def write_freq_error_csv(records: list[tuple[int, int, float]], path: str) -> None:
    lines = ["step,k,delta"]
    for step, k, delta in records:
        lines.append(f"{step},{k},{delta!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def mode_comparison_csv(records_a: list, records_b: list, label_a: str,
                        label_b: str, path: str) -> None:
    """Align two loss histories by step for side-by-side comparison."""
    if len(records_a) != len(records_b):
        raise ShapeError("histories have different lengths")
    lines = [f"step,loss_{label_a},loss_{label_b}"]
    for ra, rb in zip(records_a, records_b):
        if ra[0] != rb[0]:
            raise ShapeError(f"step mismatch {ra[0]} vs {rb[0]}")
        lines.append(f"{ra[0]},{ra[2]!r},{rb[2]!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# evaluation against a dataset
# ---------------------------------------------------------------------------

def evaluate_dataset(spec: ModelSpec, theta: np.ndarray, ds: Dataset,
                     indices, activation: str) -> dict:
    """Zero-shot relative L2 per sample and its mean."""
    errors = []
    for i in indices:
        weights = spec.generate_weights(theta, ds.etas[i])
        pred = predict_field(weights, activation, ds.benchmark, spec.m)
        errors.append(relative_l2(pred, ds.fields[i]))
    return {"per_sample": errors,
            "mean": float(np.mean(errors)) if errors else float("nan"),
            "indices": list(map(int, indices))}


# ---------------------------------------------------------------------------
# weight continuity across nearby tasks
# ---------------------------------------------------------------------------

@dataclass
class ContinuityReport:
    """Per-layer L1 distances between PINNs trained on shifted tasks."""

    x0s: tuple
    d12: list[float] = field(default_factory=list)  # centers x0[0] vs x0[1]
    d23: list[float] = field(default_factory=list)  # centers x0[1] vs x0[2]
    final_losses: list[float] = field(default_factory=list)
    reached_target: list[bool] = field(default_factory=list)
    majority_closer: bool = False

    def to_csv(self, path: str) -> None:
        lines = ["layer,d_c1_c2,d_c2_c3"]
        for i, (a, b) in enumerate(zip(self.d12, self.d23)):
            lines.append(f"{i},{a!r},{b!r}")
        atomic_write_text(path, "\n".join(lines) + "\n")


def _init_main_weights(arch: Architecture, seed: int) -> np.ndarray:
    """Xavier-scale truncated-normal init for a standalone network."""
    rng = stream(seed, "pinn-init")
    parts = []
    for fan_out, fan_in, has_bias in arch.layer_shapes():
        sigma = np.sqrt(2.0 / (fan_in + fan_out))
        parts.append(truncated_normal(rng, sigma, (fan_out * fan_in,)))
        if has_bias:
            parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def train_standalone_pinn(eta_values: np.ndarray, seed: int,
                          benchmark: str = "burgers", width: int = 50,
                          n_hidden: int = 5, activation: str = "tanh",
                          steps: int = 1500, lr: float = 1e-3,
                          n_residual: int = 256, n_bc: int = 64,
                          n_ic: int = 64, target_loss: float = 1e-3,
                          grad_clip: float = 10.0):
    """Fit one network's weights directly to one task's physics loss.

    Returns (MainNetWeights, final_loss, reached_target). The step budget
    is fixed; training stops early once the loss target is met.
    """
    problem = get_problem(benchmark)
    act = get_activation(activation)
    arch = Architecture(problem.in_dim, width, n_hidden, 1)
    sensors = uniform_sensors(len(eta_values))
    eta = ParameterSample(np.asarray(eta_values, float), sensors)

    flat = _init_main_weights(arch, seed)
    adam = AdamState.zeros(flat.shape[0])
    loss = np.inf
    for step in range(steps):
        rng = collocation_stream(seed, step, 0)
        batch = problem.sample_collocation(rng, n_residual, n_bc, n_ic)
        tape = ad.Tape()
        leaf = tape.leaf(flat)
        wv = ad.weight_vars_from_flat(tape, leaf, arch)
        parts = problem.loss_parts(wv, act, eta, batch)
        loss = float(parts.total.value)
        if loss <= target_loss:
            break
        tape.backward(parts.total)
        g = clip_gradient(leaf.grad, grad_clip)
        flat = adam_step(adam, flat, g, lr)
    return MainNetWeights.from_flat(arch, flat), loss, loss <= target_loss


def continuity_study(x0s=(0.4, 0.5, 2.0), seed: int = 0, steps: int = 1500,
                     lr: float = 1e-3, m: int = 100,
                     target_loss: float = 1e-3, **pinn_kwargs) -> ContinuityReport:
    """Train one PINN per initial-condition center and compare weights.

    Tasks are Burgers problems with s(x,0) = exp(-(x-x0)^2 / 2). All runs
    share the seed, hence the same init and collocation draws; only the
    task differs. Reports per-layer L1 weight-matrix distances between
    consecutive centers.
    """
    if len(x0s) != 3:
        raise ConfigError("the study compares exactly three centers")
    sensors = uniform_sensors(m)
    nets = []
    report = ContinuityReport(tuple(x0s))
    for x0 in x0s:
        ic = np.exp(-((sensors - x0) ** 2) / 2.0)
        w, loss, ok = train_standalone_pinn(ic, seed, steps=steps, lr=lr,
                                            target_loss=target_loss,
                                            **pinn_kwargs)
        nets.append(w)
        report.final_losses.append(loss)
        report.reached_target.append(ok)

    def l1(a: MainNetWeights, b: MainNetWeights) -> list[float]:
        return [float(np.abs(wa - wb).sum())
                for (wa, _), (wb, _) in zip(a.layers, b.layers)]

    report.d12 = l1(nets[0], nets[1])
    report.d23 = l1(nets[1], nets[2])
    closer = sum(a < b for a, b in zip(report.d12, report.d23))
    report.majority_closer = closer > len(report.d12) / 2
    return report
