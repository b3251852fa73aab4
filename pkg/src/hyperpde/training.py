"""Two-phase training: pretrain the hypernetworks, finetune per task.

Pretraining cycles over the task samples, one Adam step per sample per
epoch, minimizing the physics loss of the generated main network.
Finetuning reconstructs the main-net weights for one task from the trained
hypernetworks and continues optimizing those weights directly; zero
finetune epochs returns the reconstruction untouched.

Collocation batches are keyed by (seed, epoch, sample), not by shared RNG
state, so a run resumed from any checkpoint replays exactly the batches an
uninterrupted run would see.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, DivergenceError, FormatError, ShapeError
from .fileio import atomic_write_bytes, atomic_write_text, read_bytes
from .hypernet import MODES, ModelSpec, SpectralCodecConfig
from .nets import Architecture, MainNetWeights, forward, get_activation
from .physics import ParameterSample, eval_lattice, get_problem, uniform_sensors
from .rng import collocation_stream

ACTIVATION_CODES = {"gelu": 1, "tanh": 2, "sine": 3, "sigmoid": 4}
_CODE_TO_ACTIVATION = {v: k for k, v in ACTIVATION_CODES.items()}

BENCHMARK_CODES = {"antiderivative": 1, "advection": 2, "burgers": 3,
                   "diffusion": 4}
_CODE_TO_BENCHMARK = {v: k for k, v in BENCHMARK_CODES.items()}

MODE_CODES = {"fourier_reduced": 1, "full_spectrum": 2, "single_hyper": 3,
              "weights": 4}
_CODE_TO_MODE = {v: k for k, v in MODE_CODES.items()}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    benchmark: str
    mode: str = "fourier_reduced"
    activation: str = "gelu"
    width: int = 64
    n_hidden: int = 4
    p_input: int = 32
    p_hidden: int = 2048
    p_output: int = 16
    hyper_width: int = 64
    hyper_depth: int = 2
    m: int = 100
    epochs: int = 500
    lr0: float = 5e-4
    decay_factor: float = 0.8
    decay_interval: int = 100          # optimizer steps between decays
    decay_cap_steps: int | None = None  # stop decaying after this many steps
    finetune_lr: float = 1e-4
    finetune_epochs: int = 300
    n_residual: int = 1024
    n_bc: int = 128
    n_ic: int = 128
    lambda_bc: float = 1.0
    lambda_ic: float = 1.0
    grad_clip: float | None = 10.0
    seed: int = 0
    checkpoint_every: int = 0          # epochs; 0 means final only
    divergence_threshold: float = 1e6
    avg_tail_steps: int = 0            # Polyak-average theta over the last k steps

    def __post_init__(self):
        get_problem(self.benchmark)
        if self.mode not in MODES:
            raise ConfigError(f"mode {self.mode!r} not one of {MODES}")
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if self.lr0 <= 0 or self.finetune_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay factor must lie in (0, 1]")
        if self.decay_interval < 1:
            raise ConfigError("decay interval must be >= 1")
        if self.lambda_bc < 0 or self.lambda_ic < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.avg_tail_steps < 0:
            raise ConfigError("avg_tail_steps must be nonnegative")

    def model_spec(self) -> ModelSpec:
        in_dim = get_problem(self.benchmark).in_dim
        return ModelSpec(
            arch=Architecture(in_dim, self.width, self.n_hidden, 1),
            codec=SpectralCodecConfig(self.p_input, self.p_hidden, self.p_output),
            m=self.m, mode=self.mode, activation=self.activation,
            hyper_width=self.hyper_width, hyper_depth=self.hyper_depth,
        )


def lr_schedule(step: int, lr0: float, factor: float, interval: int,
                cap_steps: int | None = None) -> float:
    """Step decay: lr0 * factor^(step // interval), optionally frozen after
    cap_steps optimizer steps."""
    if step < 0:
        raise ConfigError("step must be nonnegative")
    eff = step if cap_steps is None else min(step, cap_steps)
    return lr0 * factor ** (eff // interval)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new params."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ShapeError("parameter, gradient and state shapes disagree")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    return params - lr * mhat / (np.sqrt(vhat) + eps)


def clip_gradient(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


# ---------------------------------------------------------------------------
# loss history
# ---------------------------------------------------------------------------

HISTORY_COLUMNS = ("step", "lr", "loss", "loss_r", "loss_bc", "loss_ic")


def write_history_csv(records: list[tuple], path: str) -> None:
    lines = [",".join(HISTORY_COLUMNS)]
    for step, lr, loss, lr_, lbc, lic in records:
        lines.append(f"{step},{lr!r},{loss!r},{lr_!r},{lbc!r},{lic!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_history_csv(path: str) -> list[tuple]:
    text = read_bytes(path).decode("utf-8").strip().splitlines()
    if not text or text[0] != ",".join(HISTORY_COLUMNS):
        raise FormatError(f"{path}: missing history header")
    out = []
    for line in text[1:]:
        parts = line.split(",")
        out.append((int(parts[0]),) + tuple(float(p) for p in parts[1:]))
    return out


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

_MAGIC = b"LFRP"
_VERSION = 1
_HEAD = struct.Struct("<4sII")  # magic, version, mode code


def write_checkpoint(path: str, mode: str, tensors: dict[str, np.ndarray]) -> None:
    if mode not in MODE_CODES:
        raise ConfigError(f"unknown checkpoint mode {mode!r}")
    chunks = [_HEAD.pack(_MAGIC, _VERSION, MODE_CODES[mode]),
              struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, float)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def read_checkpoint(path: str) -> tuple[str, dict[str, np.ndarray]]:
    raw = read_bytes(path)
    if len(raw) < _HEAD.size + 4:
        raise FormatError(f"{path}: shorter than the checkpoint header")
    magic, version, mode_code = _HEAD.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if mode_code not in _CODE_TO_MODE:
        raise FormatError(f"{path}: unknown mode code {mode_code}")
    off = _HEAD.size
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(raw, "<f8", size, off).reshape(dims).copy()
            off += 8 * size
            tensors[name] = arr
    except (struct.error, ValueError) as e:
        raise FormatError(f"{path}: truncated or corrupt tensor table: {e}") from e
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return _CODE_TO_MODE[mode_code], tensors


def _spec_tensors(cfg: TrainConfig) -> dict[str, np.ndarray]:
    return {
        "spec/benchmark": np.asarray(BENCHMARK_CODES[cfg.benchmark]),
        "spec/activation": np.asarray(ACTIVATION_CODES[cfg.activation]),
        "spec/width": np.asarray(cfg.width),
        "spec/n_hidden": np.asarray(cfg.n_hidden),
        "spec/p_input": np.asarray(cfg.p_input),
        "spec/p_hidden": np.asarray(cfg.p_hidden),
        "spec/p_output": np.asarray(cfg.p_output),
        "spec/hyper_width": np.asarray(cfg.hyper_width),
        "spec/hyper_depth": np.asarray(cfg.hyper_depth),
        "spec/m": np.asarray(cfg.m),
    }


def save_pretrain_checkpoint(path: str, cfg: TrainConfig, theta: np.ndarray,
                             adam: AdamState, step: int, epoch: int) -> None:
    spec = cfg.model_spec()
    tensors = _spec_tensors(cfg)
    for (name, _), arr in zip(spec.theta_layout(),
                              spec.split_theta(theta).values()):
        tensors[f"theta/{name}"] = arr
    tensors["adam/m"] = adam.m
    tensors["adam/v"] = adam.v
    tensors["adam/t"] = np.asarray(adam.t)
    tensors["meta/step"] = np.asarray(step)
    tensors["meta/epoch"] = np.asarray(epoch)
    tensors["meta/seed"] = np.asarray(cfg.seed)
    write_checkpoint(path, cfg.mode, tensors)


def load_pretrain_checkpoint(path: str):
    """Returns (benchmark, spec, theta, adam, step, epoch, seed)."""
    mode, tensors = read_checkpoint(path)
    if mode == "weights":
        raise FormatError(f"{path}: holds finetuned weights, not hypernet state")

    def geti(name):
        return int(tensors[name])

    benchmark = _CODE_TO_BENCHMARK[geti("spec/benchmark")]
    spec = ModelSpec(
        arch=Architecture(get_problem(benchmark).in_dim, geti("spec/width"),
                          geti("spec/n_hidden"), 1),
        codec=SpectralCodecConfig(geti("spec/p_input"), geti("spec/p_hidden"),
                                  geti("spec/p_output")),
        m=geti("spec/m"), mode=mode,
        activation=_CODE_TO_ACTIVATION[geti("spec/activation")],
        hyper_width=geti("spec/hyper_width"),
        hyper_depth=geti("spec/hyper_depth"),
    )
    theta = np.concatenate([
        tensors[f"theta/{name}"].ravel() for name, _ in spec.theta_layout()
    ])
    if theta.shape != (spec.n_theta(),):
        raise FormatError(f"{path}: theta tensors do not match the layout")
    adam = AdamState(tensors["adam/m"].copy(), tensors["adam/v"].copy(),
                     int(tensors["adam/t"]))
    return (benchmark, spec, theta, adam, int(tensors["meta/step"]),
            int(tensors["meta/epoch"]), int(tensors["meta/seed"]))


def save_weights_checkpoint(path: str, cfg: TrainConfig,
                            weights: MainNetWeights, step: int) -> None:
    tensors = _spec_tensors(cfg)
    for i, (w, b) in enumerate(weights.layers):
        tensors[f"weights/layer{i}/w"] = w
        if b is not None:
            tensors[f"weights/layer{i}/b"] = b
    tensors["meta/step"] = np.asarray(step)
    tensors["meta/seed"] = np.asarray(cfg.seed)
    write_checkpoint(path, "weights", tensors)


def load_weights_checkpoint(path: str):
    """Returns (benchmark, activation, MainNetWeights)."""
    mode, tensors = read_checkpoint(path)
    if mode != "weights":
        raise FormatError(f"{path}: holds hypernet state, not finetuned weights")
    benchmark = _CODE_TO_BENCHMARK[int(tensors["spec/benchmark"])]
    activation = _CODE_TO_ACTIVATION[int(tensors["spec/activation"])]
    arch = Architecture(get_problem(benchmark).in_dim,
                        int(tensors["spec/width"]),
                        int(tensors["spec/n_hidden"]), 1)
    layers = []
    for i, (_, _, has_bias) in enumerate(arch.layer_shapes()):
        w = tensors[f"weights/layer{i}/w"]
        b = tensors[f"weights/layer{i}/b"] if has_bias else None
        layers.append((w, b))
    return benchmark, activation, MainNetWeights(arch, layers)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class PretrainResult:
    cfg: TrainConfig
    spec: ModelSpec
    theta: np.ndarray
    records: list = field(default_factory=list)
    checkpoint_path: str | None = None
    history_path: str | None = None


def _loss_and_grad_theta(spec, problem, act, theta, eta_sample, batch):
    tape = ad.Tape()
    th = tape.leaf(theta)
    weight_vars = spec.build_weight_vars(tape, th, eta_sample.values)
    parts = problem.loss_parts(weight_vars, act, eta_sample, batch)
    tape.backward(parts.total)
    return parts, th.grad


def pretrain(etas: np.ndarray, cfg: TrainConfig, out_dir: str | None = None,
             snapshot_hook=None, start: tuple | None = None,
             log=None) -> PretrainResult:
    """Phase one: fit the hypernetwork parameters over all task samples.

    `start` resumes from (theta, adam, step, epoch) as stored in a
    checkpoint. `snapshot_hook(step, theta)` fires after every optimizer
    step (used by the spectral diagnostics).

    With `avg_tail_steps = k > 0` the returned (and checkpointed) theta is
    the mean of the last k post-step iterates instead of the final one;
    the averaging state is not checkpointed, so a run resumed inside that
    window averages only the iterates it performs itself.
    """
    etas = np.atleast_2d(np.asarray(etas, float))
    if etas.shape[1] != cfg.m:
        raise ShapeError(f"etas have {etas.shape[1]} sensors, config says {cfg.m}")
    problem = get_problem(cfg.benchmark)
    spec = cfg.model_spec()
    act = get_activation(cfg.activation)
    sensors = uniform_sensors(cfg.m)
    samples = [ParameterSample(e, sensors) for e in etas]

    if start is None:
        theta = spec.init_theta(cfg.seed)
        adam = AdamState.zeros(spec.n_theta())
        step, epoch0 = 0, 0
    else:
        theta, adam, step, epoch0 = start
        theta = np.asarray(theta, float).copy()

    records: list = []
    theta_good = theta.copy()
    ckpt_path = f"{out_dir}/checkpoint.lfrp" if out_dir else None
    avg_start = cfg.epochs * len(samples) - cfg.avg_tail_steps
    avg_sum, avg_n = None, 0

    for epoch in range(epoch0, cfg.epochs):
        for i, eta_sample in enumerate(samples):
            rng = collocation_stream(cfg.seed, epoch, i)
            batch = problem.sample_collocation(
                rng, cfg.n_residual, cfg.n_bc, cfg.n_ic,
                cfg.lambda_bc, cfg.lambda_ic)
            parts, g = _loss_and_grad_theta(spec, problem, act, theta,
                                            eta_sample, batch)
            loss, loss_r, loss_bc, loss_ic = parts.numbers()
            if not np.isfinite(loss) or loss > cfg.divergence_threshold:
                # theta_good is the last iterate whose loss was verified
                if ckpt_path:
                    save_pretrain_checkpoint(ckpt_path, cfg, theta_good,
                                             adam, step, epoch)
                raise DivergenceError(
                    f"loss {loss:.3e} at step {step} exceeds "
                    f"{cfg.divergence_threshold:.1e}", ckpt_path)
            theta_good = theta
            lr = lr_schedule(step, cfg.lr0, cfg.decay_factor,
                             cfg.decay_interval, cfg.decay_cap_steps)
            g = clip_gradient(g, cfg.grad_clip)
            theta = adam_step(adam, theta, g, lr)
            records.append((step, lr, loss, loss_r, loss_bc, loss_ic))
            step += 1
            if cfg.avg_tail_steps and step > avg_start:
                avg_sum = theta.copy() if avg_sum is None else avg_sum + theta
                avg_n += 1
            if snapshot_hook is not None:
                snapshot_hook(step, theta)
        if log is not None and (epoch + 1) % max(1, cfg.epochs // 10) == 0:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {records[-1][2]:.4e}")
        if (out_dir and cfg.checkpoint_every
                and (epoch + 1) % cfg.checkpoint_every == 0):
            save_pretrain_checkpoint(ckpt_path, cfg, theta, adam, step, epoch + 1)

    if avg_n:
        theta = avg_sum / avg_n
    result = PretrainResult(cfg, spec, theta, records)
    if out_dir:
        save_pretrain_checkpoint(ckpt_path, cfg, theta, adam, step, cfg.epochs)
        hist = f"{out_dir}/history.csv"
        write_history_csv(records, hist)
        result.checkpoint_path = ckpt_path
        result.history_path = hist
    return result


@dataclass
class FinetuneResult:
    cfg: TrainConfig
    weights: MainNetWeights
    records: list = field(default_factory=list)
    zero_shot: MainNetWeights | None = None


def finetune(spec: ModelSpec, theta: np.ndarray, eta: np.ndarray,
             cfg: TrainConfig, out_dir: str | None = None) -> FinetuneResult:
    """Phase two: adapt the reconstructed main-net weights to one new task.

    One Adam step per epoch on freshly sampled collocation points. With
    epochs == 0 the zero-shot reconstruction is returned unchanged.
    """
    problem = get_problem(cfg.benchmark)
    act = get_activation(cfg.activation)
    sensors = uniform_sensors(cfg.m)
    eta_sample = ParameterSample(np.asarray(eta, float), sensors)

    zero_shot = spec.generate_weights(theta, eta_sample.values)
    flat = zero_shot.flatten()
    arch = spec.arch
    adam = AdamState.zeros(flat.shape[0])
    records: list = []

    for epoch in range(cfg.finetune_epochs):
        rng = collocation_stream(cfg.seed, epoch, 0)
        batch = problem.sample_collocation(
            rng, cfg.n_residual, cfg.n_bc, cfg.n_ic,
            cfg.lambda_bc, cfg.lambda_ic)
        tape = ad.Tape()
        leaf = tape.leaf(flat)
        weight_vars = ad.weight_vars_from_flat(tape, leaf, arch)
        parts = problem.loss_parts(weight_vars, act, eta_sample, batch)
        loss, loss_r, loss_bc, loss_ic = parts.numbers()
        if not np.isfinite(loss) or loss > cfg.divergence_threshold:
            raise DivergenceError(
                f"finetune loss {loss:.3e} at epoch {epoch} exceeds "
                f"{cfg.divergence_threshold:.1e}")
        tape.backward(parts.total)
        g = clip_gradient(leaf.grad, cfg.grad_clip)
        flat = adam_step(adam, flat, g, cfg.finetune_lr)
        records.append((epoch, cfg.finetune_lr, loss, loss_r, loss_bc, loss_ic))

    weights = MainNetWeights.from_flat(arch, flat)
    result = FinetuneResult(cfg, weights, records, zero_shot)
    if out_dir:
        save_weights_checkpoint(f"{out_dir}/finetuned.lfrp", cfg, weights,
                                len(records))
        write_history_csv(records, f"{out_dir}/finetune_history.csv")
    return result


# ---------------------------------------------------------------------------
# prediction on dataset grids
# ---------------------------------------------------------------------------

def predict_field(weights: MainNetWeights, activation: str, benchmark: str,
                  m: int = 100) -> np.ndarray:
    """Evaluate a main network on the benchmark's reference grid.

    Shape matches the dataset field layout: (1, m) for the static problem,
    (nt, nx) on the evaluation lattice otherwise.
    """
    act = get_activation(activation)
    if benchmark == "antiderivative":
        xs = uniform_sensors(m)[:, None]
        return forward(weights, act, xs).reshape(1, -1)
    x, t = eval_lattice()
    xx, tt = np.meshgrid(x, t)  # rows follow t, columns follow x
    pts = np.column_stack([xx.ravel(), tt.ravel()])
    return forward(weights, act, pts).reshape(len(t), len(x))
