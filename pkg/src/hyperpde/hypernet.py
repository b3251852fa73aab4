"""Hypernetworks that emit main-net weights as truncated Fourier spectra.

One small MLP per main-net layer maps the task sample eta (values at m
sensors) to p complex coefficients; the layer's flat weight vector of
length N is reconstructed as

    w_n = Re[(1/N) sum_{k=0}^{p-1} c_k exp(2 pi i k n / N)].

Reconstruction is linear in the coefficients, so the training path applies
it as a constant (N x 2p) matrix. Three modes share the machinery:

    fourier_reduced  per-layer hypernets, truncated-spectrum heads
    full_spectrum    per-layer hypernets, heads emit the N weights directly
    single_hyper     one hypernet whose head emits every layer's weights

The hidden truncation budget is shared: it is split evenly across the
hidden-to-hidden weight matrices rather than granted to each one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, ShapeError
from .nets import (Architecture, Gelu, MainNetWeights, get_activation,
                   split_layer_flat)
from .rng import stream, truncated_normal

MODES = ("fourier_reduced", "full_spectrum", "single_hyper")

_TRUNK_ACT = Gelu()


@dataclass(frozen=True)
class WeightSpectrum:
    """Truncated spectrum of one layer's flat weight vector."""

    coeffs: np.ndarray  # complex, shape (p,)
    n_weights: int      # N, length of the reconstructed vector

    def __post_init__(self):
        c = np.asarray(self.coeffs, complex)
        object.__setattr__(self, "coeffs", c)
        if c.ndim != 1 or c.shape[0] < 1:
            raise ShapeError(f"coefficients must be a nonempty vector, got {c.shape}")
        if not 1 <= c.shape[0] <= self.n_weights:
            raise ShapeError(
                f"truncation p={c.shape[0]} outside [1, N={self.n_weights}]"
            )

    @property
    def p(self) -> int:
        return self.coeffs.shape[0]


def weights_to_spectrum(w: np.ndarray, p: int) -> WeightSpectrum:
    """First p DFT coefficients of a flat weight vector."""
    w = np.asarray(w, float)
    if w.ndim != 1:
        raise ShapeError(f"expected a flat vector, got shape {w.shape}")
    if not 1 <= p <= w.shape[0]:
        raise ShapeError(f"truncation p={p} outside [1, N={w.shape[0]}]")
    return WeightSpectrum(np.fft.fft(w)[:p], w.shape[0])


def spectrum_to_weights(spec: WeightSpectrum) -> np.ndarray:
    """Literal truncated inverse: real part of the p-term partial sum.

    This is the reconstruction the hypernetworks train through. It is not
    the Hermitian-completed inverse; see hermitian_reconstruct.
    """
    full = np.zeros(spec.n_weights, complex)
    full[: spec.p] = spec.coeffs
    return np.fft.ifft(full).real


def hermitian_reconstruct(spec: WeightSpectrum) -> np.ndarray:
    """Inverse after completing conjugate-mirror modes N-k from mode k.

    For real signals this reproduces the dropped high-index coefficients
    exactly, so the roundtrip is lossless once p > N/2.
    """
    N, p = spec.n_weights, spec.p
    full = np.zeros(N, complex)
    full[:p] = spec.coeffs
    ks = np.arange(1, p)
    mirror = N - ks
    keep = mirror >= p  # do not overwrite retained low modes
    full[mirror[keep]] = np.conj(spec.coeffs[ks[keep]])
    return np.fft.ifft(full).real


def codec_roundtrip_error(w: np.ndarray, p: int) -> float:
    """L2 error of the Hermitian-completed truncation of w at level p."""
    w = np.asarray(w, float)
    recon = hermitian_reconstruct(weights_to_spectrum(w, p))
    return float(np.linalg.norm(w - recon))


def parseval_tail_error(w: np.ndarray, p: int) -> float:
    """Same quantity from the spectrum alone: sqrt((1/N) sum_tail |c_k|^2).

    The tail runs over modes p..N-p (the ones neither kept nor mirrored).
    Independent route used to cross-check codec_roundtrip_error.
    """
    w = np.asarray(w, float)
    N = w.shape[0]
    if not 1 <= p <= N:
        raise ShapeError(f"truncation p={p} outside [1, N={N}]")
    c = np.fft.fft(w)
    tail = c[p : N - p + 1] if p <= N - p else c[:0]
    return float(np.sqrt(np.sum(np.abs(tail) ** 2) / N))


def idft_matrix(n_weights: int, p: int) -> np.ndarray:
    """Constant (N, 2p) matrix M with spectrum_to_weights = M @ [re; im]."""
    n = np.arange(n_weights)[:, None]
    k = np.arange(p)[None, :]
    ang = 2.0 * np.pi * k * n / n_weights
    return np.hstack([np.cos(ang), -np.sin(ang)]) / n_weights


@dataclass(frozen=True)
class SpectralCodecConfig:
    """Truncation levels: input layer, hidden budget, output layer."""

    p_input: int
    p_hidden: int
    p_output: int

    def __post_init__(self):
        if min(self.p_input, self.p_hidden, self.p_output) < 1:
            raise ConfigError("truncation levels must be >= 1")

    def per_layer(self, arch: Architecture) -> list[int]:
        """Per-layer truncations; the hidden budget is split evenly across
        the hidden-to-hidden matrices, clamped to each layer's size."""
        sizes = arch.layer_sizes()
        n_mid = arch.n_layers - 2
        ps = [self.p_input]
        if n_mid > 0:
            base, rem = divmod(self.p_hidden, n_mid)
            ps += [base + (1 if i < rem else 0) for i in range(n_mid)]
        ps.append(self.p_output)
        return [max(1, min(p, n)) for p, n in zip(ps, sizes)]


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to build, initialize and run the hyper pipeline."""

    arch: Architecture
    codec: SpectralCodecConfig
    m: int                       # sensor count = hypernet input dim
    mode: str = "fourier_reduced"
    activation: str = "gelu"     # main-net activation
    hyper_width: int = 64
    hyper_depth: int = 2         # hidden layers per hypernet trunk
    init_std: float = 0.05       # trunk weight scale

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode {self.mode!r} not one of {MODES}")
        if self.m < 1 or self.hyper_width < 1 or self.hyper_depth < 1:
            raise ConfigError("hypernet dimensions must be positive")
        get_activation(self.activation)  # validate early

    # -- static structure ---------------------------------------------------

    def truncations(self) -> list[int]:
        return self.codec.per_layer(self.arch)

    def head_dims(self) -> list[int]:
        """Output width of each hypernet head (one entry in single_hyper)."""
        sizes = self.arch.layer_sizes()
        if self.mode == "fourier_reduced":
            return [2 * p for p in self.truncations()]
        if self.mode == "full_spectrum":
            return list(sizes)
        return [sum(sizes)]

    def _trunk_shapes(self) -> list[tuple[int, int]]:
        h = self.hyper_width
        return [(h, self.m)] + [(h, h)] * (self.hyper_depth - 1)

    def theta_layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """Flat-order inventory of hypernet parameters as (name, shape)."""
        layout = []
        heads = self.head_dims()
        for i, head in enumerate(heads):
            tag = "hyper" if len(heads) == 1 else f"hyper{i}"
            for j, (out, fin) in enumerate(self._trunk_shapes()):
                layout.append((f"{tag}/w{j}", (out, fin)))
                layout.append((f"{tag}/b{j}", (out,)))
            layout.append((f"{tag}/w_head", (head, self.hyper_width)))
            layout.append((f"{tag}/b_head", (head,)))
        return layout

    def n_theta(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.theta_layout())

    def split_theta(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        theta = np.asarray(theta, float)
        if theta.shape != (self.n_theta(),):
            raise ShapeError(
                f"theta has shape {theta.shape}, expected ({self.n_theta()},)"
            )
        out, k = {}, 0
        for name, shape in self.theta_layout():
            n = int(np.prod(shape))
            out[name] = theta[k : k + n].reshape(shape)
            k += n
        return out

    def _recon_scales(self) -> list[float]:
        """Per-layer factor between raw head outputs and spectral coefficients.

        Weights at Xavier scale sigma_i need coefficients of magnitude about
        sigma_i * N_i / sqrt(p_i) -- order 20 for a hidden layer -- while an
        optimizer moves each trainable parameter only O(sum of step sizes)
        over a run. Folding the magnitude into the reconstruction keeps every
        trainable parameter at unit scale; the emitted spectrum is the head
        output times this constant.
        """
        return [
            t * n / np.sqrt(p)
            for t, n, p in zip(self._target_stds(), self.arch.layer_sizes(),
                               self.truncations())
        ]

    def _idft_matrices(self) -> list[np.ndarray]:
        key = "_idft_cache"
        cached = getattr(self, key, None)
        if cached is None:
            cached = [
                s * idft_matrix(n, p)
                for s, n, p in zip(self._recon_scales(),
                                   self.arch.layer_sizes(),
                                   self.truncations())
            ]
            object.__setattr__(self, key, cached)
        return cached

    # -- initialization -----------------------------------------------------

    def _target_stds(self) -> list[float]:
        # Xavier-style scale for the *generated* weights of each main layer
        return [
            np.sqrt(2.0 / (fan_in + fan_out))
            for fan_out, fan_in, _ in self.arch.layer_shapes()
        ]

    def init_theta(self, seed: int) -> np.ndarray:
        """Trunk weights truncated-normal, trunk biases zero, head weights
        zero, head biases sized so the generated weights start at Xavier
        scale (and independent of eta until the head weights grow). In
        fourier_reduced mode the reconstruction scale carries the magnitude,
        so the biases themselves are unit-scale."""
        rng = stream(seed, "hypernet-init")
        sizes = self.arch.layer_sizes()
        targets = self._target_stds()
        parts = []
        for name, shape in self.theta_layout():
            kind = name.split("/")[1]
            if kind.startswith("w") and kind != "w_head":
                parts.append(truncated_normal(rng, self.init_std, shape).ravel())
            elif kind.startswith("b") and kind != "b_head":
                parts.append(np.zeros(int(np.prod(shape))))
            elif kind == "w_head":
                parts.append(np.zeros(int(np.prod(shape))))
            else:  # head bias: mode-dependent scaling
                if self.mode == "fourier_reduced":
                    parts.append(truncated_normal(rng, 1.0, shape).ravel())
                elif self.mode == "full_spectrum":
                    i = int(name.split("/")[0].removeprefix("hyper"))
                    parts.append(truncated_normal(rng, targets[i], shape).ravel())
                else:  # single_hyper: per-layer slices at their own scale
                    segs = [
                        truncated_normal(rng, t, (n,))
                        for t, n in zip(targets, sizes)
                    ]
                    parts.append(np.concatenate(segs))
        return np.concatenate(parts)

    # -- numpy forward ------------------------------------------------------

    def _eta_row(self, eta: np.ndarray) -> np.ndarray:
        """Trunk input: the task's sensor values in an orthonormal real
        Fourier basis.

        Sampled parameter functions are smooth, so their energy concentrates
        in the lowest few modes; repacking the m sensor values through a
        unitary real FFT hands the trunk an effectively low-dimensional,
        well-conditioned input instead of m strongly correlated ones. The
        packing [Re c_0..Re c_K, Im c_1..] is length-m and norm-preserving
        (interior modes carry sqrt(2); DC and, for even m, the self-conjugate
        Nyquist mode appear once).
        """
        eta = np.asarray(eta, float)
        if eta.shape != (self.m,):
            raise ShapeError(f"eta has shape {eta.shape}, expected ({self.m},)")
        c = np.fft.rfft(eta, norm="ortho")
        re, im = c.real.copy(), c.imag.copy()
        hi = c.shape[0] if self.m % 2 else c.shape[0] - 1
        re[1:hi] *= np.sqrt(2.0)
        im = np.sqrt(2.0) * im[1:hi]
        return np.concatenate([re, im])[None, :]

    def _trunk_names(self, tag: str) -> list[tuple[str, str]]:
        return [(f"{tag}/w{j}", f"{tag}/b{j}") for j in range(self.hyper_depth)]

    def _head_outputs(self, theta: np.ndarray, eta: np.ndarray) -> list[np.ndarray]:
        """Raw head outputs, one (1, head_dim) row per hypernet."""
        named = self.split_theta(theta)
        row = self._eta_row(eta)
        heads = self.head_dims()
        outs = []
        for i in range(len(heads)):
            tag = "hyper" if len(heads) == 1 else f"hyper{i}"
            h = row
            for wn, bn in self._trunk_names(tag):
                h = _TRUNK_ACT.value(h @ named[wn].T + named[bn])
            outs.append(h @ named[f"{tag}/w_head"].T + named[f"{tag}/b_head"])
        return outs

    def generate_spectra(self, theta: np.ndarray, eta: np.ndarray) -> list[WeightSpectrum]:
        """Per-layer truncated spectra for one task (fourier_reduced only)."""
        if self.mode != "fourier_reduced":
            raise ConfigError(f"mode {self.mode!r} does not emit spectra")
        outs = self._head_outputs(theta, eta)
        specs = []
        for out, s, p, n in zip(outs, self._recon_scales(),
                                self.truncations(), self.arch.layer_sizes()):
            flat = out.reshape(2 * p)
            specs.append(WeightSpectrum(s * (flat[:p] + 1j * flat[p:]), n))
        return specs

    def generate_weights(self, theta: np.ndarray, eta: np.ndarray) -> MainNetWeights:
        """Main-net weights for one task; mirrors the taped pipeline op for
        op so results are bit-identical to the training-path primals."""
        outs = self._head_outputs(theta, eta)
        sizes = self.arch.layer_sizes()
        shapes = self.arch.layer_shapes()
        flats = []
        if self.mode == "fourier_reduced":
            for out, mat, n in zip(outs, self._idft_matrices(), sizes):
                coeffs = out.reshape(out.shape[1], 1)
                flats.append((mat @ coeffs).reshape(n))
        elif self.mode == "full_spectrum":
            flats = [out.reshape(n) for out, n in zip(outs, sizes)]
        else:
            big = outs[0].reshape(sum(sizes))
            k = 0
            for n in sizes:
                flats.append(big[k : k + n])
                k += n
        layers = [split_layer_flat(f, s) for f, s in zip(flats, shapes)]
        return MainNetWeights(self.arch, layers)

    # -- taped forward (training path) --------------------------------------

    def build_weight_vars(self, tape: ad.Tape, theta: ad.Var, eta: np.ndarray):
        """Taped hypernet pass: theta Var -> per-layer (W, b) Vars."""
        row = self._eta_row(eta)
        layout = self.theta_layout()
        offsets, k = {}, 0
        for name, shape in layout:
            n = int(np.prod(shape))
            offsets[name] = (k, k + n, shape)
            k += n

        def piece(name):
            a, b, shape = offsets[name]
            v = ad.slice1d(theta, a, b)
            return ad.reshape(v, shape) if len(shape) > 1 else v

        heads = self.head_dims()
        sizes = self.arch.layer_sizes()
        shapes = self.arch.layer_shapes()
        flats = []
        for i in range(len(heads)):
            tag = "hyper" if len(heads) == 1 else f"hyper{i}"
            h = None
            for wn, bn in self._trunk_names(tag):
                z = ad.linear(row if h is None else h, piece(wn), piece(bn))
                h = ad.act(z, _TRUNK_ACT, 0)
            out = ad.linear(h, piece(f"{tag}/w_head"), piece(f"{tag}/b_head"))
            if self.mode == "fourier_reduced":
                coeffs = ad.reshape(out, (out.value.shape[1], 1))
                w = ad.matmul(self._idft_matrices()[i], coeffs)
                flats.append(ad.reshape(w, (sizes[i],)))
            elif self.mode == "full_spectrum":
                flats.append(ad.reshape(out, (sizes[i],)))
            else:
                big = ad.reshape(out, (sum(sizes),))
                k = 0
                for n in sizes:
                    flats.append(ad.slice1d(big, k, k + n))
                    k += n
        weight_vars = []
        for flat, (fan_out, fan_in, has_bias) in zip(flats, shapes):
            nw = fan_out * fan_in
            w = ad.reshape(ad.slice1d(flat, 0, nw), (fan_out, fan_in))
            b = ad.slice1d(flat, nw, nw + fan_out) if has_bias else None
            weight_vars.append((w, b))
        return weight_vars


def parameter_count(spec: ModelSpec, mode: str | None = None) -> int:
    """Trainable hypernet parameters for the given mode (default: spec's)."""
    if mode is None or mode == spec.mode:
        return spec.n_theta()
    alt = ModelSpec(
        arch=spec.arch, codec=spec.codec, m=spec.m, mode=mode,
        activation=spec.activation, hyper_width=spec.hyper_width,
        hyper_depth=spec.hyper_depth, init_std=spec.init_std,
    )
    return alt.n_theta()
