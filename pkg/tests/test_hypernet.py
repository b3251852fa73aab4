"""Spectral weight codec and the hypernetwork pipeline.

The codec tests compare the fft-based implementation against a naive
O(N^2) DFT written out longhand, so the two routes share no code.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperpde.exceptions import ConfigError, ShapeError
from hyperpde.hypernet import (ModelSpec, SpectralCodecConfig, WeightSpectrum,
                               codec_roundtrip_error, hermitian_reconstruct,
                               idft_matrix, parameter_count,
                               parseval_tail_error, spectrum_to_weights,
                               weights_to_spectrum)
from hyperpde.nets import Architecture, forward, get_activation


def naive_dft(w):
    n = len(w)
    k = np.arange(n)
    return np.array([np.sum(w * np.exp(-2j * np.pi * kk * k / n)) for kk in range(n)])


def naive_truncated_inverse(coeffs, n):
    p = len(coeffs)
    out = np.empty(n)
    for i in range(n):
        acc = 0.0 + 0.0j
        for k in range(p):
            acc += coeffs[k] * np.exp(2j * np.pi * k * i / n)
        out[i] = (acc / n).real
    return out


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n,p", [(16, 5), (33, 12), (64, 64), (7, 1)])
def test_codec_matches_naive_dft(n, p):
    w = np.random.default_rng(n * 100 + p).normal(size=n)
    spec = weights_to_spectrum(w, p)
    assert np.allclose(spec.coeffs, naive_dft(w)[:p], atol=1e-9)
    assert np.allclose(spectrum_to_weights(spec),
                       naive_truncated_inverse(spec.coeffs, n), atol=1e-10)


@given(st.integers(2, 80), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_hermitian_roundtrip_lossless_past_half(n, seed):
    """Keeping floor(N/2)+1 modes recovers any real vector exactly."""
    w = np.random.default_rng(seed).normal(size=n)
    p = n // 2 + 1
    recon = hermitian_reconstruct(weights_to_spectrum(w, p))
    assert np.max(np.abs(recon - w)) < 1e-12


def test_hermitian_below_half_is_lossy():
    w = np.random.default_rng(3).normal(size=64)
    assert codec_roundtrip_error(w, 8) > 1e-3


def test_truncated_inverse_differs_from_hermitian():
    # the literal truncated sum keeps no mirror modes, so it loses the
    # imaginary halves the Hermitian completion restores
    w = np.random.default_rng(4).normal(size=32)
    spec = weights_to_spectrum(w, 17)
    lossy = spectrum_to_weights(spec)
    lossless = hermitian_reconstruct(spec)
    assert np.max(np.abs(lossless - w)) < 1e-12
    assert np.max(np.abs(lossy - w)) > 1e-3


@pytest.mark.parametrize("n", [16, 65, 128])
def test_roundtrip_error_equals_parseval_tail(n):
    w = np.random.default_rng(n).normal(size=n)
    for p in range(1, n + 1):
        a = codec_roundtrip_error(w, p)
        b = parseval_tail_error(w, p)
        assert a == pytest.approx(b, abs=1e-9)


def test_spectrum_validation():
    with pytest.raises(ShapeError):
        WeightSpectrum(np.zeros((2, 2), complex), 4)
    with pytest.raises(ShapeError):
        WeightSpectrum(np.zeros(5, complex), 4)  # p > N
    with pytest.raises(ShapeError):
        weights_to_spectrum(np.zeros(8), 0)
    with pytest.raises(ShapeError):
        weights_to_spectrum(np.zeros((4, 2)), 2)


def test_idft_matrix_reproduces_truncated_inverse():
    w = np.random.default_rng(9).normal(size=40)
    p = 13
    spec = weights_to_spectrum(w, p)
    mat = idft_matrix(40, p)
    stacked = np.concatenate([spec.coeffs.real, spec.coeffs.imag])
    assert np.allclose(mat @ stacked, spectrum_to_weights(spec), atol=1e-12)


# ---------------------------------------------------------------------------
# truncation bookkeeping
# ---------------------------------------------------------------------------

def test_hidden_budget_split_across_middle_layers():
    arch = Architecture(1, 64, 4, 1)  # sizes [128, 4160, 4160, 4160, 64]
    codec = SpectralCodecConfig(32, 2048, 16)
    ps = codec.per_layer(arch)
    assert ps == [32, 683, 683, 682, 16]
    assert sum(ps[1:-1]) == 2048


def test_truncations_clamped_to_layer_size():
    arch = Architecture(1, 4, 2, 1)  # sizes [8, 20, 4]
    ps = SpectralCodecConfig(100, 100, 100).per_layer(arch)
    assert ps == [8, 20, 4]


def test_codec_config_validation():
    with pytest.raises(ConfigError):
        SpectralCodecConfig(0, 4, 4)


# ---------------------------------------------------------------------------
# model spec
# ---------------------------------------------------------------------------

def small_spec(mode="fourier_reduced"):
    return ModelSpec(
        arch=Architecture(1, 8, 3, 1),
        codec=SpectralCodecConfig(4, 12, 3),
        m=10, mode=mode, hyper_width=16, hyper_depth=2,
    )


def test_head_dims_by_mode():
    sizes = small_spec().arch.layer_sizes()     # [16, 72, 72, 8]
    assert small_spec("fourier_reduced").head_dims() == [8, 12, 12, 6]
    assert small_spec("full_spectrum").head_dims() == sizes
    assert small_spec("single_hyper").head_dims() == [sum(sizes)]


def test_theta_layout_and_split_roundtrip():
    spec = small_spec()
    theta = np.random.default_rng(0).normal(size=spec.n_theta())
    named = spec.split_theta(theta)
    assert sum(v.size for v in named.values()) == spec.n_theta()
    rebuilt = np.concatenate([named[n].ravel() for n, _ in spec.theta_layout()])
    assert np.array_equal(rebuilt, theta)
    with pytest.raises(ShapeError):
        spec.split_theta(theta[:-1])


def test_single_hyper_layout_has_one_trunk():
    tags = {name.split("/")[0] for name, _ in small_spec("single_hyper").theta_layout()}
    assert tags == {"hyper"}
    tags4 = {name.split("/")[0] for name, _ in small_spec().theta_layout()}
    assert tags4 == {"hyper0", "hyper1", "hyper2", "hyper3"}


def test_generate_weights_matches_longhand_oracle():
    """Full pipeline against an explicit per-layer reimplementation."""
    spec = small_spec()
    rng = np.random.default_rng(1)
    theta = rng.normal(0.0, 0.3, size=spec.n_theta())
    eta = rng.normal(size=spec.m)
    weights = spec.generate_weights(theta, eta)

    named = spec.split_theta(theta)
    gelu = get_activation("gelu")
    sizes = spec.arch.layer_sizes()
    ps = spec.truncations()
    c = np.fft.rfft(eta, norm="ortho")
    feats = np.concatenate([
        [c.real[0]],
        np.sqrt(2.0) * c.real[1:-1],
        [c.real[-1]],                    # even m: self-conjugate Nyquist mode
        np.sqrt(2.0) * c.imag[1:-1],
    ])
    for i, ((w, b), shape) in enumerate(zip(weights.layers,
                                            spec.arch.layer_shapes())):
        h = feats[None, :]
        for j in range(spec.hyper_depth):
            h = gelu.value(h @ named[f"hyper{i}/w{j}"].T + named[f"hyper{i}/b{j}"])
        out = (h @ named[f"hyper{i}/w_head"].T + named[f"hyper{i}/b_head"]).ravel()
        fan_out, fan_in, has_bias = shape
        scale = np.sqrt(2.0 / (fan_in + fan_out)) * sizes[i] / np.sqrt(ps[i])
        coeffs = scale * (out[: ps[i]] + 1j * out[ps[i]:])
        flat = naive_truncated_inverse(coeffs, sizes[i])
        assert np.max(np.abs(w.ravel() - flat[: fan_out * fan_in])) < 1e-12
        if has_bias:
            assert np.max(np.abs(b - flat[fan_out * fan_in:])) < 1e-12


@pytest.mark.parametrize("mode", ["fourier_reduced", "full_spectrum",
                                  "single_hyper"])
def test_taped_pipeline_bit_identical_to_numpy(mode):
    """Training-path primals equal the numpy reconstruction exactly."""
    spec = small_spec(mode)
    rng = np.random.default_rng(2)
    theta = rng.normal(0.0, 0.3, size=spec.n_theta())
    eta = rng.normal(size=spec.m)
    from hyperpde import autodiff as ad
    tape = ad.Tape()
    th = tape.leaf(theta)
    wv = spec.build_weight_vars(tape, th, eta)
    weights = spec.generate_weights(theta, eta)
    for (wvar, bvar), (w, b) in zip(wv, weights.layers):
        assert np.array_equal(wvar.value, w)
        if b is not None:
            assert np.array_equal(bvar.value, b)


def test_generated_spectra_match_generated_weights():
    spec = small_spec()
    rng = np.random.default_rng(7)
    theta = rng.normal(0.0, 0.3, size=spec.n_theta())
    eta = rng.normal(size=spec.m)
    specs = spec.generate_spectra(theta, eta)
    weights = spec.generate_weights(theta, eta)
    for ws, (w, b), n in zip(specs, weights.layers, spec.arch.layer_sizes()):
        flat = w.ravel() if b is None else np.concatenate([w.ravel(), b])
        assert ws.n_weights == n
        assert np.allclose(spectrum_to_weights(ws), flat, atol=1e-12)
    with pytest.raises(ConfigError):
        small_spec("full_spectrum").generate_spectra(theta, eta)


def test_trunk_input_is_orthonormal_fourier_packing():
    """The trunk sees the task in a norm-preserving real Fourier basis; a
    pure harmonic concentrates into a single input coordinate."""
    for m in (10, 100, 7, 101):
        spec = ModelSpec(arch=Architecture(1, 8, 3, 1),
                         codec=SpectralCodecConfig(4, 12, 3), m=m)
        eta = np.random.default_rng(m).normal(size=m)
        row = spec._eta_row(eta)
        assert row.shape == (1, m)
        assert np.isclose(np.linalg.norm(row), np.linalg.norm(eta))

    spec = small_spec()
    x = np.arange(10)
    row = spec._eta_row(np.cos(2 * np.pi * 2 * x / 10)).ravel()
    assert np.argmax(np.abs(row)) == 2          # Re of mode 2
    assert np.sum(np.abs(row) > 1e-9) == 1

    with pytest.raises(ShapeError):
        spec._eta_row(np.zeros(11))


def test_init_weights_eta_independent_and_scaled():
    """Zero head weights make initial nets task-independent; head-bias
    scaling puts the generated weights near Xavier magnitude."""
    spec = ModelSpec(
        arch=Architecture(1, 32, 4, 1),
        codec=SpectralCodecConfig(16, 256, 8),
        m=100, hyper_width=64, hyper_depth=2,
    )
    theta = spec.init_theta(0)
    rng = np.random.default_rng(11)
    w_a = spec.generate_weights(theta, rng.normal(size=100))
    w_b = spec.generate_weights(theta, rng.normal(size=100))
    assert np.array_equal(w_a.flatten(), w_b.flatten())

    for (w, _b), (fan_out, fan_in, _) in zip(w_a.layers,
                                             spec.arch.layer_shapes()):
        target = np.sqrt(2.0 / (fan_in + fan_out))
        got = w.ravel().std()
        assert 0.3 * target < got < 3.0 * target


def test_init_is_seed_deterministic():
    spec = small_spec()
    assert np.array_equal(spec.init_theta(5), spec.init_theta(5))
    assert not np.array_equal(spec.init_theta(5), spec.init_theta(6))


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def test_parameter_count_matches_layout():
    spec = small_spec()
    n = sum(int(np.prod(s)) for _, s in spec.theta_layout())
    assert parameter_count(spec) == n
    assert parameter_count(spec, "fourier_reduced") == n


def test_truncated_mode_is_smaller_when_truncation_bites():
    """When 2 p_i < N_i for every layer, the spectral heads shrink the
    trainable count below the direct-emission mode."""
    spec = small_spec()
    assert all(2 * p < n for p, n in zip(spec.truncations(),
                                         spec.arch.layer_sizes())
               if n > 8)  # the tiny output layer is clamped, exclude it
    n_fourier = parameter_count(spec, "fourier_reduced")
    n_full = parameter_count(spec, "full_spectrum")
    assert n_fourier < n_full


def test_generated_net_runs_forward():
    spec = small_spec()
    theta = spec.init_theta(0)
    weights = spec.generate_weights(theta, np.zeros(spec.m))
    act = get_activation(spec.activation)
    out = forward(weights, act, np.linspace(0, 1, 5)[:, None])
    assert out.shape == (5, 1)
    assert np.all(np.isfinite(out))


def test_model_spec_validation():
    with pytest.raises(ConfigError):
        small_spec("other_mode")
    with pytest.raises(ConfigError):
        ModelSpec(arch=Architecture(1, 4, 2, 1),
                  codec=SpectralCodecConfig(2, 2, 2), m=0)
    with pytest.raises(ConfigError):
        ModelSpec(arch=Architecture(1, 4, 2, 1),
                  codec=SpectralCodecConfig(2, 2, 2), m=5, activation="relu")
