"""Metrics, theorem harnesses, spectral reports, and the continuity study."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperpde.analysis import (ContinuityReport, alpha_bound,
                               evaluate_dataset, frequency_error,
                               freq_error_trace, make_theorem2_instance,
                               mode_comparison_csv, relative_l2,
                               run_theorem2_sweep, truncation_errors,
                               verify_theorem1, verify_theorem2,
                               weight_spectrum_rows, write_freq_error_csv,
                               write_spectrum_csv)
from hyperpde.exceptions import (ConfigError, NumericalError, ShapeError)
from hyperpde.hypernet import codec_roundtrip_error
from hyperpde.problems import Dataset, generate_dataset
from hyperpde.rng import stream
from hyperpde.training import TrainConfig


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_relative_l2_basic():
    truth = np.array([3.0, 4.0])
    assert relative_l2(truth, truth) == 0.0
    assert relative_l2(np.zeros(2), truth) == pytest.approx(1.0)
    assert relative_l2(2 * truth, truth) == pytest.approx(1.0)


@given(st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_relative_l2_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=20) + 0.1
    pred = truth + rng.normal(size=20) * 0.01
    a = relative_l2(pred, truth)
    b = relative_l2(scale * pred, scale * truth)
    assert a == pytest.approx(b, rel=1e-9)


def test_relative_l2_errors():
    with pytest.raises(NumericalError):
        relative_l2(np.ones(3), np.zeros(3))
    with pytest.raises(ShapeError):
        relative_l2(np.ones(3), np.ones(4))


def test_frequency_error_zero_prediction_gives_unit_error():
    truth = np.sin(2 * np.pi * np.arange(64) / 64)
    delta = frequency_error(np.zeros(64), truth)
    active = ~np.isnan(delta)
    assert np.allclose(delta[active], 1.0)
    # only the two conjugate sine modes are active
    assert active.sum() == 2


def test_frequency_error_flags_missing_modes_only():
    n = 64
    t = np.arange(n) / n
    truth = np.sin(2 * np.pi * t) + 0.5 * np.sin(6 * np.pi * t)
    pred = np.sin(2 * np.pi * t)  # drops the k=3 component
    delta = frequency_error(pred, truth)
    assert delta[1] == pytest.approx(0.0, abs=1e-12)
    assert delta[3] == pytest.approx(1.0)
    with pytest.raises(NumericalError):
        frequency_error(np.zeros(4), np.zeros(4))


# ---------------------------------------------------------------------------
# truncation-error verification
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n", [9, 32, 65])
def test_truncation_errors_match_direct_roundtrip(n):
    w = np.random.default_rng(n).normal(size=n)
    errs = truncation_errors(w)
    assert errs.shape == (n,)
    for p in (1, 2, n // 2, n // 2 + 1, n):
        assert errs[p - 1] == pytest.approx(codec_roundtrip_error(w, p),
                                            abs=1e-12)
    assert np.all(np.diff(errs) <= 1e-12)  # non-increasing in p


def test_verify_theorem1_exact_threshold():
    """eps = 0 forces the first lossless truncation, floor(N/2)+1."""
    for n in (8, 9, 64, 65):
        w = np.random.default_rng(n + 1).normal(size=n)
        assert verify_theorem1(w, 0.0) == n // 2 + 1
    with pytest.raises(ConfigError):
        verify_theorem1(np.ones(8), -1.0)


def test_verify_theorem1_band_limited_signal():
    # a signal with only modes {0, 1} needs p = 2 at eps ~ 0
    n = 32
    t = np.arange(n) / n
    w = 1.0 + np.cos(2 * np.pi * t)
    assert verify_theorem1(w, 1e-10) == 2


# ---------------------------------------------------------------------------
# gradient-dominance harness
# ---------------------------------------------------------------------------

def test_alpha_bound_structure():
    g1 = np.array([10.0, 1.0, 1.0])
    g2 = np.array([1.0, 1.0, 1.0])
    tau, max_ratio, alpha = alpha_bound(g1, g2, eps=0.5)
    assert tau == 0
    assert max_ratio == pytest.approx(10.0)
    # constructive formula: min(|g2_t| e / (G1 + G2 R - G2 e), |g1_t| / G1)
    a1 = 1.0 * 0.5 / (2.0 + 2.0 * 10.0 - 2.0 * 0.5)
    assert alpha == pytest.approx(min(a1, 10.0 / 2.0))


def test_alpha_bound_validation():
    with pytest.raises(NumericalError):
        alpha_bound(np.ones(3), np.array([1.0, 0.0, 1.0]), 0.1)
    with pytest.raises(ConfigError):
        alpha_bound(np.array([2.0, 1.0]), np.ones(2), eps=99.0)
    with pytest.raises(ShapeError):
        alpha_bound(np.ones(3), np.ones(4), 0.1)


def test_single_dominant_unit_gives_unbounded_alpha():
    g1 = np.array([5.0, 0.0])
    g2 = np.array([1.0, 1.0])
    _, _, alpha = alpha_bound(g1, g2, 0.1)
    assert alpha == np.inf


def test_theorem2_instances_hold_within_bound():
    rng = stream(0, "t2-unit")
    for _ in range(200):
        inst = make_theorem2_instance(rng, n_units=8, eps=1e-6)
        res = verify_theorem2(inst)
        assert res.holds
        assert abs(inst.b[inst.tau] - 1.0) < 1e-15
        off = np.delete(inst.b, inst.tau)
        assert np.all(np.abs(off) <= inst.alpha + 1e-15)


def test_theorem2_sweep_reports():
    ok = run_theorem2_sweep(300, seed=1)
    assert ok["n_hold"] == 300 and ok["n_violate"] == 0
    bad = run_theorem2_sweep(300, alpha_scale=10.0, seed=1)
    assert bad["n_violate"] >= 1
    assert bad["violations"]
    v = bad["violations"][0]
    assert v["lhs"] < v["rhs"]


# ---------------------------------------------------------------------------
# csv emitters
# ---------------------------------------------------------------------------

def test_weight_spectrum_rows_cover_every_layer(tmp_path):
    from hyperpde.nets import Architecture, MainNetWeights
    arch = Architecture(1, 4, 2, 1)
    flat = np.random.default_rng(0).normal(size=arch.n_params())
    w = MainNetWeights.from_flat(arch, flat)
    rows = weight_spectrum_rows(w)
    sizes = arch.layer_sizes()
    assert len(rows) == sum(sizes)
    assert {r[0] for r in rows} == {0, 1, 2}
    # DC coefficient of layer 0 equals the sum of its flat weights
    flat0 = np.concatenate([w.layers[0][0].ravel(), w.layers[0][1]])
    dc = [r for r in rows if r[0] == 0 and r[1] == 0][0]
    assert dc[2] == pytest.approx(flat0.sum())
    assert dc[3] == pytest.approx(0.0, abs=1e-12)

    path = str(tmp_path / "spec.csv")
    write_spectrum_csv(w, path)
    lines = open(path).read().strip().splitlines()
    assert lines[0] == "layer,k,re,im"
    assert len(lines) == 1 + sum(sizes)


def test_freq_error_trace_and_csv(tmp_path):
    ds = generate_dataset("antiderivative", 2, seed=0, m=16)
    cfg = TrainConfig(benchmark="antiderivative", width=6, n_hidden=2,
                      p_input=4, p_hidden=8, p_output=3, hyper_width=8,
                      hyper_depth=1, m=16, epochs=3, n_residual=8,
                      n_bc=1, n_ic=1, seed=0)
    records = freq_error_trace(ds, cfg, sample_index=0, stride=2)
    steps = sorted({r[0] for r in records})
    assert steps == [2, 4, 6]
    path = str(tmp_path / "f.csv")
    write_freq_error_csv(records, path)
    assert open(path).readline().strip() == "step,k,delta"
    with pytest.raises(ConfigError):
        freq_error_trace(ds, cfg, sample_index=9)
    with pytest.raises(ConfigError):
        freq_error_trace(ds, cfg, stride=0)


def test_mode_comparison_csv(tmp_path):
    a = [(0, 1e-3, 0.5, 0, 0, 0), (1, 1e-3, 0.4, 0, 0, 0)]
    b = [(0, 1e-3, 0.6, 0, 0, 0), (1, 1e-3, 0.3, 0, 0, 0)]
    path = str(tmp_path / "cmp.csv")
    mode_comparison_csv(a, b, "layered", "single", path)
    lines = open(path).read().strip().splitlines()
    assert lines[0] == "step,loss_layered,loss_single"
    assert lines[1] == "0,0.5,0.6"
    with pytest.raises(ShapeError):
        mode_comparison_csv(a, b[:1], "x", "y", path)
    with pytest.raises(ShapeError):
        mode_comparison_csv(a, [(5, 0, 0.1, 0, 0, 0), (6, 0, 0.1, 0, 0, 0)],
                            "x", "y", path)


# ---------------------------------------------------------------------------
# dataset evaluation
# ---------------------------------------------------------------------------

def test_evaluate_dataset_structure():
    ds = generate_dataset("antiderivative", 2, seed=4, m=10)
    cfg = TrainConfig(benchmark="antiderivative", width=4, n_hidden=1,
                      p_input=2, p_hidden=4, p_output=2, hyper_width=4,
                      hyper_depth=1, m=10)
    spec = cfg.model_spec()
    theta = spec.init_theta(0)
    out = evaluate_dataset(spec, theta, ds, [0, 1], "gelu")
    assert set(out) == {"per_sample", "mean", "indices"}
    assert len(out["per_sample"]) == 2
    assert out["mean"] == pytest.approx(np.mean(out["per_sample"]))
    assert out["indices"] == [0, 1]


# ---------------------------------------------------------------------------
# continuity report plumbing
# ---------------------------------------------------------------------------

def test_continuity_report_csv(tmp_path):
    rep = ContinuityReport(x0s=(0.4, 0.5, 2.0), d12=[1.0, 2.0],
                           d23=[3.0, 4.0])
    path = str(tmp_path / "c.csv")
    rep.to_csv(path)
    lines = open(path).read().strip().splitlines()
    assert lines == ["layer,d_c1_c2,d_c2_c3", "0,1.0,3.0", "1,2.0,4.0"]


def test_continuity_study_validates_centers():
    from hyperpde.analysis import continuity_study
    with pytest.raises(ConfigError):
        continuity_study(x0s=(0.4, 0.5))
