import json
import math

import numpy as np
import pytest

from fluidex import bas, exponents as ex, flows
from fluidex.errors import ConfigurationError, EmptyClassWarning, UnsupportedClassError

PI = math.pi


def test_sampling_counts_and_predicates(cellular):
    samples = ex.sample_admissible(cellular, "star2", 100, seed=1)
    # 100 random points plus the 4 stagnation eigen-pairs
    assert len(samples) == 104
    for s in samples[:100]:
        s.validate(atol=1e-9)
        assert np.linalg.norm(flows.vorticity_gradient(cellular, s.x0)) > 1e-10 or True
        assert flows.in_support(cellular, s.x0, "grad_omega")
    stag = samples[100:]
    stag_positions = {tuple(np.round(s.x0, 12)) for s in stag}
    assert len(stag_positions) == 4


def test_sampling_aligned_class(cellular):
    samples = ex.sample_admissible(cellular, "f2_aligned", 10, seed=3)
    for s in samples:
        g = flows.vorticity_gradient(cellular, s.x0)
        assert abs(float(s.b0 @ g)) <= 1e-12 * np.linalg.norm(g)
        gn = g / np.linalg.norm(g)
        assert np.allclose(s.xi0, gn, atol=1e-12)
    # separatrix seeds are appended after the random block
    assert len(samples) == 10 + len(cellular.stable_line_points)


def test_sampling_empty_class_warns():
    con3 = flows.get_flow("constant3d")
    with pytest.warns(EmptyClassWarning):
        out = ex.sample_admissible(con3, "star3", 10, seed=1)
    assert out == []


def test_sampling_band_predicate(bump_shear):
    samples = ex.sample_admissible(bump_shear, "star3", 50, seed=5)
    assert len(samples) == 50
    assert all(flows.in_support(bump_shear, s.x0, "omega") for s in samples)
    off = ex.sample_admissible(bump_shear, "f3", 50, seed=5)
    assert all(not flows.in_support(bump_shear, s.x0, "omega") for s in off)


def test_sampling_determinism(cellular):
    a = ex.sample_admissible(cellular, "star2", 50, 7)
    b = ex.sample_admissible(cellular, "star2", 50, 7)
    assert all(
        np.array_equal(p.x0, q.x0)
        and np.array_equal(p.xi0, q.xi0)
        and np.array_equal(p.b0, q.b0)
        for p, q in zip(a, b)
    )
    c = ex.sample_admissible(cellular, "star2", 50, 8)
    assert not np.array_equal(a[0].x0, c[0].x0)


def test_f3_rejected_when_support_is_everything(abc):
    with pytest.raises(UnsupportedClassError):
        ex.sample_admissible(abc, "f3", 10, seed=1)


def test_class_dim_mismatch(cellular, abc):
    with pytest.raises(UnsupportedClassError):
        ex.sample_admissible(cellular, "star3", 10, seed=1)
    with pytest.raises(UnsupportedClassError):
        ex.sample_admissible(abc, "f2_aligned", 10, seed=1)


def test_theta_sup_cellular_stagnation(cellular):
    samples = ex.sample_admissible(cellular, "star2", 20, seed=1)
    val = ex.theta_sup(cellular, "star2", 10.0, samples)
    assert val >= 10.0 - 1e-6


def test_theta_sup_constant_zero(constant):
    samples = ex.sample_admissible(constant, "full", 20, seed=1)
    assert ex.theta_sup(constant, "full", 4.0, samples) == pytest.approx(0.0, abs=1e-12)


def test_theta_sup_bump_shear_factor_class_is_frozen(bump_shear):
    samples = ex.sample_admissible(bump_shear, "f3", 30, seed=2)
    assert abs(ex.theta_sup(bump_shear, "f3", 10.0, samples)) <= 1e-8


def test_theta_sup_monotone_in_sample_set(cellular):
    big = ex.sample_admissible(cellular, "star2", 40, seed=9)
    small = big[:10]
    t = 3.0
    assert ex.theta_sup(cellular, "star2", t, big) >= ex.theta_sup(
        cellular, "star2", t, small
    )


def test_theta_sup_empty_errors(cellular):
    with pytest.raises(UnsupportedClassError):
        ex.theta_sup(cellular, "star2", 1.0, [])


def test_theta_sup_attaches_offending_sample():
    from fluidex.errors import NumericalBlowupError

    wild = flows.SteadyFlow(
        name="wild",
        dim=2,
        params={},
        vel=lambda x: np.full_like(x, 1e160),
        jac=lambda x: np.full(x.shape[:-1] + (2, 2), 1e160),
        vort=lambda x: np.zeros(x.shape[:-1]),
        grad_vort=lambda x: np.zeros_like(x),
        omega_support=flows.SupportSpec("all"),
        grad_omega_support=flows.SupportSpec("all"),
        max_speed=1e160,
    )
    samples = [
        bas.AdmissibleSample([0.1, 0.2], [1.0, 0.0], [0.0, 1.0]),
        bas.AdmissibleSample([0.5, 0.5], [0.0, 1.0], [1.0, 0.0]),
    ]
    with pytest.raises(NumericalBlowupError) as exc:
        ex.theta_sup(wild, "full", 1.0, samples)
    assert "offending sample" in str(exc.value)
    assert exc.value.t is not None


def test_estimate_exponent_cellular(cellular):
    est = ex.estimate_exponent(cellular, "star2", [5, 10, 15, 20, 25, 30], n=50, seed=1)
    assert 0.95 <= est.mu_hat <= 1.10
    assert est.n_injected == 4
    assert est.n_samples == 54
    assert est.rates_monotone_decreasing


def test_estimate_exponent_constant_zero(constant):
    est = ex.estimate_exponent(constant, "full", [2, 4, 6, 8], n=20, seed=3)
    assert abs(est.mu_hat) <= 1e-9
    assert all(abs(v) <= 1e-12 for v in est.theta_log)


def test_estimate_exponent_validation(cellular):
    with pytest.raises(ConfigurationError):
        ex.estimate_exponent(cellular, "star2", [5.0], n=5, seed=1)
    with pytest.raises(ConfigurationError):
        ex.estimate_exponent(cellular, "star2", [5.0, 4.0], n=5, seed=1)
    with pytest.raises(ConfigurationError):
        ex.estimate_exponent(cellular, "star2", [0.0, 1.0], n=5, seed=1)


def test_estimate_exponent_empty_class(constant):
    with pytest.raises(UnsupportedClassError):
        ex.estimate_exponent(constant, "star2", [1.0, 2.0], n=5, seed=1)


def test_abc_positive_stretching(abc):
    # chaotic stretching in the Beltrami flow: the sampled exponent is
    # decidedly positive and stable under halving the time step
    horizons = [4, 8, 12, 16, 20]
    est = ex.estimate_exponent(abc, "star3", horizons, n=150, seed=2, step=4e-3)
    est2 = ex.estimate_exponent(abc, "star3", horizons, n=150, seed=2, step=8e-3)
    assert est.mu_hat > 0.05
    assert abs(est2.mu_hat - est.mu_hat) <= 0.2 * abs(est.mu_hat)


def test_ress_lower_bound_anchors(cellular):
    est = ex.ExponentEstimate(
        class_tag="full", mu_hat=0.0, horizons=[1, 2], theta_log=[0, 0],
        per_horizon_rate=[0, 0], rates_monotone_decreasing=True, slope_residual=0.0,
        fit_window_start=0, n_samples=1, n_injected=0, seed=1, step=1e-3,
    )
    assert ex.ress_lower_bound(est, 7.0) == 1.0
    est.mu_hat = 1.0
    assert ex.ress_lower_bound(est, 2.0) == pytest.approx(math.e ** 2)
    with pytest.raises(ConfigurationError):
        ex.ress_lower_bound(est, 0.0)
    real = ex.estimate_exponent(cellular, "star2", [5, 10, 20], n=20, seed=1)
    assert ex.ress_lower_bound(real, 1.0) >= math.exp(0.95)


def test_composite_report_cellular(cellular):
    cfg = ex.ReportConfig(horizons=[4, 8, 12, 16], n=30, seed=1)
    rep = ex.composite_report(cellular, cfg)
    assert "full" in rep.estimates and "star2" in rep.estimates
    assert "f2_complement" in rep.skipped
    rel = rep.max_relation["full_vs_covering"]
    assert rel["within_tol"]
    assert rel["theta_max_gap"] <= 1e-9
    f2rel = rep.max_relation["f2_vs_subclasses"]
    assert f2rel["theta_within_tol"]
    # serializes cleanly
    js = json.dumps(rep.to_json_dict(), sort_keys=True)
    assert "mu_hat" in js


def test_composite_report_determinism(constant):
    cfg = ex.ReportConfig(horizons=[2, 4, 6], n=15, seed=11)
    a = ex.composite_report(constant, cfg).to_json_dict()
    b = ex.composite_report(constant, cfg).to_json_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_composite_report_explicit_unavailable_class_raises(abc):
    cfg = ex.ReportConfig(classes=["f3"], horizons=[2, 4], n=5, seed=1)
    with pytest.raises(UnsupportedClassError):
        ex.composite_report(abc, cfg)


def test_scale_invariance_of_theta(cellular):
    # doubling all covector magnitudes shifts rho only
    samples = ex.sample_admissible(cellular, "star2", 10, seed=4)
    r1 = bas.integrate_bas(cellular, samples, 3.0, 1e-3)
    r2 = bas.integrate_bas(cellular, samples, 3.0, 1e-3, rho0=math.log(2.0))
    assert np.max(np.abs(r1.state.beta - r2.state.beta)) < 1e-10
