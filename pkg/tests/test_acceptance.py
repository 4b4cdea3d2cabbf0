"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; the suite shares heavy artifacts (operator matrices, the seeded CLI
run) across criteria through caches and module fixtures.
"""

import json
import math
import time
import warnings

import numpy as np
import pytest

from fluidex import bas, cli, exponents as ex, flows, oracle, spectral as sp
from fluidex.bas import AdmissibleSample, perp
from fluidex.errors import EmptyClassWarning, TruncationWarning

PI = math.pi


def _report(tag: str, checks: dict):
    failed = [name for name, ok in checks.items() if not ok]
    verdict = "PASS" if not failed else f"FAIL ({', '.join(failed)})"
    print(f"ACCEPTANCE {tag}: {verdict}")
    assert not failed, f"{tag} failed: {failed}"


@pytest.fixture(scope="module")
def cellular():
    return flows.get_flow("cellular")


@pytest.fixture(scope="module")
def abc():
    return flows.get_flow("abc")


@pytest.fixture(scope="module")
def criterion2_run(tmp_path_factory):
    """Seeded CLI exponent run shared by criteria 2 and 11."""
    out = tmp_path_factory.mktemp("crit2")
    args = [
        "exponents", "--flow", "cellular", "--classes", "star2,f2_aligned",
        "--horizons", "5,10,15,20,25,30", "--n", "500", "--seed", "1",
        "--out", str(out),
    ]
    t0 = time.time()
    status = cli.main(args)
    elapsed = time.time() - t0
    report = json.loads((out / "exponents.json").read_text())
    return {
        "args": args[:-2],
        "status": status,
        "elapsed": elapsed,
        "report": report,
        "json_bytes": (out / "exponents.json").read_bytes(),
        "csv_bytes": (out / "exponents.csv").read_bytes(),
    }


def test_c1_stagnation_point_exactness(cellular):
    sample = AdmissibleSample([0.0, 0.0], [1.0, 0.0], [0.0, 1.0])
    t0 = time.time()
    res = bas.integrate_bas(cellular, sample, 10.0, 1e-3)
    elapsed = time.time() - t0
    beta = float(res.state.beta[0])
    _report(
        "C1 stagnation-point exactness",
        {
            "log|b|(10) = 10 within 1e-6 relative": abs(beta - 10.0) <= 1e-5,
            "runtime < 1 s": elapsed < 1.0,
        },
    )


def test_c2_exponent_reproduction(criterion2_run):
    rep = criterion2_run["report"]["classes"]
    mu_star = rep["star2"]["mu_hat"]
    mu_aligned = rep["f2_aligned"]["mu_hat"]
    _report(
        "C2 exponent reproduction",
        {
            "command succeeded": criterion2_run["status"] == 0,
            "mu_star2 in [0.95, 1.10]": 0.95 <= mu_star <= 1.10,
            "mu_f2_aligned >= 0.8": mu_aligned >= 0.8,
            "runtime < 2 min": criterion2_run["elapsed"] < 120.0,
        },
    )


def test_c3_trivial_exponents():
    t0 = time.time()
    checks = {}
    con = flows.get_flow("constant")
    for tag in ("full", "f2_complement", "f2"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyClassWarning)
            est = ex.estimate_exponent(con, tag, [2, 4, 8], n=30, seed=1)
        checks[f"constant {tag} exponent = 0 within 1e-9"] = abs(est.mu_hat) <= 1e-9
    con3 = flows.get_flow("constant3d")
    for tag in ("full", "f3"):
        est = ex.estimate_exponent(con3, tag, [2, 4, 8], n=30, seed=1)
        checks[f"constant3d {tag} exponent = 0 within 1e-9"] = abs(est.mu_hat) <= 1e-9
    shear = flows.get_flow("shear")
    est = ex.estimate_exponent(shear, "star2", [5, 10, 15, 20, 25, 30, 35, 40], n=500, seed=1)
    checks["shear exponent <= 0.05 (algebraic growth)"] = est.mu_hat <= 0.05
    checks["runtime < 2 min"] = (time.time() - t0) < 120.0
    _report("C3 trivial exponents", checks)


def test_c4_orthogonality_conservation(cellular, abc):
    rng = np.random.default_rng(7)
    xs = rng.uniform(0, 2 * PI, (500, 2))
    th = rng.uniform(0, 2 * PI, 500)
    xi = np.stack([np.cos(th), np.sin(th)], axis=-1)
    s2 = [AdmissibleSample(x, e, perp(e)) for x, e in zip(xs, xi)]
    r2 = bas.integrate_bas(cellular, s2, 20.0, 2e-3)

    xs3 = rng.uniform(0, 2 * PI, (500, 3))
    z = rng.standard_normal((500, 3))
    xi3 = z / np.linalg.norm(z, axis=-1, keepdims=True)
    s3 = []
    for x, e in zip(xs3, xi3):
        q = bas.orthonormal_complement(e)
        ph = rng.uniform(0, 2 * PI)
        s3.append(AdmissibleSample(x, e, math.cos(ph) * q[0] + math.sin(ph) * q[1]))
    r3 = bas.integrate_bas(abc, s3, 20.0, 2e-3)
    _report(
        "C4 orthogonality conservation",
        {
            "cellular max |<c,eta>| <= 1e-7 on [0,20]": r2.ortho_max <= 1e-7,
            "abc max |<c,eta>| <= 1e-7 on [0,20]": r3.ortho_max <= 1e-7,
        },
    )


def test_c5_cocycle_property(cellular):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        x0 = rng.uniform(0, 2 * PI, 2)
        th = rng.uniform(0, 2 * PI)
        xi0 = np.array([math.cos(th), math.sin(th)])
        full = bas.transport_matrix(cellular, x0, xi0, 2.0)
        x1, eta1 = bas.evolved_base_point(cellular, x0, xi0, 1.0)
        first = bas.transport_matrix(cellular, x0, xi0, 1.0)
        second = bas.transport_matrix(cellular, x1, eta1, 1.0)
        gap = float(np.max(np.abs(full.A0 - second.A0 @ first.A0)))
        worst = max(worst, gap)
    _report(
        "C5 cocycle property",
        {"max composition gap <= 1e-6 over 50 base points": worst <= 1e-6},
    )


def _random_inner_band_solenoidal(dim, N, kmax, seed):
    r = np.random.default_rng(seed)
    co = np.zeros((dim,) + (N,) * dim, dtype=complex)
    for _ in range(24):
        k = r.integers(-kmax, kmax + 1, dim)
        if np.all(k == 0):
            continue
        kf = k.astype(float)
        if dim == 2:
            pol = np.array([-kf[1], kf[0]]) / np.linalg.norm(kf)
            vec = (r.standard_normal() + 1j * r.standard_normal()) * pol
        else:
            q = bas.orthonormal_complement(kf / np.linalg.norm(kf))
            a = r.standard_normal(2) + 1j * r.standard_normal(2)
            vec = a[0] * q[0] + a[1] * q[1]
        for c in range(dim):
            co[(c,) + tuple(k % N)] += vec[c]
    return sp.FourierField(dim, N, co)


def test_c6_skew_adjointness(cellular, abc):
    checks = {}
    op2 = sp.build_B_matrix(cellular, 8)
    checks["cellular K=8 skew defect <= 1e-10"] = op2.skew_defect() <= 1e-10
    v2 = _random_inner_band_solenoidal(2, op2.N, 6, seed=3)
    B2 = sp.apply_B(cellular, v2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        fn2 = sp.factor_norm(B2, op2)
    checks["cellular factor norm of image <= 1e-8 rel"] = fn2 <= 1e-8 * v2.norm()

    op3 = sp.build_B_matrix(abc, 6)
    checks["abc K=6 skew defect <= 1e-10"] = op3.skew_defect() <= 1e-10
    v3 = _random_inner_band_solenoidal(3, op3.N, 4, seed=4)
    B3 = sp.apply_B(abc, v3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        fn3 = sp.factor_norm(B3, op3)
    checks["abc factor norm of image <= 1e-8 rel"] = fn3 <= 1e-8 * v3.norm()
    _report("C6 skew-adjointness", checks)


def test_c7_lemma_scaling_suite(cellular, abc):
    t0 = time.time()
    checks = {}

    # solenoidal-projection rate: slope 1 in the carrier scale
    for dim, flow, xi0 in ((2, cellular, [1, 0]), (3, abc, [1, 1, 0])):
        for seed in (21, 22, 23):
            v = _random_inner_band_solenoidal(dim, 32, 4, seed=seed)
            pts = []
            for dinv in (8, 16, 32, 64, 128):
                r = sp.lemma_residual(
                    "solproj", flow, {"v": v, "xi0": xi0, "delta": 1.0 / dinv}
                )
                pts.append((1.0 / dinv, r.norms["residual"]))
            slope = sp.slope_fit(pts).slope
            checks[f"solproj dim{dim} seed{seed} slope 1.0+-0.15"] = abs(slope - 1.0) <= 0.15

    # localization rate of the 3D preimage residual: slope 5/2 in the ball radius
    pts = []
    for z in (0.4, 0.2, 0.1, 0.05):
        r = sp.lemma_residual(
            "inimage3d", abc,
            {"x0": [0, 0, 0], "xi0": [0, 0, 1], "P": [1, 0, 0], "zeta": z, "delta": 1.0 / 128},
        )
        pts.append((z, r.norms["r_zeta"]))
    slope = sp.slope_fit(pts).slope
    checks["inimage3d slope 2.5+-0.3"] = abs(slope - 2.5) <= 0.3

    # 2D preimage residual: slope 1 in the carrier scale at N = 256
    pts = []
    for dinv in (8, 16, 32):
        r = sp.lemma_residual(
            "image2d", cellular,
            {"x0": [PI / 2, 0.0], "xi0": [1, 0], "zeta": 0.9, "delta": 1.0 / dinv, "N": 256},
        )
        pts.append((1.0 / dinv, r.norms["residual"]))
    slope = sp.slope_fit(pts).slope
    checks["image2d slope 1.0+-0.15"] = abs(slope - 1.0) <= 0.15

    # factor-norm discrepancy of aligned packets: at least linear decay in
    # each of the ball radius and the carrier scale separately
    x0k = [0.35, 0.45]
    pts = []
    for z in (0.95, 0.8, 0.67, 0.56):
        r = sp.lemma_residual(
            "kernel2d", cellular,
            {"x0": x0k, "zeta": z, "delta": 1.0 / 12, "N": 256, "K": 32},
        )
        pts.append((z, r.norms["discrepancy"]))
    zslope = sp.slope_fit(pts).slope
    checks["kernel2d zeta slope >= 0.8"] = zslope >= 0.8
    pts = []
    for dinv in (4, 8, 16):
        r = sp.lemma_residual(
            "kernel2d", cellular,
            {"x0": x0k, "zeta": 0.7, "delta": 1.0 / dinv, "N": 256, "K": 32},
        )
        pts.append((1.0 / dinv, r.norms["discrepancy"]))
    dslope = sp.slope_fit(pts).slope
    checks["kernel2d delta slope >= 0.8"] = dslope >= 0.8

    checks["runtime < 5 min"] = (time.time() - t0) < 300.0
    _report("C7 lemma scaling suite", checks)


def test_c8_oracle_agreement(cellular):
    t0 = time.time()
    comp = oracle.compare_growth(
        cellular, "bump", [0.0, 1.2], 0.6, [1.0, 0.0],
        [1.0 / 16, 1.0 / 64], [0.75, 1.5, 2.25, 3.0], 256, 0.01, step=1e-3,
    )
    gaps = comp.summary["max_gap_by_delta"]
    _report(
        "C8 oracle agreement",
        {
            "relative gap <= 15% at delta=1/64": gaps[1.0 / 64] <= 0.15,
            "gap shrinks from delta=1/16 to 1/64": comp.summary["gap_shrinks_with_delta"],
            "runtime < 10 min": (time.time() - t0) < 600.0,
        },
    )


def test_c9_isovorticial_class_invariance(cellular):
    op = sp.build_B_matrix(cellular, 32)
    N = 128
    v = _random_inner_band_solenoidal(2, N, 6, seed=5)
    w0 = sp.apply_B(cellular, v)
    st = oracle.evolve_linearized(cellular, w0, 1.0, N, 0.01)
    wt = st.velocity()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        fn = sp.factor_norm(wt, op)
    _report(
        "C9 image-class invariance under evolution",
        {"factor norm of evolved image <= 1e-4 rel": fn <= 1e-4 * wt.norm()},
    )


def test_c10_max_relation():
    checks = {}
    cel = flows.get_flow("cellular")
    rep2 = ex.composite_report(
        cel, ex.ReportConfig(horizons=[4, 8, 12, 16, 20, 24], n=150, seed=1)
    )
    rel2 = rep2.max_relation["full_vs_covering"]
    checks["cellular full = max of class exponents within 0.1"] = rel2["mu_gap"] <= 0.1
    checks["cellular theta-level split exact"] = rel2["theta_max_gap"] <= 1e-9

    bump = flows.get_flow("bump_shear")
    rep3 = ex.composite_report(
        bump, ex.ReportConfig(horizons=[4, 8, 12, 16, 20, 24], n=150, seed=1)
    )
    rel3 = rep3.max_relation["full_vs_covering"]
    checks["bump_shear full = max of class exponents within 0.1"] = rel3["mu_gap"] <= 0.1
    checks["bump_shear theta-level split exact"] = rel3["theta_max_gap"] <= 1e-9
    checks["bump_shear factor-class exponent = 0 within 1e-6"] = (
        abs(rep3.estimates["f3"].mu_hat) <= 1e-6
    )
    _report("C10 max relation", checks)


def test_c11_determinism(criterion2_run, tmp_path):
    out2 = tmp_path / "rerun"
    status = cli.main(criterion2_run["args"] + ["--out", str(out2)])
    same_json = (out2 / "exponents.json").read_bytes() == criterion2_run["json_bytes"]
    same_csv = (out2 / "exponents.csv").read_bytes() == criterion2_run["csv_bytes"]
    _report(
        "C11 determinism",
        {
            "rerun succeeded": status == 0,
            "byte-identical JSON report": same_json,
            "byte-identical CSV report": same_csv,
        },
    )
