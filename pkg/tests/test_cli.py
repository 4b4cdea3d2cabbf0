import hashlib
import json

import pytest

from fluidex import cli


def run_cli(args):
    return cli.main(args)


def test_catalog_lists_flows(tmp_path, capsys):
    status = run_cli(["catalog", "--out", str(tmp_path / "o")])
    out = capsys.readouterr().out
    assert status == 0
    for name in ("cellular", "abc", "bump_shear", "shear", "constant"):
        assert name in out
    data = json.loads((tmp_path / "o" / "catalog.json").read_text())
    assert any(e["name"] == "cellular" and e["stagnation_points"] == 4 for e in data)


def test_exponents_run_and_manifest(tmp_path, capsys):
    outdir = tmp_path / "run1"
    status = run_cli(
        ["exponents", "--flow", "constant", "--classes", "full",
         "--horizons", "2,4,6", "--n", "10", "--seed", "3", "--out", str(outdir)]
    )
    assert status == 0
    report = json.loads((outdir / "exponents.json").read_text())
    assert abs(report["classes"]["full"]["mu_hat"]) <= 1e-9
    manifest = json.loads((outdir / "manifest.json").read_text())
    for name, digest in manifest["outputs"].items():
        body = (outdir / name).read_bytes()
        assert hashlib.sha256(body).hexdigest() == digest
    # no orphan files besides the manifest itself
    on_disk = {p.name for p in outdir.iterdir()}
    assert on_disk == set(manifest["outputs"]) | {"manifest.json"}
    assert (outdir / "exponents.gp").exists()


def test_exponents_deterministic_bytes(tmp_path):
    args = ["exponents", "--flow", "cellular", "--classes", "star2",
            "--horizons", "2,4", "--n", "10", "--seed", "5"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(args + ["--out", str(a)]) == 0
    assert run_cli(args + ["--out", str(b)]) == 0
    assert (a / "exponents.json").read_bytes() == (b / "exponents.json").read_bytes()
    assert (a / "exponents.csv").read_bytes() == (b / "exponents.csv").read_bytes()


def test_factor_class_rejected_on_full_support(tmp_path, capsys):
    status = run_cli(
        ["exponents", "--flow", "abc", "--classes", "f3", "--horizons", "2,4",
         "--n", "5", "--out", str(tmp_path / "o")]
    )
    assert status == 2
    err = capsys.readouterr().err
    assert "supp(omega) is the whole domain" in err


def test_unknown_flow_exits_2(tmp_path, capsys):
    status = run_cli(["exponents", "--flow", "nope", "--out", str(tmp_path / "o")])
    assert status == 2


def test_config_file_and_flag_override(tmp_path):
    cfgfile = tmp_path / "run.toml"
    cfgfile.write_text(
        'command = "exponents"\nflow = "constant"\nclasses = ["full"]\n'
        "horizons = [2.0, 4.0]\nn_samples = 8\nseed = 1\n"
    )
    out1 = tmp_path / "o1"
    status = run_cli(["exponents", "--config", str(cfgfile), "--out", str(out1), "--seed", "9"])
    assert status == 0
    rep = json.loads((out1 / "exponents.json").read_text())
    assert rep["classes"]["full"]["seed"] == 9  # flag wins over file


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfgfile = tmp_path / "bad.toml"
    cfgfile.write_text('command = "exponents"\nbogus_key = 3\n')
    status = run_cli(["exponents", "--config", str(cfgfile), "--out", str(tmp_path / "o")])
    assert status == 2
    assert "bogus_key" in capsys.readouterr().err


def test_config_validation_ranges(tmp_path):
    status = run_cli(
        ["exponents", "--flow", "constant", "--n", "0", "--out", str(tmp_path / "o")]
    )
    assert status == 2


def test_trajectory_command(tmp_path, capsys):
    outdir = tmp_path / "traj"
    status = run_cli(
        ["trajectory", "--flow", "cellular", "--x0", "0,0", "--xi0", "1,0",
         "--b0", "0,1", "--t-final", "2.0", "--out", str(outdir)]
    )
    assert status == 0
    lines = (outdir / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2,eta1,eta2,rho,c1,c2,beta"
    last = [float(v) for v in lines[-1].split(",")]
    assert last[0] == pytest.approx(2.0)
    assert last[-1] == pytest.approx(2.0, rel=1e-6)  # log|b| = t at the stagnation point


def test_verify_flow_command(tmp_path, capsys):
    status = run_cli(["verify-flow", "--flow", "cellular", "--resolution", "64",
                      "--out", str(tmp_path / "v")])
    assert status == 0
    rep = json.loads((tmp_path / "v" / "verify_flow.json").read_text())
    assert rep["div_residual"] <= 1e-10


def test_flow_params_forwarded(tmp_path):
    outdir = tmp_path / "o"
    status = run_cli(
        ["verify-flow", "--flow", "abc", "--flow-param", "A=1.5", "--flow-param", "B=0.5",
         "--resolution", "32", "--out", str(outdir)]
    )
    assert status == 0


def test_oracle_compare_command(tmp_path):
    outdir = tmp_path / "oc"
    status = run_cli(
        ["oracle-compare", "--flow", "cellular", "--x0", "0,1.2", "--zeta", "0.6",
         "--xi0", "1,0", "--deltas", "0.0625", "--t-grid", "0.5,1.0",
         "--resolution", "128", "--dt", "0.01", "--step", "0.002",
         "--out", str(outdir)]
    )
    assert status == 0
    lines = (outdir / "oracle_compare.csv").read_text().splitlines()
    assert lines[0] == "delta,t,oracle_norm,predicted_norm,relative_gap"
    assert len(lines) == 3
    data = json.loads((outdir / "oracle_compare.json").read_text())
    assert all(r["rel_gap"] < 0.2 for r in data["rows"])


def test_verify_lemmas_command(tmp_path):
    # heavy only on a cold operator-matrix cache; the acceptance suite has
    # normally warmed it in the same process
    outdir = tmp_path / "lm"
    status = run_cli(["verify-lemmas", "--resolution", "256", "--seed", "1",
                      "--out", str(outdir)])
    assert status == 0
    data = json.loads((outdir / "lemma_scalings.json").read_text())
    assert abs(data["solproj"]["slope"] - 1.0) <= 0.15
    assert abs(data["inimage3d"]["slope"] - 2.5) <= 0.3
    assert abs(data["image2d"]["slope"] - 1.0) <= 0.15
    assert data["kernel2d"]["zeta_slope"] >= 0.8
    assert data["kernel2d"]["delta_slope"] >= 0.8
    csv = (outdir / "lemma_scalings.csv").read_text().splitlines()
    assert csv[0] == "kind,parameter,value,norm"


def test_console_entry_point(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "fluidex.cli", "catalog", "--out", str(tmp_path / "c")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "cellular" in proc.stdout
