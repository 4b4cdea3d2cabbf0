"""Experiment runner.

Commands: catalog | exponents | trajectory | verify-lemmas | oracle-compare |
verify-flow.  Configuration comes from an optional TOML file plus CLI flags;
flags win.  Every run writes its outputs atomically (write-then-rename) into
the output directory together with a manifest recording the config hash,
package versions, and a checksum of every file produced.  Reports contain no
timestamps, so identical configs give byte-identical outputs.

Exit codes: 0 success, 2 configuration/validation error, 3 numerical error.
The environment variable FLUIDEX_THREADS caps BLAS/OpenMP worker threads
(set before numpy spins up its pools).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib


def _cap_threads() -> None:
    cap = os.environ.get("FLUIDEX_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_cap_threads()

import numpy as np  # noqa: E402  (after the thread cap)

from . import __version__  # noqa: E402
from .errors import (  # noqa: E402
    ConfigurationError,
    ContractViolationError,
    FluidexError,
    HypothesisViolationError,
    NumericalBlowupError,
    ResolutionError,
    UnsupportedClassError,
    UnsupportedOperationError,
)
from . import bas, exponents, flows, oracle, spectral  # noqa: E402

_CONFIG_FIELDS = {
    "flow": str,
    "flow_params": dict,
    "command": str,
    "classes": list,
    "horizons": list,
    "n_samples": int,
    "seed": int,
    "step": float,
    "resolution": int,
    "dt": float,
    "out": str,
    "t_final": float,
    "x0": list,
    "xi0": list,
    "b0": list,
    "t_grid": list,
    "zeta": float,
    "deltas": list,
}


@dataclass
class RunConfig:
    command: str = ""
    flow: str = "cellular"
    flow_params: dict = field(default_factory=dict)
    classes: list = field(default_factory=lambda: ["full"])
    horizons: list = field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
    n_samples: int = 200
    seed: int = 1
    step: float = 1e-3
    resolution: int = 256
    dt: float = 0.01
    out: str = "out"
    t_final: float = 10.0
    x0: list = field(default_factory=lambda: [0.0, 0.0])
    xi0: list = field(default_factory=lambda: [1.0, 0.0])
    b0: list = field(default_factory=lambda: [0.0, 1.0])
    t_grid: list = field(default_factory=lambda: [0.75, 1.5, 2.25, 3.0])
    zeta: float = 0.6
    deltas: list = field(default_factory=lambda: [1.0 / 16.0, 1.0 / 64.0])

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if self.step <= 0 or self.dt <= 0:
            raise ConfigurationError("step and dt must be positive")
        if self.resolution < 8:
            raise ConfigurationError("resolution too small")
        if any(h <= 0 for h in self.horizons):
            raise ConfigurationError("horizons must be positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_config_file(path: str) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    unknown = set(data) - set(_CONFIG_FIELDS)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    return data


def _merge_config(file_data: dict, args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    for k, v in file_data.items():
        setattr(cfg, k, v)
    flag_map = {
        "flow": "flow",
        "classes": "classes",
        "horizons": "horizons",
        "n": "n_samples",
        "seed": "seed",
        "step": "step",
        "resolution": "resolution",
        "dt": "dt",
        "out": "out",
        "t_final": "t_final",
        "x0": "x0",
        "xi0": "xi0",
        "b0": "b0",
        "t_grid": "t_grid",
        "zeta": "zeta",
        "deltas": "deltas",
    }
    for flag, name in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "flow_param", None):
        for kv in args.flow_param:
            k, _, v = kv.partition("=")
            if not _:
                raise ConfigurationError(f"flow parameter {kv!r} is not name=value")
            cfg.flow_params[k] = float(v)
    cfg.command = args.command
    cfg.validate()
    return cfg


# --- output helpers ---------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class OutputDir:
    def __init__(self, root: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: dict[str, str] = {}

    def write(self, name: str, data) -> Path:
        if isinstance(data, str):
            data = data.encode()
        path = self.root / name
        _atomic_write(path, data)
        self.written[name] = hashlib.sha256(data).hexdigest()
        return path

    def manifest(self, cfg: RunConfig) -> None:
        cfg_json = json.dumps(cfg.to_dict(), sort_keys=True)
        body = json.dumps(
            {
                "config": cfg.to_dict(),
                "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
                "versions": {
                    "fluidex": __version__,
                    "numpy": np.__version__,
                    "python": sys.version.split()[0],
                },
                "outputs": dict(sorted(self.written.items())),
            },
            sort_keys=True,
            indent=1,
        )
        _atomic_write(self.root / "manifest.json", body.encode())


def _json_bytes(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _gnuplot_script(csv_name: str, ycol: int, title: str) -> str:
    return (
        "set datafile separator ','\n"
        f"set title '{title}'\n"
        "set key autotitle columnhead\n"
        f"plot '{csv_name}' using 1:{ycol} with linespoints\n"
    )


# --- commands ----------------------------------------------------------------


def _cmd_catalog(cfg: RunConfig, outdir) -> int:
    rows = []
    for name in flows.catalog_entries():
        fl = flows.get_flow(name)
        rows.append(
            {
                "name": name,
                "dim": fl.dim,
                "params": fl.params,
                "omega_support": fl.omega_support.kind,
                "grad_omega_support": fl.grad_omega_support.kind if fl.grad_omega_support else None,
                "stagnation_points": len(fl.stagnation_points),
            }
        )
        print(
            f"{name:12s} dim={fl.dim} params={fl.params} "
            f"supp(omega)={fl.omega_support.kind}"
        )
    if outdir is not None:
        outdir.write("catalog.json", _json_bytes(rows))
    return 0


def _cmd_exponents(cfg: RunConfig, outdir: OutputDir) -> int:
    fl = flows.get_flow(cfg.flow, **cfg.flow_params)
    rcfg = exponents.ReportConfig(
        classes=cfg.classes,
        horizons=[float(h) for h in cfg.horizons],
        n=cfg.n_samples,
        seed=cfg.seed,
        step=cfg.step,
    )
    report = exponents.composite_report(fl, rcfg)
    outdir.write("exponents.json", _json_bytes(report.to_json_dict()))
    lines = ["class,t,log_theta"]
    for tag, est in sorted(report.estimates.items()):
        for t, th in zip(est.horizons, est.theta_log):
            lines.append(f"{tag},{t:.17g},{th:.17g}")
    outdir.write("exponents.csv", "\n".join(lines) + "\n")
    outdir.write("exponents.gp", _gnuplot_script("exponents.csv", 3, f"log Theta(t), {cfg.flow}"))
    for tag, est in sorted(report.estimates.items()):
        print(f"{cfg.flow} {tag}: mu_hat = {est.mu_hat:.6f} (n={est.n_samples}, seed={est.seed})")
    return 0


def _cmd_trajectory(cfg: RunConfig, outdir: OutputDir) -> int:
    fl = flows.get_flow(cfg.flow, **cfg.flow_params)
    sample = bas.AdmissibleSample(
        np.asarray(cfg.x0, dtype=float),
        np.asarray(cfg.xi0, dtype=float),
        np.asarray(cfg.b0, dtype=float),
    )
    sample.validate(atol=1e-9)
    res = bas.integrate_bas(
        fl, sample, cfg.t_final, step=cfg.step, record_trajectory=True,
        trajectory_stride=max(1, int(round(0.01 / cfg.step))),
    )
    traj = res.trajectory
    dim = fl.dim
    cols = (
        ["t"]
        + [f"x{i+1}" for i in range(dim)]
        + [f"eta{i+1}" for i in range(dim)]
        + ["rho"]
        + [f"c{i+1}" for i in range(dim)]
        + ["beta"]
    )
    lines = [",".join(cols)]
    for j, t in enumerate(traj.times):
        row = [f"{t:.17g}"]
        row += [f"{v:.17g}" for v in traj.x[j, 0]]
        row += [f"{v:.17g}" for v in traj.eta[j, 0]]
        row += [f"{traj.rho[j, 0]:.17g}"]
        row += [f"{v:.17g}" for v in traj.c[j, 0]]
        row += [f"{traj.beta[j, 0]:.17g}"]
        lines.append(",".join(row))
    outdir.write("trajectory.csv", "\n".join(lines) + "\n")
    ncols = len(cols)
    outdir.write("trajectory.gp", _gnuplot_script("trajectory.csv", ncols, "log|b|(t)"))
    print(f"final log|b| = {res.state.beta[0]:.9f} at t = {res.state.t:g} "
          f"(ortho drift {res.ortho_max:.2e})")
    return 0


def _cmd_verify_flow(cfg: RunConfig, outdir) -> int:
    fl = flows.get_flow(cfg.flow, **cfg.flow_params)
    rep = flows.verify_steady_euler(fl, cfg.resolution)
    print(
        f"{cfg.flow}: div residual {rep['div_residual']:.3e}, "
        f"steady-Euler residual {rep['euler_residual']:.3e}"
    )
    if outdir is not None:
        outdir.write("verify_flow.json", _json_bytes({"flow": cfg.flow, **rep}))
    ok = rep["div_residual"] <= 1e-8 and rep["euler_residual"] <= 1e-6
    return 0 if ok else 3


def _cmd_verify_lemmas(cfg: RunConfig, outdir: OutputDir) -> int:
    fl2 = flows.get_flow("cellular")
    fl3 = flows.get_flow("abc")
    N = cfg.resolution
    results = {}

    rng = np.random.default_rng(cfg.seed)
    co = np.zeros((2, 32, 32), dtype=complex)
    for _ in range(10):
        k = rng.integers(-4, 5, 2)
        co[(slice(None),) + tuple(k % 32)] += rng.standard_normal(2) + 1j * rng.standard_normal(2)
    v2 = spectral.FourierField(2, 32, co)
    pts = []
    for dinv in (8, 16, 32, 64, 128):
        r = spectral.lemma_residual("solproj", fl2, {"v": v2, "xi0": [1, 0], "delta": 1.0 / dinv})
        pts.append((1.0 / dinv, r.norms["residual"]))
    fit = spectral.slope_fit(pts)
    results["solproj"] = {"points": pts, "slope": fit.slope}

    pts = []
    for z in (0.4, 0.2, 0.1, 0.05):
        r = spectral.lemma_residual(
            "inimage3d", fl3,
            {"x0": [0, 0, 0], "xi0": [0, 0, 1], "P": [1, 0, 0], "zeta": z, "delta": 1.0 / 128},
        )
        pts.append((z, r.norms["r_zeta"]))
    fit = spectral.slope_fit(pts)
    results["inimage3d"] = {"points": pts, "slope": fit.slope}

    pts = []
    for dinv in (8, 16, 32):
        r = spectral.lemma_residual(
            "image2d", fl2,
            {"x0": [np.pi / 2, 0.0], "xi0": [1, 0], "zeta": 0.9, "delta": 1.0 / dinv, "N": N},
        )
        pts.append((1.0 / dinv, r.norms["residual"]))
    fit = spectral.slope_fit(pts)
    results["image2d"] = {"points": pts, "slope": fit.slope}

    x0k = [0.35, 0.45]
    ptsz, ptsd = [], []
    for z in (0.95, 0.8, 0.67, 0.56):
        r = spectral.lemma_residual(
            "kernel2d", fl2, {"x0": x0k, "zeta": z, "delta": 1.0 / 12, "N": N, "K": 32}
        )
        ptsz.append((z, r.norms["discrepancy"]))
    for dinv in (4, 8, 16):
        r = spectral.lemma_residual(
            "kernel2d", fl2, {"x0": x0k, "zeta": 0.7, "delta": 1.0 / dinv, "N": N, "K": 32}
        )
        ptsd.append((1.0 / dinv, r.norms["discrepancy"]))
    results["kernel2d"] = {
        "zeta_points": ptsz,
        "zeta_slope": spectral.slope_fit(ptsz).slope,
        "delta_points": ptsd,
        "delta_slope": spectral.slope_fit(ptsd).slope,
    }

    outdir.write("lemma_scalings.json", _json_bytes(results))
    lines = ["kind,parameter,value,norm"]
    for kind, rec in results.items():
        for key in ("points", "zeta_points", "delta_points"):
            if key in rec:
                pname = "zeta" if "zeta" in key or kind == "inimage3d" else "delta"
                for p, v in rec[key]:
                    lines.append(f"{kind},{pname},{p:.17g},{v:.17g}")
    outdir.write("lemma_scalings.csv", "\n".join(lines) + "\n")
    for kind, rec in results.items():
        slopes = {k: v for k, v in rec.items() if k.endswith("slope")}
        print(f"{kind}: {slopes}")
    return 0


def _cmd_oracle_compare(cfg: RunConfig, outdir: OutputDir) -> int:
    fl = flows.get_flow(cfg.flow, **cfg.flow_params)
    comp = oracle.compare_growth(
        fl,
        "bump",
        np.asarray(cfg.x0, dtype=float),
        cfg.zeta,
        np.asarray(cfg.xi0, dtype=float),
        cfg.deltas,
        [float(t) for t in cfg.t_grid],
        cfg.resolution,
        cfg.dt,
        step=cfg.step,
    )
    import io as _io

    buf = _io.StringIO()
    comp.to_csv(buf)
    outdir.write("oracle_compare.csv", buf.getvalue())
    outdir.write(
        "oracle_compare.json",
        _json_bytes({"rows": comp.rows, "summary": {
            "max_gap_by_delta": {str(k): v for k, v in comp.summary["max_gap_by_delta"].items()},
            "gap_shrinks_with_delta": comp.summary["gap_shrinks_with_delta"],
        }}),
    )
    outdir.write("oracle_compare.gp", _gnuplot_script("oracle_compare.csv", 3, "oracle vs predicted"))
    for d, g in sorted(comp.summary["max_gap_by_delta"].items()):
        print(f"delta={d:g}: max relative gap {g:.4f}")
    print(f"gap shrinks as delta decreases: {comp.summary['gap_shrinks_with_delta']}")
    return 0


_COMMANDS = {
    "catalog": _cmd_catalog,
    "exponents": _cmd_exponents,
    "trajectory": _cmd_trajectory,
    "verify-lemmas": _cmd_verify_lemmas,
    "oracle-compare": _cmd_oracle_compare,
    "verify-flow": _cmd_verify_flow,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluidex", description=__doc__)
    p.add_argument("command", choices=sorted(_COMMANDS))
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--flow")
    p.add_argument("--flow-param", action="append", metavar="NAME=VALUE")
    p.add_argument("--classes", type=lambda s: s.split(","))
    p.add_argument("--horizons", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--out")
    p.add_argument("--t-final", type=float, dest="t_final")
    p.add_argument("--x0", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--xi0", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--b0", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--t-grid", type=lambda s: [float(x) for x in s.split(",")], dest="t_grid")
    p.add_argument("--zeta", type=float)
    p.add_argument("--deltas", type=lambda s: [float(x) for x in s.split(",")])
    return p


def run(cfg: RunConfig) -> int:
    """Execute a validated config; returns the exit status."""
    fn = _COMMANDS.get(cfg.command)
    if fn is None:
        raise ConfigurationError(f"unknown command {cfg.command!r}")
    if cfg.command in ("catalog",):
        outdir = OutputDir(cfg.out) if cfg.out else None
        status = fn(cfg, outdir)
        if outdir is not None:
            outdir.manifest(cfg)
        return status
    outdir = OutputDir(cfg.out)
    status = fn(cfg, outdir)
    outdir.manifest(cfg)
    return status


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        file_data = load_config_file(args.config) if args.config else {}
        cfg = _merge_config(file_data, args)
        return run(cfg)
    except (ConfigurationError, UnsupportedClassError, UnsupportedOperationError,
            ResolutionError, ContractViolationError, HypothesisViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalBlowupError,) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except FluidexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
