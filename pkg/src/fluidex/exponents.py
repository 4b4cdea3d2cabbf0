"""Growth exponents of the amplitude system over sampled admissible sets.

For a perturbation class the quantity of interest is

    theta(t) = sup over sampled initial conditions of log |b(t)|

and the associated exponent mu = slope of theta over the tail of the horizon
list.  Every reported exponent is a lower bound for the true supremum over
the full admissible set, since the sup is taken over a finite sample.

Sampling is deterministic given (flow, class, n, seed): positions come from a
seeded scrambled Halton stream filtered by the class predicate, directions
from a seeded generator, and growth-optimal seeds (hyperbolic stagnation
eigen-pairs, and covector-aligned points on declared separatrix lines for the
aligned class) are appended deterministically.  Random sampling alone almost
never hits the measure-zero stable manifolds where the sharpest growth
lives, which is why the curated points are injected.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .bas import CLASS_TAGS, AdmissibleSample, integrate_bas, orthonormal_complement, perp
from .errors import (
    ConfigurationError,
    EmptyClassWarning,
    NumericalBlowupError,
    UnsupportedClassError,
)
from .flows import SteadyFlow, in_support, vorticity_gradient

SUPPORT_TOL = 1e-10

# classes whose admissible sets jointly cover everything, per dimension
COVERING_CLASSES = {2: ("star2", "f2_complement"), 3: ("star3", "f3")}


@dataclass
class ExponentEstimate:
    class_tag: str
    mu_hat: float
    horizons: list
    theta_log: list
    per_horizon_rate: list
    rates_monotone_decreasing: bool
    slope_residual: float
    fit_window_start: int
    n_samples: int
    n_injected: int
    seed: int
    step: float

    def to_json_dict(self) -> dict:
        return {
            "class": self.class_tag,
            "mu_hat": self.mu_hat,
            "horizons": list(self.horizons),
            "theta_log": list(self.theta_log),
            "per_horizon_rate": list(self.per_horizon_rate),
            "rates_monotone_decreasing": bool(self.rates_monotone_decreasing),
            "slope_residual": self.slope_residual,
            "fit_window_start": self.fit_window_start,
            "n_samples": self.n_samples,
            "n_injected": self.n_injected,
            "seed": self.seed,
            "step": self.step,
        }


@dataclass
class ClassReport:
    flow_name: str
    flow_params: dict
    dim: int
    estimates: dict            # class tag -> ExponentEstimate
    skipped: dict              # class tag -> reason
    max_relation: dict
    bounds: dict               # class tag -> {t: exp(mu t)}

    def to_json_dict(self) -> dict:
        return {
            "flow": {"name": self.flow_name, "params": dict(self.flow_params), "dim": self.dim},
            "classes": {k: v.to_json_dict() for k, v in sorted(self.estimates.items())},
            "skipped": dict(sorted(self.skipped.items())),
            "max_relation": self.max_relation,
            "ress_lower_bounds": {
                k: {str(t): v for t, v in sorted(vals.items())}
                for k, vals in sorted(self.bounds.items())
            },
        }


def _class_seed(seed: int, class_tag: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(CLASS_TAGS.index(class_tag),))


def _check_class_available(flow: SteadyFlow, class_tag: str) -> None:
    if class_tag in ("star3", "f3") and flow.dim != 3:
        raise UnsupportedClassError(f"class {class_tag!r} requires a 3D flow")
    if class_tag in ("star2", "f2_complement", "f2_aligned", "f2") and flow.dim != 2:
        raise UnsupportedClassError(f"class {class_tag!r} requires a 2D flow")
    if class_tag == "f3" and flow.omega_support.kind == "all":
        raise UnsupportedClassError(
            "supp(omega) is the whole domain; f3 undefined (factor-class hypothesis)"
        )


def _predicate(flow: SteadyFlow, class_tag: str, x: np.ndarray) -> np.ndarray:
    if class_tag == "full":
        return np.ones(x.shape[:-1], dtype=bool)
    if class_tag == "star3":
        return in_support(flow, x, "omega", SUPPORT_TOL)
    if class_tag == "f3":
        return ~in_support(flow, x, "omega", SUPPORT_TOL)
    if class_tag == "star2":
        return in_support(flow, x, "grad_omega", SUPPORT_TOL)
    if class_tag == "f2_complement":
        return ~in_support(flow, x, "grad_omega", SUPPORT_TOL)
    if class_tag == "f2_aligned":
        g = vorticity_gradient(flow, x)
        return np.linalg.norm(g, axis=-1) > SUPPORT_TOL
    raise ConfigurationError(f"unknown class tag {class_tag!r}")


def _random_directions(flow, x, class_tag, rng):
    """Unit (xi0, b0) pairs: uniform over the admissible fibre, or
    gradient-aligned for the aligned class."""
    m, dim = x.shape
    if class_tag == "f2_aligned":
        g = vorticity_gradient(flow, x)
        xi = g / np.linalg.norm(g, axis=-1, keepdims=True)
        return xi, perp(xi)
    if dim == 2:
        ang = rng.uniform(0.0, 2.0 * math.pi, m)
        xi = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        sign = rng.integers(0, 2, m) * 2.0 - 1.0
        return xi, sign[:, None] * perp(xi)
    z = rng.standard_normal((m, 3))
    xi = z / np.linalg.norm(z, axis=-1, keepdims=True)
    phi = rng.uniform(0.0, 2.0 * math.pi, m)
    b = np.empty_like(xi)
    for i in range(m):
        q = orthonormal_complement(xi[i])
        b[i] = math.cos(phi[i]) * q[0] + math.sin(phi[i]) * q[1]
    return xi, b


def _injected_samples(flow: SteadyFlow, class_tag: str) -> list[AdmissibleSample]:
    out: list[AdmissibleSample] = []
    if class_tag != "f2_aligned":
        for sp in flow.stagnation_points:
            x = np.asarray(sp.x, dtype=float)
            if not bool(_predicate(flow, class_tag, x[None, :])[0]):
                continue
            xi = np.asarray(sp.unstable_dir, dtype=float)
            b = np.asarray(sp.stable_dir, dtype=float)
            out.append(
                AdmissibleSample(x, xi / np.linalg.norm(xi), b / np.linalg.norm(b), class_tag)
            )
    else:
        # separatrix points flowing into a stagnation point, with the wave
        # covector aligned to the vorticity gradient; these realize the
        # hyperbolic growth rate inside the aligned class
        for pt in flow.stable_line_points:
            x = np.asarray(pt, dtype=float)
            if flow.grad_vort is None:
                break
            g = vorticity_gradient(flow, x)
            if np.linalg.norm(g) <= SUPPORT_TOL:
                continue
            xi = g / np.linalg.norm(g)
            if flow.dim == 2:
                b = perp(xi)
            else:
                b = np.array([-xi[1], xi[0], 0.0])
                b = b / np.linalg.norm(b)
            out.append(AdmissibleSample(x, xi, b, class_tag))
    return out


def _subclass_tags(flow: SteadyFlow, class_tag: str) -> list[str]:
    """Constituent plain classes of an aggregate tag, skipping unavailable ones."""
    if class_tag == "full":
        subs = []
        for sub in COVERING_CLASSES[flow.dim]:
            try:
                _check_class_available(flow, sub)
                subs.append(sub)
            except UnsupportedClassError:
                continue
        return subs
    if class_tag == "f2":
        _check_class_available(flow, "f2")
        return ["f2_complement", "f2_aligned"]
    return [class_tag]


def _sample_class(flow: SteadyFlow, class_tag: str, n: int, seed: int):
    """(samples, n_injected) for one plain or aggregate class, no warnings."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    subs = _subclass_tags(flow, class_tag)
    if len(subs) != 1 or subs[0] != class_tag:
        samples: list[AdmissibleSample] = []
        n_injected = 0
        for sub in subs:
            part, inj = _sample_class(flow, sub, n, seed)
            n_injected += inj
            if class_tag == "full":
                part = [AdmissibleSample(s.x0, s.xi0, s.b0, "full") for s in part]
            samples.extend(part)
        return samples, n_injected

    _check_class_available(flow, class_tag)
    ss = _class_seed(seed, class_tag)
    rng = np.random.default_rng(ss)
    halton = qmc.Halton(d=flow.dim, scramble=True, seed=rng)

    accepted: list[np.ndarray] = []
    total = 0
    batch = max(n, 64)
    max_draws = 1000 * n
    while total < max_draws:
        cand = halton.random(batch) * (2.0 * math.pi)
        total += batch
        ok = _predicate(flow, class_tag, cand)
        if np.any(ok):
            accepted.append(cand[ok])
        have = sum(a.shape[0] for a in accepted)
        if have >= n:
            break
        if total >= 64 * batch and have == 0:
            break
    xs = np.concatenate(accepted)[:n] if accepted else np.empty((0, flow.dim))

    samples = []
    if xs.shape[0]:
        xi, b = _random_directions(flow, xs, class_tag, rng)
        samples = [
            AdmissibleSample(xs[i], xi[i], b[i], class_tag) for i in range(xs.shape[0])
        ]
    injected = _injected_samples(flow, class_tag)
    samples.extend(injected)
    return samples, len(injected)


def sample_admissible(
    flow: SteadyFlow, class_tag: str, n: int, seed: int
) -> list[AdmissibleSample]:
    """Deterministic admissible sample of a class; may be empty (with warning).

    The aggregate tags "full" and "f2" are unions of the covering subclass
    samples (each drawn with its own substream), so suprema over them split
    exactly into the subclass suprema.
    """
    samples, _ = _sample_class(flow, class_tag, n, seed)
    if not samples:
        warnings.warn(
            f"class {class_tag!r} has no admissible points on flow {flow.name!r}",
            EmptyClassWarning,
        )
    return samples


def theta_sup(
    flow: SteadyFlow,
    class_tag: str,
    t: float,
    samples: Sequence[AdmissibleSample],
    step: float = 1e-3,
) -> float:
    """log of the sampled supremum of |b(t)| over the class."""
    if not samples:
        raise UnsupportedClassError(f"empty sample set for class {class_tag!r}")
    samples = list(samples)
    try:
        res = integrate_bas(flow, samples, t, step=step)
    except NumericalBlowupError as exc:
        idx = getattr(exc, "sample_indices", [])
        if idx:
            bad = samples[idx[0]]
            exc.args = (
                f"{exc.args[0]}; first offending sample: x0={bad.x0.tolist()}, "
                f"xi0={bad.xi0.tolist()}, b0={bad.b0.tolist()}",
            )
        raise
    return float(np.max(res.state.beta))


def _fit_window_start(n_horizons: int) -> int:
    return min(n_horizons // 2, n_horizons - 2)


def _slope_fit_tail(horizons: np.ndarray, theta: np.ndarray):
    start = _fit_window_start(len(horizons))
    hs = horizons[start:]
    th = theta[start:]
    A = np.stack([hs, np.ones_like(hs)], axis=-1)
    coef, *_ = np.linalg.lstsq(A, th, rcond=None)
    resid = float(np.max(np.abs(th - A @ coef)))
    return float(coef[0]), resid, start


def estimate_exponent(
    flow: SteadyFlow,
    class_tag: str,
    horizons: Sequence[float],
    n: int,
    seed: int,
    step: float = 1e-3,
) -> ExponentEstimate:
    """Exponent from the tail slope of theta over the horizon list.

    Per-horizon values theta(t)/t over-estimate the limiting exponent
    (log-suprema are subadditive along trajectories of the transport
    cocycle), so a non-monotone-decreasing rate sequence is flagged in the
    diagnostics rather than treated as an error.
    """
    horizons = [float(h) for h in horizons]
    if len(horizons) < 2 or any(h2 <= h1 for h1, h2 in zip(horizons, horizons[1:])):
        raise ConfigurationError("horizons must be strictly increasing with >= 2 entries")
    if horizons[0] <= 0:
        raise ConfigurationError("horizons must be positive")
    samples, n_injected = _sample_class(flow, class_tag, n, seed)
    if not samples:
        raise UnsupportedClassError(
            f"class {class_tag!r} has no admissible points on flow {flow.name!r}"
        )
    res = integrate_bas(flow, samples, horizons[-1], step=step, checkpoints=horizons)
    theta = np.max(res.checkpoint_beta, axis=1)
    mu_hat, resid, start = _slope_fit_tail(np.array(horizons), theta)
    rates = theta / np.array(horizons)
    monotone = bool(np.all(np.diff(rates) <= 1e-12))
    return ExponentEstimate(
        class_tag=class_tag,
        mu_hat=mu_hat,
        horizons=list(horizons),
        theta_log=[float(v) for v in theta],
        per_horizon_rate=[float(v) for v in rates],
        rates_monotone_decreasing=monotone,
        slope_residual=resid,
        fit_window_start=start,
        n_samples=len(samples),
        n_injected=n_injected,
        seed=int(seed),
        step=float(step),
    )


def ress_lower_bound(est: ExponentEstimate, t: float) -> float:
    """exp(mu_hat * t): sampled lower bound for the essential spectral radius."""
    if t <= 0:
        raise ConfigurationError("t must be positive")
    return math.exp(est.mu_hat * t)


@dataclass
class ReportConfig:
    classes: Optional[list] = None      # None: all classes available on the flow
    horizons: Sequence[float] = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    n: int = 200
    seed: int = 1
    step: float = 1e-3
    bound_times: Sequence[float] = (1.0,)
    max_relation_tol: float = 0.1
    theta_tol: float = 1e-9


def available_classes(flow: SteadyFlow) -> list[str]:
    out = ["full"]
    if flow.dim == 3:
        out.append("star3")
        if flow.omega_support.kind != "all":
            out.append("f3")
    else:
        out.extend(["star2", "f2_complement", "f2_aligned", "f2"])
    return out


def composite_report(flow: SteadyFlow, config: ReportConfig) -> ClassReport:
    """Estimates for all requested classes plus max-relation diagnostics.

    The full-class sample set is the union of the covering subclass sets, so
    the sampled theta splits exactly (up to float roundoff) into the max of
    the subclass thetas; the same holds for the aggregate f2 class and its
    two sub-suprema.
    """
    tags = list(config.classes) if config.classes is not None else available_classes(flow)
    estimates: dict = {}
    skipped: dict = {}
    for tag in tags:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EmptyClassWarning)
                estimates[tag] = estimate_exponent(
                    flow, tag, config.horizons, config.n, config.seed, config.step
                )
        except UnsupportedClassError as exc:
            if config.classes is not None:
                raise
            skipped[tag] = str(exc)

    max_relation: dict = {}
    covering = [c for c in COVERING_CLASSES[flow.dim] if c in estimates]
    if "full" in estimates and covering:
        mu_parts = {c: estimates[c].mu_hat for c in covering}
        mu_max = max(mu_parts.values())
        gap = abs(estimates["full"].mu_hat - mu_max)
        theta_gap = 0.0
        for j in range(len(estimates["full"].theta_log)):
            part = max(estimates[c].theta_log[j] for c in covering)
            theta_gap = max(theta_gap, abs(estimates["full"].theta_log[j] - part))
        max_relation["full_vs_covering"] = {
            "parts": mu_parts,
            "mu_full": estimates["full"].mu_hat,
            "mu_gap": gap,
            "within_tol": bool(gap <= config.max_relation_tol),
            "theta_max_gap": theta_gap,
            "theta_within_tol": bool(theta_gap <= config.theta_tol),
        }
    if "f2" in estimates:
        subs = [c for c in ("f2_complement", "f2_aligned") if c in estimates]
        if subs:
            theta_gap = 0.0
            for j in range(len(estimates["f2"].theta_log)):
                part = max(estimates[c].theta_log[j] for c in subs)
                theta_gap = max(theta_gap, abs(estimates["f2"].theta_log[j] - part))
            max_relation["f2_vs_subclasses"] = {
                "parts": {c: estimates[c].mu_hat for c in subs},
                "mu_f2": estimates["f2"].mu_hat,
                "theta_max_gap": theta_gap,
                "theta_within_tol": bool(theta_gap <= config.theta_tol),
            }

    bounds = {
        tag: {float(t): ress_lower_bound(est, t) for t in config.bound_times}
        for tag, est in estimates.items()
    }
    return ClassReport(
        flow_name=flow.name,
        flow_params=dict(flow.params),
        dim=flow.dim,
        estimates=estimates,
        skipped=skipped,
        max_relation=max_relation,
        bounds=bounds,
    )
