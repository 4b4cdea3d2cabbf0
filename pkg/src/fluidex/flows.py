"""Analytic steady Euler flows on the 2- and 3-torus.

Every catalog entry is defined by closed-form evaluators (velocity, Jacobian,
vorticity, vorticity gradient), so downstream integrations carry no
interpolation error.  The torus has period 2*pi along every axis; integer
wave vectors are then exactly the Fourier modes.  Growth exponents are
invariant under rescaling of the lattice, so nothing downstream depends on
this convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, NumericalBlowupError, UnsupportedOperationError
from .rk4 import n_steps_for, rk4_step

TWO_PI = 2.0 * math.pi


def wrap(x: np.ndarray) -> np.ndarray:
    """Reduce coordinates mod 2*pi into [0, 2*pi)."""
    return np.mod(x, TWO_PI)


def wrap_centered(x: np.ndarray) -> np.ndarray:
    """Reduce displacements mod 2*pi into [-pi, pi)."""
    return np.mod(x + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class SupportSpec:
    """Declared support of a scalar/vector field on the torus.

    kind "all" and "empty" are exact analytic declarations; "band" restricts
    one coordinate to [lo, hi]; "threshold" falls back to |field(x)| > tol.
    """

    kind: str
    axis: int = 0
    lo: float = 0.0
    hi: float = 0.0

    def contains(self, x: np.ndarray, field_mag: Optional[np.ndarray], tol: float):
        if self.kind == "all":
            return np.ones(x.shape[:-1], dtype=bool)
        if self.kind == "empty":
            return np.zeros(x.shape[:-1], dtype=bool)
        if self.kind == "band":
            # wraparound-safe: point is in the band iff its offset from lo,
            # taken mod 2*pi, does not exceed the band width
            width = np.mod(self.hi - self.lo, TWO_PI)
            return np.mod(x[..., self.axis] - self.lo, TWO_PI) <= width
        if self.kind == "threshold":
            if field_mag is None:
                raise ConfigurationError("threshold support needs field values")
            return field_mag > tol
        raise ConfigurationError(f"unknown support kind {self.kind!r}")


@dataclass(frozen=True)
class StagnationPoint:
    """Hyperbolic stagnation point with its stretching data.

    `unstable_dir` is the eigenvector of the velocity Jacobian with eigenvalue
    +rate, `stable_dir` the one with -rate.  The wave covector aligned with
    the unstable direction contracts at rate `rate` while the amplitude
    aligned with the stable direction grows at the same rate.
    """

    x: tuple
    rate: float
    unstable_dir: tuple
    stable_dir: tuple


@dataclass(frozen=True)
class SteadyFlow:
    """Steady Euler velocity field with exact derivatives and support data.

    `vel_jac_scalar`, when present for a 2D entry, evaluates velocity and
    Jacobian from python floats: (x1, x2) -> (u1, u2, J11, J12, J21, J22).
    Single-trajectory integrations use it to avoid per-step array overhead.
    """

    name: str
    dim: int
    params: dict
    vel: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    vort: Callable[[np.ndarray], np.ndarray]
    grad_vort: Optional[Callable[[np.ndarray], np.ndarray]]
    omega_support: SupportSpec
    grad_omega_support: Optional[SupportSpec]
    max_speed: float
    stagnation_points: tuple = ()
    stable_line_points: tuple = ()
    vel_jac_scalar: Optional[Callable] = None

    def cache_key(self) -> tuple:
        return (self.name, tuple(sorted(self.params.items())))

    @property
    def planar(self) -> bool:
        return self.grad_vort is not None


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ConfigurationError(f"expected points with {dim} components, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("point coordinates must be finite")
    return x


def velocity(flow: SteadyFlow, x) -> np.ndarray:
    return flow.vel(_as_points(x, flow.dim))


def jacobian(flow: SteadyFlow, x) -> np.ndarray:
    return flow.jac(_as_points(x, flow.dim))


def vorticity(flow: SteadyFlow, x) -> np.ndarray:
    return flow.vort(_as_points(x, flow.dim))


def vorticity_gradient(flow: SteadyFlow, x) -> np.ndarray:
    if flow.grad_vort is None:
        raise UnsupportedOperationError(
            f"flow {flow.name!r} is not planar; scalar vorticity gradient undefined"
        )
    return flow.grad_vort(_as_points(x, flow.dim))


def in_support(flow: SteadyFlow, x, which: str, tol: float = 1e-10):
    """True iff x lies in the declared support of omega or grad(omega)."""
    x = _as_points(x, flow.dim)
    if which == "omega":
        spec = flow.omega_support
        mag = None
        if spec.kind == "threshold":
            w = vorticity(flow, x)
            mag = np.abs(w) if flow.dim == 2 else np.linalg.norm(w, axis=-1)
    elif which == "grad_omega":
        if flow.grad_vort is None:
            raise UnsupportedOperationError(
                f"flow {flow.name!r} has no scalar vorticity gradient"
            )
        spec = flow.grad_omega_support
        mag = None
        if spec.kind == "threshold":
            mag = np.linalg.norm(vorticity_gradient(flow, x), axis=-1)
    else:
        raise ConfigurationError(f"unknown support field {which!r}")
    return spec.contains(x, mag, tol)


def flow_map(flow: SteadyFlow, x0, t: float, step: float = 1e-3) -> np.ndarray:
    """Advect x0 along the flow for (signed) time t with fixed-step RK4."""
    if step <= 0:
        raise ConfigurationError("step must be positive")
    x = _as_points(x0, flow.dim).copy()
    sign = 1.0 if t >= 0 else -1.0
    nsteps = n_steps_for(abs(t), step)
    rhs = (lambda s: (flow.vel(s[0]),)) if sign > 0 else (lambda s: (-flow.vel(s[0]),))
    state = (x,)
    for k in range(nsteps):
        state = rk4_step(rhs, state, step)
        if (k & 127) == 0 and not np.all(np.isfinite(state[0])):
            raise NumericalBlowupError("flow map left the finite domain", t=(k + 1) * step)
    if not np.all(np.isfinite(state[0])):
        raise NumericalBlowupError("flow map left the finite domain", t=abs(t))
    return wrap(state[0])


def flow_map_with_checkpoints(flow: SteadyFlow, x0, times, step: float = 1e-3,
                              backward: bool = False) -> list[np.ndarray]:
    """Positions at each checkpoint time of one forward/backward integration."""
    x = _as_points(x0, flow.dim).copy()
    times = list(times)
    if any(t < 0 for t in times):
        raise ConfigurationError("checkpoint times must be non-negative")
    idx = [int(round(t / step)) for t in times]
    nsteps = max(idx) if idx else 0
    sgn = -1.0 if backward else 1.0
    rhs = lambda s: (sgn * flow.vel(s[0]),)
    state = (x,)
    out: dict[int, np.ndarray] = {}
    if 0 in idx:
        out[0] = wrap(state[0]).copy()
    for k in range(1, nsteps + 1):
        state = rk4_step(rhs, state, step)
        if k in idx:
            out[k] = wrap(state[0]).copy()
    return [out[i] for i in idx]


# --- catalog entries -------------------------------------------------------


def _constant_factory(dim: int):
    def make(**params) -> SteadyFlow:
        defaults = {"c1": 1.0, "c2": 2.0, "c3": 0.5}
        keys = ["c1", "c2", "c3"][:dim]
        p = {k: float(params.pop(k, defaults[k])) for k in keys}
        if params:
            raise ConfigurationError(f"unknown parameters {sorted(params)}")
        c = np.array([p[k] for k in keys])

        def vel(x):
            return np.broadcast_to(c, x.shape).copy()

        def jac(x):
            return np.zeros(x.shape[:-1] + (dim, dim))

        def vort(x):
            if dim == 2:
                return np.zeros(x.shape[:-1])
            return np.zeros(x.shape[:-1] + (3,))

        def grad_vort(x):
            return np.zeros(x.shape)

        c1, c2 = float(c[0]), float(c[1])

        def vel_jac_scalar(x1, x2):
            return c1, c2, 0.0, 0.0, 0.0, 0.0

        return SteadyFlow(
            name="constant" if dim == 2 else "constant3d",
            dim=dim,
            params=p,
            vel=vel,
            jac=jac,
            vort=vort,
            grad_vort=grad_vort if dim == 2 else None,
            omega_support=SupportSpec("empty"),
            grad_omega_support=SupportSpec("empty") if dim == 2 else None,
            max_speed=float(np.linalg.norm(c)),
            vel_jac_scalar=vel_jac_scalar if dim == 2 else None,
        )

    return make


def _make_shear(**params) -> SteadyFlow:
    if params:
        raise ConfigurationError(f"unknown parameters {sorted(params)}")

    def vel(x):
        u = np.zeros(x.shape)
        u[..., 0] = np.sin(x[..., 1])
        return u

    def jac(x):
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = np.cos(x[..., 1])
        return J

    def vort(x):
        return -np.cos(x[..., 1])

    def grad_vort(x):
        g = np.zeros(x.shape)
        g[..., 1] = np.sin(x[..., 1])
        return g

    def vel_jac_scalar(x1, x2):
        return math.sin(x2), 0.0, 0.0, math.cos(x2), 0.0, 0.0

    return SteadyFlow(
        name="shear",
        dim=2,
        params={},
        vel=vel,
        jac=jac,
        vort=vort,
        grad_vort=grad_vort,
        omega_support=SupportSpec("all"),
        grad_omega_support=SupportSpec("all"),
        max_speed=1.0,
        vel_jac_scalar=vel_jac_scalar,
    )


def _make_cellular(**params) -> SteadyFlow:
    if params:
        raise ConfigurationError(f"unknown parameters {sorted(params)}")

    def vel(x):
        u = np.empty(x.shape)
        u[..., 0] = np.sin(x[..., 0]) * np.cos(x[..., 1])
        u[..., 1] = -np.cos(x[..., 0]) * np.sin(x[..., 1])
        return u

    def jac(x):
        c1, s1 = np.cos(x[..., 0]), np.sin(x[..., 0])
        c2, s2 = np.cos(x[..., 1]), np.sin(x[..., 1])
        J = np.empty(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = c1 * c2
        J[..., 0, 1] = -s1 * s2
        J[..., 1, 0] = s1 * s2
        J[..., 1, 1] = -c1 * c2
        return J

    def vort(x):
        return 2.0 * np.sin(x[..., 0]) * np.sin(x[..., 1])

    def grad_vort(x):
        g = np.empty(x.shape)
        g[..., 0] = 2.0 * np.cos(x[..., 0]) * np.sin(x[..., 1])
        g[..., 1] = 2.0 * np.sin(x[..., 0]) * np.cos(x[..., 1])
        return g

    pi = math.pi
    stag = (
        StagnationPoint((0.0, 0.0), 1.0, (1.0, 0.0), (0.0, 1.0)),
        StagnationPoint((pi, pi), 1.0, (1.0, 0.0), (0.0, 1.0)),
        StagnationPoint((0.0, pi), 1.0, (0.0, 1.0), (1.0, 0.0)),
        StagnationPoint((pi, 0.0), 1.0, (0.0, 1.0), (1.0, 0.0)),
    )
    # points on the invariant separatrix lines, each flowing into a
    # stagnation point; used to seed growth-optimal admissible samples
    stable_pts = (
        (0.0, 1.1),
        (0.0, 2.2),
        (pi, pi - 1.1),
        (1.1, pi),
        (2.2, 0.0),
    )
    def vel_jac_scalar(x1, x2):
        c1, s1 = math.cos(x1), math.sin(x1)
        c2, s2 = math.cos(x2), math.sin(x2)
        return s1 * c2, -c1 * s2, c1 * c2, -s1 * s2, s1 * s2, -c1 * c2

    return SteadyFlow(
        name="cellular",
        dim=2,
        params={},
        vel=vel,
        jac=jac,
        vort=vort,
        grad_vort=grad_vort,
        omega_support=SupportSpec("all"),
        grad_omega_support=SupportSpec("all"),
        max_speed=1.0,
        stagnation_points=stag,
        stable_line_points=stable_pts,
        vel_jac_scalar=vel_jac_scalar,
    )


def _make_abc(**params) -> SteadyFlow:
    p = {"A": 1.0, "B": 1.0, "C": 1.0}
    for k in list(params):
        if k not in p:
            raise ConfigurationError(f"unknown parameter {k!r}")
        p[k] = float(params[k])
    A, B, C = p["A"], p["B"], p["C"]

    def vel(x):
        u = np.empty(x.shape)
        u[..., 0] = A * np.sin(x[..., 2]) + C * np.cos(x[..., 1])
        u[..., 1] = B * np.sin(x[..., 0]) + A * np.cos(x[..., 2])
        u[..., 2] = C * np.sin(x[..., 1]) + B * np.cos(x[..., 0])
        return u

    def jac(x):
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 1] = -C * np.sin(x[..., 1])
        J[..., 0, 2] = A * np.cos(x[..., 2])
        J[..., 1, 0] = B * np.cos(x[..., 0])
        J[..., 1, 2] = -A * np.sin(x[..., 2])
        J[..., 2, 0] = -B * np.sin(x[..., 0])
        J[..., 2, 1] = C * np.cos(x[..., 1])
        return J

    # Beltrami field: curl u = u
    return SteadyFlow(
        name="abc",
        dim=3,
        params=p,
        vel=vel,
        jac=jac,
        vort=vel,
        grad_vort=None,
        omega_support=SupportSpec("all"),
        grad_omega_support=None,
        max_speed=math.sqrt((abs(A) + abs(C)) ** 2 + (abs(A) + abs(B)) ** 2 + (abs(B) + abs(C)) ** 2),
    )


def _bump_profile(s: np.ndarray) -> np.ndarray:
    """C^3 bump (1-s^2)^4 on |s|<1, zero outside."""
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    out[m] = (1.0 - s[m] ** 2) ** 4
    return out


def _bump_profile_d1(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    out[m] = -8.0 * s[m] * (1.0 - s[m] ** 2) ** 3
    return out


def _bump_profile_d2(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    out[m] = -8.0 * (1.0 - s[m] ** 2) ** 2 * (1.0 - 7.0 * s[m] ** 2)
    return out


def _make_bump_shear(**params) -> SteadyFlow:
    p = {"center": math.pi, "halfwidth": 1.0, "amplitude": 1.0}
    for k in list(params):
        if k not in p:
            raise ConfigurationError(f"unknown parameter {k!r}")
        p[k] = float(params[k])
    x0, w, amp = p["center"], p["halfwidth"], p["amplitude"]
    if not (0 < w < math.pi):
        raise ConfigurationError("halfwidth must lie in (0, pi)")

    def s_of(x2):
        return wrap_centered(x2 - x0) / w

    def vel(x):
        u = np.zeros(x.shape)
        u[..., 0] = amp * _bump_profile(s_of(x[..., 1]))
        return u

    def jac(x):
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 1] = (amp / w) * _bump_profile_d1(s_of(x[..., 1]))
        return J

    def vort(x):
        wv = np.zeros(x.shape)
        wv[..., 2] = -(amp / w) * _bump_profile_d1(s_of(x[..., 1]))
        return wv

    def grad_vort(x):
        g = np.zeros(x.shape)
        g[..., 1] = -(amp / w ** 2) * _bump_profile_d2(s_of(x[..., 1]))
        return g

    band = SupportSpec("band", axis=1, lo=float(np.mod(x0 - w, TWO_PI)), hi=float(np.mod(x0 + w, TWO_PI)))
    return SteadyFlow(
        name="bump_shear",
        dim=3,
        params=p,
        vel=vel,
        jac=jac,
        vort=vort,
        grad_vort=grad_vort,
        omega_support=band,
        grad_omega_support=band,
        max_speed=abs(amp),
    )


def planar_lift(flow2d: SteadyFlow, name: str) -> SteadyFlow:
    """Embed a 2D entry as a 3D flow with zero third component."""
    if flow2d.dim != 2:
        raise ConfigurationError("planar_lift expects a 2D flow")

    def vel(x):
        u = np.zeros(x.shape)
        u[..., :2] = flow2d.vel(x[..., :2])
        return u

    def jac(x):
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., :2, :2] = flow2d.jac(x[..., :2])
        return J

    def vort(x):
        w = np.zeros(x.shape)
        w[..., 2] = flow2d.vort(x[..., :2])
        return w

    def grad_vort(x):
        g = np.zeros(x.shape)
        g[..., :2] = flow2d.grad_vort(x[..., :2])
        return g

    stag = tuple(
        StagnationPoint(
            sp.x + (0.0,), sp.rate, sp.unstable_dir + (0.0,), sp.stable_dir + (0.0,)
        )
        for sp in flow2d.stagnation_points
    )
    stable_pts = tuple(pt + (0.0,) for pt in flow2d.stable_line_points)
    return SteadyFlow(
        name=name,
        dim=3,
        params=dict(flow2d.params),
        vel=vel,
        jac=jac,
        vort=vort,
        grad_vort=grad_vort if flow2d.grad_vort is not None else None,
        omega_support=flow2d.omega_support,
        grad_omega_support=flow2d.grad_omega_support,
        max_speed=flow2d.max_speed,
        stagnation_points=stag,
        stable_line_points=stable_pts,
    )


_CATALOG: dict[str, Callable[..., SteadyFlow]] = {
    "constant": _constant_factory(2),
    "constant3d": _constant_factory(3),
    "shear": _make_shear,
    "cellular": _make_cellular,
    "abc": _make_abc,
    "bump_shear": _make_bump_shear,
    "cellular3d": lambda **p: planar_lift(_make_cellular(**p), "cellular3d"),
    "shear3d": lambda **p: planar_lift(_make_shear(**p), "shear3d"),
}


def get_flow(name: str, **params) -> SteadyFlow:
    if name not in _CATALOG:
        raise ConfigurationError(
            f"unknown flow {name!r}; available: {', '.join(sorted(_CATALOG))}"
        )
    return _CATALOG[name](**params)


def catalog_entries() -> list[str]:
    return sorted(_CATALOG)


# --- residual verification -------------------------------------------------


def _spectral_wavenumbers(N: int, dim: int):
    k = np.fft.fftfreq(N, 1.0 / N)
    return np.meshgrid(*([k] * dim), indexing="ij")


def verify_steady_euler(flow: SteadyFlow, grid_resolution: int) -> dict:
    """Spectral max-norm residuals of div(u) and of P_sol(u . grad u).

    Both vanish (to roundoff) for an exact steady Euler solution.
    """
    N = int(grid_resolution)
    if N < 32 or (N & (N - 1)) != 0:
        raise ConfigurationError("grid_resolution must be a power of two >= 32")
    dim = flow.dim
    axes = [TWO_PI * np.arange(N) / N] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack(mesh, axis=-1)
    U = flow.vel(X)
    J = flow.jac(X)
    ks = _spectral_wavenumbers(N, dim)

    div_hat = np.zeros_like(np.fft.fftn(U[..., 0]))
    for i in range(dim):
        div_hat = div_hat + 1j * ks[i] * np.fft.fftn(U[..., i])
    div_residual = float(np.max(np.abs(np.fft.ifftn(div_hat))))

    adv = np.einsum("...ij,...j->...i", J, U)
    adv_hat = np.stack([np.fft.fftn(adv[..., i]) for i in range(dim)], axis=0)
    k2 = sum(k ** 2 for k in ks)
    k2safe = np.where(k2 == 0, 1.0, k2)
    kdotv = sum(ks[i] * adv_hat[i] for i in range(dim))
    proj = np.empty_like(adv_hat)
    for i in range(dim):
        proj[i] = adv_hat[i] - ks[i] * kdotv / k2safe
    # k = 0: the gradient part has no mean, so the mean survives projection;
    # a steady solution has zero-mean advection anyway
    euler_residual = float(
        max(np.max(np.abs(np.fft.ifftn(proj[i]))) for i in range(dim))
    )
    return {"div_residual": div_residual, "euler_residual": euler_residual}
