"""Renormalized bicharacteristic amplitude system along steady flows.

The raw system transports a particle position x, a wave covector xi and an
amplitude vector b:

    dx/dt  = u(x)
    dxi/dt = -J(x)^T xi
    db/dt  = -J(x) b + 2 <J(x) b, xi> xi / |xi|^2

with J = du/dx.  Near a hyperbolic stagnation point |b| grows like
exp(rate * t), which overflows float64 before t ~ 700.  We therefore
integrate the exactly equivalent log/unit-vector form obtained by
substituting xi = exp(rho) eta and b = exp(beta) c with |eta| = |c| = 1:

    deta/dt  = -J^T eta + <J^T eta, eta> eta
    drho/dt  = -<J^T eta, eta>
    dc/dt    = F - <F, c> c,        F = -J c + 2 <J c, eta> eta
    dbeta/dt = <F, c>

The right-hand side is homogeneous of degree zero in xi, so rho decouples
and beta(t) = log |b(t)| is available at any horizon without overflow.
After every step eta and c are re-unitized and the (tiny) norm drift is
folded into rho and beta, which keeps the representation exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalBlowupError
from .flows import SteadyFlow, wrap
from .rk4 import checkpoint_indices, n_steps_for

CLASS_TAGS = ("full", "star3", "f3", "star2", "f2_complement", "f2_aligned")


def perp(v: np.ndarray) -> np.ndarray:
    """Counterclockwise rotation by 90 degrees of a 2D vector (batch-safe)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


@dataclass(frozen=True)
class AdmissibleSample:
    """Initial condition (x0, xi0, b0) with unit, mutually orthogonal xi0, b0."""

    x0: np.ndarray
    xi0: np.ndarray
    b0: np.ndarray
    class_tag: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "xi0", np.asarray(self.xi0, dtype=float))
        object.__setattr__(self, "b0", np.asarray(self.b0, dtype=float))
        if self.class_tag not in CLASS_TAGS:
            raise ConfigurationError(f"unknown class tag {self.class_tag!r}")

    def validate(self, atol: float = 1e-12) -> None:
        if abs(np.linalg.norm(self.xi0) - 1.0) > atol or abs(np.linalg.norm(self.b0) - 1.0) > atol:
            raise ConfigurationError("xi0 and b0 must be unit vectors")
        if abs(float(np.dot(self.xi0, self.b0))) > atol:
            raise ConfigurationError("b0 must be orthogonal to xi0")


@dataclass
class BasState:
    """Batched renormalized state; leading axis indexes samples."""

    x: np.ndarray      # (m, n) positions
    eta: np.ndarray    # (m, n) unit xi-direction
    rho: np.ndarray    # (m,)   log |xi|
    c: np.ndarray      # (m, n) unit b-direction
    beta: np.ndarray   # (m,)   log |b|
    t: float


@dataclass
class BasTrajectory:
    times: np.ndarray        # (T,)
    x: np.ndarray            # (T, m, n)
    eta: np.ndarray
    rho: np.ndarray          # (T, m)
    c: np.ndarray
    beta: np.ndarray


@dataclass
class BasResult:
    state: BasState
    checkpoint_times: Optional[np.ndarray] = None
    checkpoint_beta: Optional[np.ndarray] = None   # (n_checkpoints, m)
    ortho_max: float = 0.0
    trajectory: Optional[BasTrajectory] = None


@dataclass(frozen=True)
class TransportMatrix:
    """Amplitude transport matrix; annihilates xi0 and acts linearly on xi0-perp."""

    A0: np.ndarray
    x0: np.ndarray
    xi0: np.ndarray
    t: float


def bas_rhs(flow: SteadyFlow, state: BasState):
    """Time derivative of (x, eta, rho, c, beta)."""
    dx, deta, drho, dc, dbeta = _rhs_arrays(flow, state.x, state.eta, state.c)
    return BasState(dx, deta, drho, dc, dbeta, t=1.0)


def _rhs_arrays(flow: SteadyFlow, x, eta, c):
    J = flow.jac(x)
    JTeta = np.einsum("...ji,...j->...i", J, eta)
    s1 = np.einsum("...i,...i->...", JTeta, eta)
    deta = s1[..., None] * eta - JTeta
    drho = -s1
    Jc = np.einsum("...ij,...j->...i", J, c)
    a = np.einsum("...i,...i->...", Jc, eta)
    d = np.einsum("...i,...i->...", Jc, c)
    ce = np.einsum("...i,...i->...", c, eta)
    dbeta = -d + 2.0 * a * ce
    dc = -Jc + 2.0 * a[..., None] * eta - dbeta[..., None] * c
    dx = flow.vel(x)
    return dx, deta, drho, dc, dbeta


def _blowup_error(x, beta, t):
    bad = np.where(~(np.all(np.isfinite(x), axis=-1) & np.isfinite(beta)))[0]
    err = NumericalBlowupError(
        f"non-finite state during integration (sample indices {bad.tolist()})", t=t
    )
    err.sample_indices = bad.tolist()
    return err


def _samples_to_batch(samples, dim: int):
    if isinstance(samples, AdmissibleSample):
        samples = [samples]
    m = len(samples)
    x = np.empty((m, dim))
    eta = np.empty((m, dim))
    c = np.empty((m, dim))
    for i, s in enumerate(samples):
        x[i] = s.x0
        eta[i] = s.xi0
        c[i] = s.b0
    return x, eta, c


def integrate_bas(
    flow: SteadyFlow,
    samples,
    t_final: float,
    step: float = 1e-3,
    rho0: float = 0.0,
    checkpoints: Optional[Sequence[float]] = None,
    record_trajectory: bool = False,
    trajectory_stride: int = 1,
) -> BasResult:
    """Integrate the renormalized system for one sample or a batch.

    Checkpoint times are snapped to the nearest step multiple.  The running
    maximum of |<c, eta>| over all steps and samples is tracked as an
    integration-quality diagnostic (it is conserved at zero for admissible
    data).  Single 2D trajectories take a scalar fast path when the flow
    provides closed-form scalar evaluators.
    """
    if t_final < 0:
        raise ConfigurationError("t_final must be non-negative")
    if step <= 0:
        raise ConfigurationError("step must be positive")
    x, eta, c = _samples_to_batch(samples, flow.dim)
    if x.shape[0] == 1 and flow.dim == 2 and flow.vel_jac_scalar is not None:
        return _integrate_scalar_2d(
            flow, x[0], eta[0], c[0], t_final, step, rho0,
            checkpoints, record_trajectory, trajectory_stride,
        )
    m = x.shape[0]
    rho = np.full(m, float(rho0))
    beta = np.zeros(m)

    nsteps = n_steps_for(t_final, step)
    ck_idx = checkpoint_indices(checkpoints, step) if checkpoints is not None else None
    ck_beta = np.empty((len(ck_idx), m)) if ck_idx is not None else None
    ck_pos = {int(k): j for j, k in enumerate(ck_idx)} if ck_idx is not None else {}
    if ck_idx is not None and np.any(ck_idx > nsteps):
        raise ConfigurationError("checkpoint beyond t_final")

    traj = None
    if record_trajectory:
        keep = list(range(0, nsteps + 1, trajectory_stride))
        if keep[-1] != nsteps:
            keep.append(nsteps)
        traj = {
            "idx": set(keep),
            "times": [],
            "x": [],
            "eta": [],
            "rho": [],
            "c": [],
            "beta": [],
        }

    ortho_max = float(np.max(np.abs(np.einsum("...i,...i->...", c, eta)))) if m else 0.0

    def capture(k):
        if ck_beta is not None and k in ck_pos:
            ck_beta[ck_pos[k]] = beta
        if traj is not None and k in traj["idx"]:
            traj["times"].append(k * step)
            traj["x"].append(wrap(x.copy()))
            traj["eta"].append(eta.copy())
            traj["rho"].append(rho.copy())
            traj["c"].append(c.copy())
            traj["beta"].append(beta.copy())

    capture(0)
    h = step
    for k in range(1, nsteps + 1):
        # RK4 on the tuple (x, eta, rho, c, beta); unrolled to keep the
        # per-step numpy call count low
        d1 = _rhs_arrays(flow, x, eta, c)
        d2 = _rhs_arrays(flow, x + 0.5 * h * d1[0], eta + 0.5 * h * d1[1], c + 0.5 * h * d1[3])
        d3 = _rhs_arrays(flow, x + 0.5 * h * d2[0], eta + 0.5 * h * d2[1], c + 0.5 * h * d2[3])
        d4 = _rhs_arrays(flow, x + h * d3[0], eta + h * d3[1], c + h * d3[3])
        x = x + (h / 6.0) * (d1[0] + 2.0 * d2[0] + 2.0 * d3[0] + d4[0])
        eta = eta + (h / 6.0) * (d1[1] + 2.0 * d2[1] + 2.0 * d3[1] + d4[1])
        rho = rho + (h / 6.0) * (d1[2] + 2.0 * d2[2] + 2.0 * d3[2] + d4[2])
        c = c + (h / 6.0) * (d1[3] + 2.0 * d2[3] + 2.0 * d3[3] + d4[3])
        beta = beta + (h / 6.0) * (d1[4] + 2.0 * d2[4] + 2.0 * d3[4] + d4[4])

        # re-unitize, folding norm drift into the log magnitudes
        eta_norm = np.sqrt(np.einsum("...i,...i->...", eta, eta))
        c_norm = np.sqrt(np.einsum("...i,...i->...", c, c))
        rho = rho + np.log(eta_norm)
        beta = beta + np.log(c_norm)
        eta = eta / eta_norm[..., None]
        c = c / c_norm[..., None]

        if m:
            ortho = float(np.max(np.abs(np.einsum("...i,...i->...", c, eta))))
            if ortho > ortho_max:
                ortho_max = ortho
        if (k & 255) == 0 and not (np.all(np.isfinite(beta)) and np.all(np.isfinite(x))):
            raise _blowup_error(x, beta, k * step)
        capture(k)

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(eta)) and np.all(np.isfinite(beta))):
        raise _blowup_error(x, beta, nsteps * step)

    state = BasState(wrap(x), eta, rho, c, beta, t=nsteps * step)
    trajectory = None
    if traj is not None:
        trajectory = BasTrajectory(
            times=np.array(traj["times"]),
            x=np.array(traj["x"]),
            eta=np.array(traj["eta"]),
            rho=np.array(traj["rho"]),
            c=np.array(traj["c"]),
            beta=np.array(traj["beta"]),
        )
    return BasResult(
        state=state,
        checkpoint_times=(ck_idx * step if ck_idx is not None else None),
        checkpoint_beta=ck_beta,
        ortho_max=ortho_max,
        trajectory=trajectory,
    )


def _integrate_scalar_2d(
    flow, x_in, eta_in, c_in, t_final, step, rho0,
    checkpoints, record_trajectory, trajectory_stride,
) -> BasResult:
    """Plain-float RK4 for one 2D trajectory; same update rule and
    renormalization as the batch path."""
    import math

    vel_jac = flow.vel_jac_scalar
    x1, x2 = float(x_in[0]), float(x_in[1])
    e1, e2 = float(eta_in[0]), float(eta_in[1])
    c1, c2 = float(c_in[0]), float(c_in[1])
    rho = float(rho0)
    beta = 0.0

    def rhs(x1, x2, e1, e2, c1, c2):
        u1, u2, J11, J12, J21, J22 = vel_jac(x1, x2)
        jte1 = J11 * e1 + J21 * e2
        jte2 = J12 * e1 + J22 * e2
        s1 = jte1 * e1 + jte2 * e2
        de1 = s1 * e1 - jte1
        de2 = s1 * e2 - jte2
        jc1 = J11 * c1 + J12 * c2
        jc2 = J21 * c1 + J22 * c2
        a = jc1 * e1 + jc2 * e2
        d = jc1 * c1 + jc2 * c2
        ce = c1 * e1 + c2 * e2
        dbeta = -d + 2.0 * a * ce
        dc1 = -jc1 + 2.0 * a * e1 - dbeta * c1
        dc2 = -jc2 + 2.0 * a * e2 - dbeta * c2
        return u1, u2, de1, de2, -s1, dc1, dc2, dbeta

    nsteps = n_steps_for(t_final, step)
    ck_idx = checkpoint_indices(checkpoints, step) if checkpoints is not None else None
    if ck_idx is not None and np.any(ck_idx > nsteps):
        raise ConfigurationError("checkpoint beyond t_final")
    ck_pos = {int(k): j for j, k in enumerate(ck_idx)} if ck_idx is not None else {}
    ck_beta = np.empty((len(ck_idx), 1)) if ck_idx is not None else None

    traj = None
    if record_trajectory:
        keep = set(range(0, nsteps + 1, trajectory_stride))
        keep.add(nsteps)
        traj = {"idx": keep, "rows": []}

    ortho_max = abs(c1 * e1 + c2 * e2)

    def capture(k):
        if ck_beta is not None and k in ck_pos:
            ck_beta[ck_pos[k], 0] = beta
        if traj is not None and k in traj["idx"]:
            traj["rows"].append(
                (k * step, x1 % (2 * math.pi), x2 % (2 * math.pi), e1, e2, rho, c1, c2, beta)
            )

    capture(0)
    h = step
    for k in range(1, nsteps + 1):
        k1 = rhs(x1, x2, e1, e2, c1, c2)
        k2 = rhs(
            x1 + 0.5 * h * k1[0], x2 + 0.5 * h * k1[1],
            e1 + 0.5 * h * k1[2], e2 + 0.5 * h * k1[3],
            c1 + 0.5 * h * k1[5], c2 + 0.5 * h * k1[6],
        )
        k3 = rhs(
            x1 + 0.5 * h * k2[0], x2 + 0.5 * h * k2[1],
            e1 + 0.5 * h * k2[2], e2 + 0.5 * h * k2[3],
            c1 + 0.5 * h * k2[5], c2 + 0.5 * h * k2[6],
        )
        k4 = rhs(
            x1 + h * k3[0], x2 + h * k3[1],
            e1 + h * k3[2], e2 + h * k3[3],
            c1 + h * k3[5], c2 + h * k3[6],
        )
        w = h / 6.0
        x1 += w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        x2 += w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        e1 += w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        e2 += w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        rho += w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
        c1 += w * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5])
        c2 += w * (k1[6] + 2.0 * k2[6] + 2.0 * k3[6] + k4[6])
        beta += w * (k1[7] + 2.0 * k2[7] + 2.0 * k3[7] + k4[7])

        en = math.sqrt(e1 * e1 + e2 * e2)
        cn = math.sqrt(c1 * c1 + c2 * c2)
        rho += math.log(en)
        beta += math.log(cn)
        e1 /= en
        e2 /= en
        c1 /= cn
        c2 /= cn

        ortho = abs(c1 * e1 + c2 * e2)
        if ortho > ortho_max:
            ortho_max = ortho
        if not (math.isfinite(beta) and math.isfinite(x1) and math.isfinite(x2)):
            raise NumericalBlowupError("non-finite state during integration", t=k * step)
        capture(k)

    state = BasState(
        x=wrap(np.array([[x1, x2]])),
        eta=np.array([[e1, e2]]),
        rho=np.array([rho]),
        c=np.array([[c1, c2]]),
        beta=np.array([beta]),
        t=nsteps * step,
    )
    trajectory = None
    if traj is not None:
        rows = np.array(traj["rows"])
        trajectory = BasTrajectory(
            times=rows[:, 0],
            x=rows[:, 1:3][:, None, :],
            eta=rows[:, 3:5][:, None, :],
            rho=rows[:, 5][:, None],
            c=rows[:, 6:8][:, None, :],
            beta=rows[:, 8][:, None],
        )
    return BasResult(
        state=state,
        checkpoint_times=(ck_idx * step if ck_idx is not None else None),
        checkpoint_beta=ck_beta,
        ortho_max=float(ortho_max),
        trajectory=trajectory,
    )


def orthonormal_complement(xi0: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of the plane orthogonal to xi0.

    Returns an array of shape (dim-1, dim).
    """
    xi0 = np.asarray(xi0, dtype=float)
    n = xi0.shape[0]
    if n == 2:
        return perp(xi0)[None, :]
    axis = np.argmin(np.abs(xi0))
    e = np.zeros(3)
    e[axis] = 1.0
    q1 = np.cross(xi0, e)
    q1 /= np.linalg.norm(q1)
    q2 = np.cross(xi0, q1)
    q2 /= np.linalg.norm(q2)
    return np.stack([q1, q2])


def transport_matrix(
    flow: SteadyFlow, x0, xi0, t: float, step: float = 1e-3
) -> TransportMatrix:
    """Amplitude transport matrix assembled column-by-column.

    The initial datum is the projector onto xi0-perp, so the xi0 column is
    zero for all time (the amplitude equation is linear in b) and the
    remaining columns are amplitude solutions started from an orthonormal
    basis of xi0-perp.
    """
    x0 = np.asarray(x0, dtype=float)
    xi0 = np.asarray(xi0, dtype=float)
    xi0 = xi0 / np.linalg.norm(xi0)
    basis = orthonormal_complement(xi0)
    samples = [AdmissibleSample(x0, xi0, q) for q in basis]
    res = integrate_bas(flow, samples, t, step=step)
    n = flow.dim
    A0 = np.zeros((n, n))
    for i, q in enumerate(basis):
        b_t = np.exp(res.state.beta[i]) * res.state.c[i]
        A0 += np.outer(b_t, q)
    return TransportMatrix(A0=A0, x0=x0, xi0=xi0, t=res.state.t)


def evolved_base_point(flow: SteadyFlow, x0, xi0, t: float, step: float = 1e-3):
    """Position and unit covector direction after time t (for cocycle checks)."""
    x0 = np.asarray(x0, dtype=float)
    xi0 = np.asarray(xi0, dtype=float)
    xi0 = xi0 / np.linalg.norm(xi0)
    basis = orthonormal_complement(xi0)
    res = integrate_bas(flow, [AdmissibleSample(x0, xi0, basis[0])], t, step=step)
    return res.state.x[0], res.state.eta[0]
