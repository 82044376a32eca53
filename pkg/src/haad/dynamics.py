"""Integrators, rollouts, and phase-space diagnostics.

The dynamical state is the pair (q, p).  Rollouts release a sample's
projected state from rest (p0 = 0) and evolve it for T steps under the
force of the learned system potential, recording the Hamiltonian
H = 0.5 ||p||^2 + V(q) plus its kinetic/potential split at every step.

Three integrators are provided:

* ``symplectic_euler`` -- semi-implicit update, momentum before position,
  with the learned inverse-mass preconditioner applied only in the
  position update.  Volume-preserving for constant mass.
* ``euler`` -- explicit first-order baseline (position reads the old
  momentum), which accumulates unbounded energy drift.
* ``rk4`` -- classical fourth-order Runge-Kutta on the coupled system,
  four force evaluations per step, inverse mass frozen at the step start.

Diagnostics: a finite-difference Jacobian-determinant probe for the
volume-preservation property, the omitted variable-mass-term ratio, and
potential-landscape slices along random orthonormal directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericFault, Tape, dot, row_sum, square, sum_all, value_of
from .potential import mass_inv, project_photo, project_state, system_force, system_potential, v_photo, v_total

__all__ = [
    "PhysState",
    "RolloutConfig",
    "Trajectory",
    "RolloutError",
    "ProbeError",
    "LinearSlope",
    "Quadratic",
    "INTEGRATORS",
    "FORCE_EVALS_PER_STEP",
    "hamiltonian",
    "step_symplectic",
    "step_euler",
    "step_rk4",
    "rollout",
    "integrate",
    "jacobian_det_probe",
    "omitted_term_ratio",
    "slice_directions",
    "slice_grid",
    "landscape_slice",
]


class RolloutError(RuntimeError):
    pass


class ProbeError(RuntimeError):
    pass


@dataclass
class PhysState:
    """Position/momentum pair; fields are arrays or tape Vars of equal shape."""

    q: object
    p: object


@dataclass
class RolloutConfig:
    steps: int = 4
    eta: float = 0.4
    integrator: str = "symplectic_euler"
    mass_mode: str = "learned"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("rollout needs at least one step")
        if self.eta <= 0:
            raise ValueError("step size must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator '{self.integrator}'")
        if self.mass_mode not in ("learned", "identity"):
            raise ValueError(f"unknown mass mode '{self.mass_mode}'")


@dataclass
class Trajectory:
    """T+1 recorded states with per-step energy bookkeeping."""

    states: list = field(default_factory=list)
    hamiltonian: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    potential: list = field(default_factory=list)
    grad_evals: int = 0

    @property
    def steps(self):
        return len(self.states) - 1


# ---------------------------------------------------------------------------
# analytic test potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearSlope:
    """V(q) = sum(g * q): constant force -g everywhere."""

    g: np.ndarray

    def value(self, q):
        return float(np.sum(self.g * q))

    def force(self, q):
        return -np.asarray(self.g, dtype=np.float64)


@dataclass(frozen=True)
class Quadratic:
    """V(q) = 0.5 k ||q - center||^2: restoring force toward the center."""

    k: float
    center: np.ndarray

    def value(self, q):
        d = q - self.center
        return float(0.5 * self.k * np.sum(d * d))

    def force(self, q):
        return -self.k * (q - self.center)


# ---------------------------------------------------------------------------
# integrator steps
# ---------------------------------------------------------------------------

def hamiltonian(state, v_value):
    """Total energy 0.5 ||p||^2 + V."""
    return 0.5 * sum_all(square(state.p)) + v_value


def step_symplectic(state, force_fn, mass_fn, eta):
    """Semi-implicit Euler: momentum first, position with the new momentum."""
    p_next = state.p + eta * force_fn(state.q)
    q_next = state.q + eta * (mass_fn(state.q) * p_next)
    return PhysState(q_next, p_next)


def step_euler(state, force_fn, mass_fn, eta):
    """Explicit Euler: position update reads the old momentum."""
    q_next = state.q + eta * (mass_fn(state.q) * state.p)
    p_next = state.p + eta * force_fn(state.q)
    return PhysState(q_next, p_next)


def step_rk4(state, force_fn, mass_fn, eta):
    """Classical RK4 on (q' = M^-1 p, p' = F(q)); 4 force evaluations.

    The inverse mass is frozen at the step's initial position for all
    four stages, matching the position-update-only preconditioner contract.
    """
    minv = mass_fn(state.q)
    q, p = state.q, state.p
    half = 0.5 * eta
    k1p = force_fn(q)
    k1q = minv * p
    k2p = force_fn(q + half * k1q)
    k2q = minv * (p + half * k1p)
    k3p = force_fn(q + half * k2q)
    k3q = minv * (p + half * k2p)
    k4p = force_fn(q + eta * k3q)
    k4q = minv * (p + eta * k3p)
    sixth = eta / 6.0
    q_next = q + sixth * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    p_next = p + sixth * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return PhysState(q_next, p_next)


INTEGRATORS = {
    "symplectic_euler": step_symplectic,
    "euler": step_euler,
    "rk4": step_rk4,
}

FORCE_EVALS_PER_STEP = {
    "symplectic_euler": 1,
    "euler": 1,
    "rk4": 4,
}


class _CountedForce:
    """Wraps a force function with an evaluation counter and finite check."""

    __slots__ = ("fn", "count")

    def __init__(self, fn):
        self.fn = fn
        self.count = 0

    def __call__(self, q):
        self.count += 1
        f = self.fn(q)
        fv = value_of(f)
        if not np.all(np.isfinite(fv)):
            raise NumericFault("non-finite force")
        return f


def _run(step_fn, state, force, mass_fn, v_fn, steps, eta):
    traj = Trajectory()

    def record(s):
        v = v_fn(s.q)
        k = 0.5 * sum_all(square(s.p))
        traj.states.append(s)
        traj.kinetic.append(k)
        traj.potential.append(v)
        traj.hamiltonian.append(k + v)

    record(state)
    for t in range(steps):
        try:
            state = step_fn(state, force, mass_fn, eta)
        except NumericFault as exc:
            raise RolloutError(f"rollout aborted at step {t}: {exc}") from exc
        record(state)
    traj.grad_evals = force.count
    return traj


def rollout(x, model, L, cfg: RolloutConfig) -> Trajectory:
    """Evolve a sample's projected state from rest under the learned potential.

    ``x`` and the model parameters may be plain arrays (inference) or tape
    Vars (training); the recorded trajectory carries the same kind.
    """
    if L.dim != value_of(x).shape[0]:
        raise ValueError(f"graph dim {L.dim} does not match sample patches {value_of(x).shape[0]}")
    q0 = project_state(x, model.heads)
    basis = project_photo(x, model.heads)
    photo = v_photo(basis)
    p0 = np.zeros_like(value_of(q0))

    cfgp = model.config
    force = _CountedForce(lambda q: system_force(L, q, cfgp))
    if cfg.mass_mode == "learned":
        mass_fn = lambda q: mass_inv(q, model.mass)
    else:
        mass_fn = lambda q: 1.0

    def v_fn(q):
        return system_potential(L, q, photo, cfgp)

    step_fn = INTEGRATORS[cfg.integrator]
    return _run(step_fn, PhysState(q0, p0), force, mass_fn, v_fn, cfg.steps, cfg.eta)


def integrate(pot, state0: PhysState, steps, eta, integrator="symplectic_euler", mass=1.0) -> Trajectory:
    """Rollout under an analytic test potential with constant mass."""
    force = _CountedForce(pot.force)
    step_fn = INTEGRATORS[integrator]
    return _run(step_fn, state0, force, lambda q: mass, pot.value, steps, eta)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def jacobian_det_probe(step_kind, pot, state: PhysState, eta, mass=1.0, h=1e-6):
    """Determinant of one step's numerically assembled phase-space Jacobian.

    Central differences (step h) of the map (q, p) -> (q', p') under a
    constant mass.  Restricted to small systems (total phase dim <= 8).
    """
    q0 = np.asarray(state.q, dtype=np.float64)
    p0 = np.asarray(state.p, dtype=np.float64)
    dim = q0.size
    if 2 * dim > 8:
        raise ValueError("probe restricted to total phase dimension <= 8")
    step_fn = INTEGRATORS[step_kind]

    def apply(z):
        q = z[:dim].reshape(q0.shape)
        p = z[dim:].reshape(p0.shape)
        out = step_fn(PhysState(q, p), pot.force, lambda _: mass, eta)
        return np.concatenate([np.ravel(out.q), np.ravel(out.p)])

    z0 = np.concatenate([q0.ravel(), p0.ravel()])
    jac = np.empty((2 * dim, 2 * dim))
    for i in range(2 * dim):
        zp = z0.copy()
        zm = z0.copy()
        zp[i] += h
        zm[i] -= h
        jac[:, i] = (apply(zp) - apply(zm)) / (2.0 * h)
    if not np.all(np.isfinite(jac)):
        raise ProbeError("singular difference stencil: non-finite Jacobian entries")
    return float(np.linalg.det(jac))


def omitted_term_ratio(state: PhysState, model, L, cfg: RolloutConfig):
    """Size of the omitted variable-mass momentum term relative to the force.

    Returns ||0.5 (d M^-1 / d q) p^2|| / ||grad V||, the numerator being the
    tape gradient in q of 0.5 * sum_i ||p_i||^2 * minv_i(q).  Exactly zero at
    rest or in identity-mass mode; +inf sentinel when the force vanishes.
    """
    if cfg.mass_mode != "learned":
        return 0.0
    q = np.asarray(value_of(state.q), dtype=np.float64)
    p = np.asarray(value_of(state.p), dtype=np.float64)
    grad_norm = float(np.linalg.norm(value_of(system_force(L, q, model.config))))
    if grad_norm < 1e-300:
        return math.inf
    tape = Tape()
    qv = tape.leaf(q)
    minv = mass_inv(qv, model.mass)
    p_row_sq = np.sum(p * p, axis=1, keepdims=True)
    scalar = 0.5 * dot(minv, p_row_sq)
    (g,) = tape.grad(scalar, [qv])
    return float(np.linalg.norm(g) / grad_norm)


def slice_directions(shape, seed):
    """Two seeded random orthonormal directions (Gram-Schmidt) of ``shape``."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(shape)
    v = rng.standard_normal(shape)
    u = u / np.linalg.norm(u)
    v = v - np.sum(u * v) * u
    v = v / np.linalg.norm(v)
    return u, v


def slice_grid(q0, value_fn, extent, resolution, seed=0):
    """Evaluate ``value_fn`` on a 2-D orthonormal slice around ``q0``.

    Rows are (a, b, value_fn(q0 + a u + b v)) for a, b on a resolution x
    resolution grid spanning [-extent, extent].  Also returns (u, v).
    """
    if resolution < 2:
        raise ValueError("slice resolution must be at least 2")
    u, v = slice_directions(np.asarray(q0).shape, seed)
    axis = np.linspace(-extent, extent, resolution)
    rows = []
    for a in axis:
        for b in axis:
            rows.append((float(a), float(b), float(value_fn(q0 + a * u + b * v))))
    return rows, u, v


def landscape_slice(x, model, L, extent, resolution, seed=0):
    """Learned-potential surface on a random 2-D slice through a sample's state."""
    x = np.asarray(x, dtype=np.float64)
    q0 = project_state(x, model.heads)
    basis = project_photo(x, model.heads)
    return slice_grid(q0, lambda q: v_total(L, q, basis, model.config),
                      extent, resolution, seed)
