"""The two-step oscillation/drift process and its 1-D Hamiltonian limit.

State ``(h, u)``: ``h`` is the (scaled) displacement along the top Hessian
eigenvector, ``u`` the scaled offset of the effective LR from the stability
threshold.  In the continuous limit ``x = log|h|`` and ``v = -u`` follow
``x'' = -U'(x)`` with ``U(x) = K^2 exp(2x) - c_b x``, on the time scale
``s = 2 * eta * (number of transitions)``.
"""

from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

__all__ = [
    "DriftState",
    "HamiltonianParams",
    "drift_transition",
    "simulate",
    "DriftTrajectory",
    "energy",
    "potential",
    "hamiltonian",
    "ham_ode_step",
    "ham_rk4_step",
    "Orbit",
    "phase_portrait",
    "period_boundaries",
    "average_h2",
]

MAX_ETA = 0.1


@dataclass(frozen=True)
class DriftState:
    h: float
    u: float
    grad_norm_sq: float = 0.0
    phi: Optional[np.ndarray] = None


@dataclass(frozen=True)
class HamiltonianParams:
    K: float
    c_b: float

    def __post_init__(self):
        if not self.c_b > 0:
            raise ValueError("c_b must be > 0")
        if not self.K**2 >= 2.0 * self.c_b * (1.0 - 1e-12):
            raise ValueError("K^2 must be >= 2 c_b")

    @classmethod
    def from_grad(cls, c_b, grad_norm_sq=0.0):
        return cls(K=float(np.sqrt(2.0 * c_b + grad_norm_sq)), c_b=float(c_b))

    @property
    def x_star(self):
        """Minimum of the potential, ``log|h|`` at ``h^2 = c_b / (2 K^2)``."""
        return 0.5 * np.log(self.c_b / (2.0 * self.K**2))


def _cb(params):
    return params.c_b if isinstance(params, HamiltonianParams) else float(params)


def drift_transition(S, eta, params, field: Optional[Callable] = None, retract: Optional[Callable] = None):
    """Ideal two-step transition ``S -> S'``.

    ``params`` is a :class:`HamiltonianParams` or just ``c_b``; ``K`` is always
    rebuilt from ``S.grad_norm_sq`` (or the attached field).

    ``h' = (1 - 2 eta u) h``, ``u' = u + 4 eta h^2 K^2 - 2 eta c_b`` with
    ``K^2 = 2 c_b + ||g||^2``.  When ``S.phi`` is set, ``field(phi)`` must
    return the manifold gradient ``g`` of ``log lambda1``; then
    ``phi' = retract(phi - 2 eta^2 h^2 g)`` and ``grad_norm_sq`` is refreshed.
    Otherwise ``S.grad_norm_sq`` is held frozen.
    """
    if not 0.0 < eta <= MAX_ETA:
        raise ValueError(f"eta must lie in (0, {MAX_ETA}], got {eta}")
    c_b = _cb(params)
    h, u = S.h, S.u
    if S.phi is not None:
        if field is None:
            raise ValueError("an attached manifold point needs a gradient field")
        g = field(S.phi)
        gsq = float(g @ g)
    else:
        gsq = S.grad_norm_sq
    K2 = 2.0 * c_b + gsq
    h_new = (1.0 - 2.0 * eta * u) * h
    u_new = u + 4.0 * eta * h * h * K2 - 2.0 * eta * c_b
    if S.phi is None:
        return replace(S, h=h_new, u=u_new)
    phi = S.phi - 2.0 * eta**2 * h * h * g
    phi = retract(phi) if retract is not None else phi / np.linalg.norm(phi)
    g_new = field(phi)
    return DriftState(h=h_new, u=u_new, grad_norm_sq=float(g_new @ g_new), phi=phi)


@dataclass
class DriftTrajectory:
    h: np.ndarray
    u: np.ndarray
    grad_norm_sq: np.ndarray
    phi: Optional[List[np.ndarray]] = None


def simulate(S0, eta, params, steps, field=None, retract=None, keep_phi_every=1):
    """Run ``steps`` transitions; returns arrays of length ``steps + 1``."""
    hs = np.empty(steps + 1)
    us = np.empty(steps + 1)
    gs = np.empty(steps + 1)
    phis = [] if S0.phi is not None else None
    S = S0
    if S0.phi is not None and field is not None:
        g0 = field(S0.phi)
        S = replace(S0, grad_norm_sq=float(g0 @ g0))
    for t in range(steps + 1):
        hs[t], us[t], gs[t] = S.h, S.u, S.grad_norm_sq
        if phis is not None and (t % keep_phi_every == 0 or t == steps):
            phis.append(S.phi)
        if t < steps:
            S = drift_transition(S, eta, params, field=field, retract=retract)
    return DriftTrajectory(h=hs, u=us, grad_norm_sq=gs, phi=phis)


def energy(S, c_b):
    """``u^2 / 2 + (2 c_b + ||g||^2) h^2 + c_b log(1 / |h|)``."""
    c_b = _cb(c_b)
    if S.h == 0.0:
        raise ValueError("energy is undefined at h = 0")
    K2 = 2.0 * c_b + S.grad_norm_sq
    return 0.5 * S.u**2 + K2 * S.h**2 - c_b * np.log(abs(S.h))


def potential(x, params):
    return params.K**2 * np.exp(2.0 * x) - params.c_b * x


def _force(x, params):
    return -(2.0 * params.K**2 * np.exp(2.0 * x) - params.c_b)


def hamiltonian(x, v, params):
    return 0.5 * v * v + potential(x, params)


def ham_ode_step(x, v, dtau, params):
    """One velocity-Verlet (leapfrog) step of ``x'' = -U'(x)``."""
    v_half = v + 0.5 * dtau * _force(x, params)
    x_new = x + dtau * v_half
    return x_new, v_half + 0.5 * dtau * _force(x_new, params)


def ham_rk4_step(x, v, dtau, params):
    """Classical RK4 step of the same system, for cross-checks."""
    def f(x, v):
        return v, _force(x, params)

    k1 = f(x, v)
    k2 = f(x + 0.5 * dtau * k1[0], v + 0.5 * dtau * k1[1])
    k3 = f(x + 0.5 * dtau * k2[0], v + 0.5 * dtau * k2[1])
    k4 = f(x + dtau * k3[0], v + dtau * k3[1])
    return (x + dtau / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            v + dtau / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


@dataclass
class Orbit:
    energy: float
    period: float
    x: np.ndarray
    v: np.ndarray


def _orbit_period(params, v0, dtau, max_steps):
    # start at the potential minimum moving right; the orbit closes when x
    # crosses x_star upwards again
    xs = params.x_star
    x, v = xs, v0
    for k in range(1, max_steps + 1):
        x_new, v_new = ham_ode_step(x, v, dtau, params)
        if k > 2 and x < xs <= x_new:
            return (k - 1 + (xs - x) / (x_new - x)) * dtau
        x, v = x_new, v_new
    raise RuntimeError("orbit did not close")


def phase_portrait(params, energy_levels: Sequence[float], samples_per_orbit=200, dtau=1e-3,
                   max_steps=10_000_000):
    """Closed orbits in the ``(log|h|, -u)`` plane, one per energy level.

    Each orbit starts at the potential minimum with positive velocity and is
    integrated by leapfrog over one period, using a step that divides the
    period exactly.  Energy levels must exceed the potential minimum.
    """
    u_min = potential(params.x_star, params)
    orbits = []
    for E in energy_levels:
        if not E > u_min:
            raise ValueError(f"energy {E} is not above the potential minimum {u_min}")
        v0 = np.sqrt(2.0 * (E - u_min))
        T = _orbit_period(params, v0, dtau, max_steps)
        m = max(samples_per_orbit, int(np.ceil(T / dtau)))
        step = T / m
        xs = np.empty(m + 1)
        vs = np.empty(m + 1)
        x, v = params.x_star, v0
        xs[0], vs[0] = x, v
        for k in range(1, m + 1):
            x, v = ham_ode_step(x, v, step, params)
            xs[k], vs[k] = x, v
        idx = np.linspace(0, m, samples_per_orbit + 1).round().astype(int)
        orbits.append(Orbit(energy=float(E), period=T, x=xs[idx], v=vs[idx]))
    return orbits


def period_boundaries(u):
    """Indices ``t`` with ``u[t] > 0 >= u[t+1]`` (positive-to-negative crossings)."""
    u = np.asarray(u, dtype=float)
    return np.flatnonzero((u[:-1] > 0.0) & (u[1:] <= 0.0))


def average_h2(h, u, window=None, min_periods=1):
    """Mean of ``h^2`` over the complete oscillation periods in ``window``.

    ``window`` is an optional ``(start, stop)`` slice.  Periods are delimited
    by positive-to-negative crossings of ``u``.  A trajectory at rest
    (``u`` identically zero) has no periods; its plain mean is returned.
    """
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    if window is not None:
        h, u = h[window[0]:window[1]], u[window[0]:window[1]]
    if np.all(u == 0.0):
        return float(np.mean(h * h))
    b = period_boundaries(u)
    if b.size < min_periods + 1:
        raise ValueError(f"window covers {max(b.size - 1, 0)} full periods, need {min_periods}")
    seg = h[b[0] + 1 : b[-1] + 1]
    return float(np.mean(seg * seg))
