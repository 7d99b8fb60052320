"""Minimizer-manifold tools: gradient-flow projection, tangent spaces, the
sharpness-reduction flow and the oscillation observables around it."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from ._validation import as_vector, unit
from .silo import DomainError, LinRegBN, MatComBN
from .spectra import SpectrumResult, hessian_spectrum

__all__ = [
    "ManifoldPoint",
    "DriftObservables",
    "FlowState",
    "ProjectionError",
    "default_loss_tol",
    "gf_project",
    "make_point",
    "tangent_project",
    "tangent_basis",
    "grad_log_sharpness",
    "sharpness_field",
    "flow_step",
    "integrate_flow",
    "extract_observables",
    "min_norm_oracle",
    "linreg_hessian_on_manifold",
]


class ProjectionError(RuntimeError):
    """Gradient-flow projection failed to reach the loss tolerance."""

    def __init__(self, message, final_loss=None, point=None):
        super().__init__(message)
        self.final_loss = final_loss
        self.point = point


@dataclass
class ManifoldPoint:
    phi: np.ndarray
    spectrum: SpectrumResult
    loss: float
    inner_steps: int = 0
    rank: Optional[int] = None

    @property
    def mu(self):
        return 2.0 / self.spectrum.lambda1


@dataclass
class DriftObservables:
    x: np.ndarray
    h: float
    h_scaled: float
    u: float
    misalignment: float
    p0_residual: float


@dataclass(frozen=True)
class FlowState:
    zeta: np.ndarray
    tau: float = 0.0
    c_b: float = 2.0


def default_loss_tol(oracle):
    return 1e-10 if isinstance(oracle, MatComBN) else 1e-14


def _spectrum(oracle, phi, rank, seed=0):
    n_eigs = rank + 1 if rank is not None and rank < oracle.dim else max(rank or 1, 2)
    return hessian_spectrum(oracle, phi, n_eigs=n_eigs, rank=rank, seed=seed, tol=1e-10)


def make_point(oracle, phi, rank=None, inner_steps=0, seed=0):
    """Wrap a point already on the manifold, computing its spectrum."""
    phi = unit(as_vector(phi, oracle.dim, "phi"))
    if rank is None:
        rank = getattr(oracle, "hessian_rank", None)
    spec = _spectrum(oracle, phi, rank, seed)
    return ManifoldPoint(phi=phi, spectrum=spec, loss=oracle.value(phi), inner_steps=inner_steps, rank=rank)


def gf_project(theta, oracle, loss_tol=None, inner_lr=0.005, max_inner_steps=1_000_000,
               method="pgd", rank=None, spectrum=True, seed=0):
    """Follow the gradient flow on the unit sphere from ``theta`` until the
    loss drops to ``loss_tol``.

    ``method="pgd"`` uses projected GD with the fixed step ``inner_lr``;
    ``method="ode"`` integrates the flow with a stiff solver instead.  The
    returned point carries its Hessian spectrum (top ``rank + 1`` pairs when
    the rank is known) unless ``spectrum=False``.

    Raises
    ------
    ProjectionError
        When the tolerance is not reached within ``max_inner_steps``.
    """
    theta = unit(as_vector(theta, oracle.dim, "theta"))
    if loss_tol is None:
        loss_tol = default_loss_tol(oracle)
    if rank is None:
        rank = getattr(oracle, "hessian_rank", None)
    steps = 0
    loss = oracle.value(theta)
    if method == "pgd":
        while loss > loss_tol:
            if steps >= max_inner_steps:
                raise ProjectionError(
                    f"projection stalled at loss {loss:.3e} after {steps} steps", loss, theta)
            x = theta - inner_lr * oracle.grad(theta)
            theta = x / np.linalg.norm(x)
            loss = oracle.value(theta)
            steps += 1
            if not np.isfinite(loss):
                raise ProjectionError("projection diverged", loss, theta)
    elif method == "ode":
        horizon = 10.0
        while loss > loss_tol:
            if steps >= max_inner_steps:
                raise ProjectionError(f"flow integration stalled at loss {loss:.3e}", loss, theta)
            sol = solve_ivp(lambda _t, y: -oracle.grad(y), (0.0, horizon), theta,
                            method="BDF", rtol=1e-11, atol=1e-14)
            steps += int(sol.nfev)
            theta = unit(sol.y[:, -1])
            loss = oracle.value(theta)
            horizon *= 2.0
    else:
        raise ValueError(f"unknown method {method!r}")
    if not spectrum:
        return ManifoldPoint(phi=theta, spectrum=None, loss=loss, inner_steps=steps, rank=rank)
    return ManifoldPoint(phi=theta, spectrum=_spectrum(oracle, theta, rank, seed), loss=loss,
                         inner_steps=steps, rank=rank)


def _rank_of(point, rank):
    rank = point.rank if rank is None else rank
    if rank is None:
        raise ValueError("the Hessian rank must be supplied")
    spec = point.spectrum
    if spec.vectors is None or spec.vectors.shape[1] < rank:
        raise ValueError(f"spectrum carries fewer than {rank} eigenpairs")
    return rank


def _check_separation(point, rank, gap_tol):
    vals = point.spectrum.values
    below = abs(vals[rank]) if vals.size > rank else 0.0
    if vals[rank - 1] - below <= gap_tol * abs(vals[0]):
        raise ValueError(
            f"spectral gap at rank {rank} too small to separate the null space "
            f"({vals[rank - 1]:.3e} vs {below:.3e})")


def tangent_project(point, v, rank=None, gap_tol=1e-6):
    """``(I - phi phi^T) P0 v`` with ``P0`` the projector onto the Hessian null space."""
    rank = _rank_of(point, rank)
    _check_separation(point, rank, gap_tol)
    V = point.spectrum.vectors[:, :rank]
    v = np.asarray(v, dtype=float)
    p0 = v - V @ (V.T @ v)
    return p0 - point.phi * (point.phi @ p0)


def tangent_basis(point, oracle=None, rank=None, gap_tol=1e-6):
    """Orthonormal basis of the manifold tangent space at ``point.phi``.

    Uses the oracle's own basis when it has one, otherwise the complement of
    the top ``rank`` eigenvectors (needs the dense path, small ``D``).
    """
    if oracle is not None and hasattr(oracle, "tangent_basis"):
        return oracle.tangent_basis(point.phi)
    rank = _rank_of(point, rank)
    _check_separation(point, rank, gap_tol)
    D = point.phi.shape[0]
    P = np.eye(D) - point.spectrum.vectors[:, :rank] @ point.spectrum.vectors[:, :rank].T
    P = P - np.outer(point.phi, point.phi @ P)
    U, sv, _ = np.linalg.svd(P)
    return U[:, sv > 0.5]


def _retract(oracle, x):
    if hasattr(oracle, "retract"):
        return oracle.retract(x)
    return gf_project(x, oracle, loss_tol=1e-20, spectrum=False).phi


def _log_lambda1(oracle, phi):
    return float(np.log(hessian_spectrum(oracle, phi, tol=1e-12).lambda1))


def grad_log_sharpness(point, oracle, fd_step=1e-4, method="auto", rank=None):
    """Tangent gradient of ``log lambda1`` along the minimizer manifold.

    ``method="fd"`` takes central differences of ``log lambda1`` at retracted
    probes ``phi +- fd_step * b`` for each tangent basis vector ``b``;
    ``"analytic"`` uses the oracle's closed form (linear regression);
    ``"auto"`` prefers the closed form when present.
    """
    phi = point.phi
    B = tangent_basis(point, oracle, rank)
    if method == "auto":
        method = "analytic" if hasattr(oracle, "log_sharpness_grad") else "fd"
    if method == "analytic":
        g = oracle.log_sharpness_grad(phi)
        return B @ (B.T @ g)
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    coeffs = np.empty(B.shape[1])
    for i in range(B.shape[1]):
        vals = []
        for sgn in (1.0, -1.0):
            probe = phi + sgn * fd_step * B[:, i]
            try:
                q = _retract(oracle, probe / np.linalg.norm(probe))
            except (DomainError, ProjectionError) as exc:
                raise RuntimeError("finite-difference probe left the basin") from exc
            if np.linalg.norm(q - phi) > 10.0 * fd_step:
                raise RuntimeError("finite-difference probe left the basin")
            vals.append(_log_lambda1(oracle, q))
        coeffs[i] = (vals[0] - vals[1]) / (2.0 * fd_step)
    return B @ coeffs


def sharpness_field(oracle, method="auto", fd_step=1e-4, rank=None):
    """Return ``zeta -> grad_Gamma log lambda1(zeta)`` for points on the manifold."""
    if rank is None:
        rank = getattr(oracle, "hessian_rank", None)
    use_analytic = method == "analytic" or (method == "auto" and hasattr(oracle, "log_sharpness_grad"))

    def field(zeta):
        if use_analytic and hasattr(oracle, "tangent_basis"):
            B = oracle.tangent_basis(zeta)
            return B @ (B.T @ oracle.log_sharpness_grad(zeta))
        point = make_point(oracle, zeta, rank)
        return grad_log_sharpness(point, oracle, fd_step=fd_step, method=method, rank=rank)

    return field


def _velocity(g, c_b):
    return -g / (4.0 + (2.0 / c_b) * float(g @ g))


def flow_step(state, dtau, oracle, field=None, loss_tol=None):
    """One RK4 step of the sharpness-reduction flow, then retraction.

    The flow is ``d zeta / d tau = -g / (4 + (2 / c_b) ||g||^2)`` with
    ``g = grad_Gamma log lambda1(zeta)``.  Intermediate stages are retracted
    onto the manifold before the field is evaluated.
    """
    if field is None:
        field = sharpness_field(oracle)
    if loss_tol is None:
        loss_tol = max(default_loss_tol(oracle), 1e-12)
    z = state.zeta
    c = state.c_b
    k1 = _velocity(field(z), c)
    k2 = _velocity(field(_retract(oracle, z + 0.5 * dtau * k1)), c)
    k3 = _velocity(field(_retract(oracle, z + 0.5 * dtau * k2)), c)
    k4 = _velocity(field(_retract(oracle, z + dtau * k3)), c)
    z_new = _retract(oracle, z + dtau / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    loss = oracle.value(z_new)
    if not loss <= loss_tol:
        raise ProjectionError(f"retraction left the manifold (loss {loss:.3e})", loss, z_new)
    return FlowState(zeta=z_new, tau=state.tau + dtau, c_b=c)


def integrate_flow(state, tau_end, dtau, oracle, field=None, callback: Optional[Callable] = None):
    """Integrate from ``state.tau`` to ``tau_end``; returns the list of states."""
    if field is None:
        field = sharpness_field(oracle)
    out = [state]
    n = int(np.ceil((tau_end - state.tau) / dtau - 1e-9))
    for _ in range(n):
        step = min(dtau, tau_end - state.tau)
        state = flow_step(state, step, oracle, field=field)
        out.append(state)
        if callback is not None:
            callback(state)
    return out


def extract_observables(theta, v_tilde, eta, point, rank=None, ref_v1=None):
    """Oscillation observables of ``theta`` around its projection ``point``.

    ``h`` is the displacement along the top eigenvector, ``h_scaled = h / eta``
    and ``u = (mu^2 v_tilde - 1) / eta`` measures how far the effective LR
    sits from the stability threshold ``mu = 2 / lambda1``.  The eigenvector
    sign is aligned with ``ref_v1`` when given so that sign changes of ``h``
    across steps are meaningful.  ``misalignment`` and ``p0_residual`` are NaN
    when the rank is unknown.
    """
    theta = np.asarray(theta, dtype=float)
    x = theta - point.phi
    v1 = point.spectrum.v1
    if ref_v1 is not None and v1 @ ref_v1 < 0:
        v1 = -v1
    h = float(x @ v1)
    u = float((point.mu**2 * v_tilde - 1.0) / eta)
    rank = point.rank if rank is None else rank
    vecs = point.spectrum.vectors
    if rank is None or vecs is None or vecs.shape[1] < rank:
        mis = p0 = float("nan")
    else:
        V = vecs[:, :rank]
        c = V.T @ x
        p0 = float(np.linalg.norm(x - V @ c))
        mis = float(np.linalg.norm(V[:, 1:] @ c[1:]))
    return DriftObservables(x=x, h=h, h_scaled=h / eta, u=u, misalignment=mis, p0_residual=p0)


def min_norm_oracle(problem: LinRegBN, tol=1e-10):
    """Minimum-norm interpolating affine predictor ``(w*, b*)``.

    Solves ``min ||w||^2`` subject to ``w @ x_i + b = y_i`` through the
    centred system; raises ``ValueError`` when no interpolant exists.
    ``problem`` may also be a raw ``(X, y)`` pair, which allows constant
    targets.
    """
    if isinstance(problem, tuple):
        X, y = np.asarray(problem[0], dtype=float), np.asarray(problem[1], dtype=float)
    else:
        X, y = problem.X, problem.y
    mu_x, mu_y = X.mean(axis=0), float(y.mean())
    Xc, yc = X - mu_x, y - mu_y
    if np.all(yc == 0.0):
        return np.zeros(X.shape[1]), mu_y
    w = Xc.T @ (np.linalg.pinv(Xc @ Xc.T) @ yc)
    b = mu_y - float(w @ mu_x)
    res = np.max(np.abs(X @ w + b - y))
    if res > tol * max(1.0, np.max(np.abs(y))):
        raise ValueError(f"no interpolating solution (residual {res:.3e})")
    return w, b


def linreg_hessian_on_manifold(problem: LinRegBN, w, tol=1e-6):
    """Closed-form Hessian ``2 ||wt||^2 (Sigma_x - z z^T) / ||w||^2`` on the manifold.

    For unit ``w`` this is ``2 ||wt||^2 (Sigma_x - z z^T)``.
    """
    w = as_vector(w, problem.dim, "w")
    if problem.manifold_residual(w) > tol:
        raise DomainError("w is not on the zero-loss manifold")
    wt, _ = problem.coefficients(w)
    return 2.0 * float(wt @ wt) / float(w @ w) * (problem.Sigma_x - np.outer(problem.z, problem.z))
