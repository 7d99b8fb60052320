"""Scale-invariant loss oracles.

Every oracle works on a flat parameter vector ``w`` and is invariant to
positive rescaling of ``w``.  Three problem families are provided:

* :class:`LinRegBN` -- linear regression with a batch-normalised output,
* :class:`MatComBN` -- overparameterised matrix completion with a
  second-moment normalised output,
* :class:`Example3D` -- a rotated three dimensional toy loss whose minimisers
  form a half circle on the sphere.

Hessian-vector products default to a central finite difference of the
analytic gradient.  ``LinRegBN`` and ``Example3D`` also ship an analytic
path (``hvp_method="analytic"``).
"""

from __future__ import annotations

import numpy as np

from ._validation import as_vector

__all__ = [
    "DomainError",
    "ScaleInvariantLoss",
    "LinRegBN",
    "MatComBN",
    "Example3D",
    "fd_grad",
    "fd_hvp",
    "EPS_FD",
]

EPS_FD = 1e-5


class DomainError(ValueError):
    """Raised when a loss is evaluated on a degenerate direction."""


class ScaleInvariantLoss:
    """Base class for scale-invariant losses over a flat vector.

    Subclasses implement :meth:`value` and :meth:`grad`; :meth:`hvp` falls
    back to a central difference of :meth:`grad` unless the subclass
    provides ``_hvp_analytic`` and ``hvp_method == "analytic"``.
    """

    dim: int
    hvp_method: str = "fd"
    #: rank of the Hessian on the minimiser manifold, when known
    hessian_rank: int | None = None

    def value(self, w):
        raise NotImplementedError

    def grad(self, w):
        raise NotImplementedError

    def test_value(self, w):
        return None

    def hvp(self, w, v):
        w = as_vector(w, self.dim, "w")
        v = as_vector(v, self.dim, "v")
        if self.hvp_method == "analytic":
            return self._hvp_analytic(w, v)
        return _central_hvp(self.grad, w, v, EPS_FD)

    def hessian(self, w):
        """Dense Hessian assembled column by column from HVPs."""
        w = as_vector(w, self.dim, "w")
        eye = np.eye(self.dim)
        H = np.column_stack([self.hvp(w, eye[:, i]) for i in range(self.dim)])
        return 0.5 * (H + H.T)

    def _hvp_analytic(self, w, v):
        raise NotImplementedError(f"{type(self).__name__} has no analytic HVP")

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, hvp_method={self.hvp_method!r})"


def _central_hvp(grad, w, v, eps):
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return np.zeros_like(w)
    h = eps * np.linalg.norm(w) / max(nv, eps)
    return (grad(w + h * v) - grad(w - h * v)) / (2.0 * h)


def fd_grad(oracle, w, eps=1e-6):
    """Central-difference gradient of ``oracle.value``.

    The step along each coordinate is ``eps * ||w||`` so the estimate is
    scale-equivariant like the true gradient.
    """
    w = np.asarray(w, dtype=float)
    h = eps * max(np.linalg.norm(w), 1.0 if not np.any(w) else 0.0)
    g = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (oracle.value(w + e) - oracle.value(w - e)) / (2.0 * h)
    return g


def fd_hvp(oracle, w, v, eps=1e-4):
    """Central difference of :func:`fd_grad` along ``v`` (two FD layers)."""
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)

    def g(x):
        return fd_grad(oracle, x, eps=1e-5)

    return _central_hvp(g, w, v, eps)


# ---------------------------------------------------------------------------
# Linear regression with batch normalisation
# ---------------------------------------------------------------------------


class LinRegBN(ScaleInvariantLoss):
    """Linear regression whose output is batch normalised over the dataset.

    The normalised model predicts ``wt @ x + bt`` with
    ``wt = sigma_y * w / ||w||_S`` and ``bt = mu_y - wt @ mu_x`` where ``S`` is
    the (population) input covariance.  Output mean and scale are frozen to
    the target statistics, which makes the training loss scale-invariant.

    Parameters
    ----------
    X, y : training inputs ``(n, d)`` and targets ``(n,)``.
    X_test, y_test : optional held-out set used by :meth:`test_value`.
    hvp_method : ``"fd"`` or ``"analytic"``.
    """

    def __init__(self, X, y, X_test=None, y_test=None, hvp_method="fd"):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("X must be (n, d) and y must be (n,)")
        n, d = X.shape
        if n < 2:
            raise ValueError("need at least two samples")
        self.X, self.y = X, y
        self.n, self.dim = n, d
        self.mu_x = X.mean(axis=0)
        self.mu_y = float(y.mean())
        self.Xc = X - self.mu_x
        self.yc = y - self.mu_y
        self.sigma_y = float(np.sqrt(np.mean(self.yc**2)))
        if self.sigma_y <= 0.0:
            raise DomainError("targets have zero variance")
        self.Sigma_x = self.Xc.T @ self.Xc / n
        self.q = self.yc / self.sigma_y
        self.z = self.Xc.T @ self.q / n
        self.X_test = None if X_test is None else np.asarray(X_test, dtype=float)
        self.y_test = None if y_test is None else np.asarray(y_test, dtype=float)
        self.hvp_method = hvp_method
        # Sigma_x - z z^T has rank rank(Xc) - 1 on the manifold
        self.hessian_rank = int(np.linalg.matrix_rank(self.Xc)) - 1

    def _snorm(self, w):
        s2 = float(w @ self.Sigma_x @ w)
        if not s2 > 1e-300:
            raise DomainError("||w||_Sigma is zero; direction carries no signal")
        return np.sqrt(s2)

    def coefficients(self, w):
        """Return the equivalent unnormalised ``(wt, bt)`` for direction ``w``."""
        w = as_vector(w, self.dim, "w")
        wt = self.sigma_y * w / self._snorm(w)
        return wt, self.mu_y - wt @ self.mu_x

    def predict(self, w, X):
        wt, bt = self.coefficients(w)
        return np.asarray(X, dtype=float) @ wt + bt

    def _residual(self, w):
        s = self._snorm(w)
        u = w / s
        return s, u, self.sigma_y * (self.Xc @ u) - self.yc

    def value(self, w):
        w = as_vector(w, self.dim, "w")
        _, _, r = self._residual(w)
        return float(r @ r) / self.n

    def test_value(self, w):
        if self.X_test is None:
            return None
        err = self.predict(w, self.X_test) - self.y_test
        return float(np.mean(err**2))

    def grad(self, w):
        w = as_vector(w, self.dim, "w")
        s, u, r = self._residual(w)
        a = self.Xc.T @ r
        g = (a - (self.Sigma_x @ u) * (u @ a)) / s
        return (2.0 * self.sigma_y / self.n) * g

    def _hvp_analytic(self, w, v):
        s, u, r = self._residual(w)
        Su = self.Sigma_x @ u
        a = self.Xc.T @ r
        ua = u @ a
        g = (a - Su * ua) / s
        ds = Su @ v
        du = (v - u * ds) / s
        da = self.sigma_y * (self.Xc.T @ (self.Xc @ du))
        dg = -(ds / s) * g + (da - (self.Sigma_x @ du) * ua - Su * (du @ a + u @ da)) / s
        return (2.0 * self.sigma_y / self.n) * dg

    def manifold_residual(self, w):
        """Max violation of the zero-loss conditions ``<u, xc_i> = q_i``."""
        w = as_vector(w, self.dim, "w")
        u = w / self._snorm(w)
        return float(np.max(np.abs(self.Xc @ u - self.q)))

    def retract(self, w):
        """Map a direction onto the zero-loss set on the unit sphere.

        Projects the Sigma-normalised direction onto the affine set of
        interpolating directions, then renormalises.  Identity on the set.
        """
        w = as_vector(w, self.dim, "w")
        u = w / self._snorm(w)
        u = u + np.linalg.lstsq(self.Xc, self.q - self.Xc @ u, rcond=None)[0]
        return u / np.linalg.norm(u)

    def tangent_basis(self, w):
        """Orthonormal basis of the manifold tangent space at ``w``."""
        w = as_vector(w, self.dim, "w")
        theta = w / np.linalg.norm(w)
        evals, evecs = np.linalg.eigh(self.Sigma_x - np.outer(self.z, self.z))
        null = evecs[:, : self.dim - self.hessian_rank]
        # remove the radial direction
        B = null - np.outer(theta, theta @ null)
        U_, sv, _ = np.linalg.svd(B, full_matrices=False)
        return U_[:, sv > 1e-8]

    def log_sharpness_grad(self, w):
        """Ambient gradient of ``log ||wt||^2``; its tangent part drives the flow."""
        w = as_vector(w, self.dim, "w")
        return 2.0 * w / (w @ w) - 2.0 * (self.Sigma_x @ w) / (w @ self.Sigma_x @ w)


# ---------------------------------------------------------------------------
# Matrix completion with a normalised output
# ---------------------------------------------------------------------------


class MatComBN(ScaleInvariantLoss):
    """Matrix completion with ``W = (gamma / sigma) * U V^T``.

    ``sigma`` is the root second moment of ``U V^T`` over the observed
    entries (no mean subtraction) and ``gamma`` is the root second moment of
    the observed targets.  Parameters are laid out as row-major ``U``
    followed by row-major ``V``.
    """

    def __init__(self, M, omega, hessian_rank=None):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("M must be square")
        omega = np.asarray(omega, dtype=int)
        if omega.ndim != 2 or omega.shape[1] != 2:
            raise ValueError("omega must be an (N, 2) index array")
        self.M = M
        self.d = M.shape[0]
        self.omega = omega
        self.rows, self.cols = omega[:, 0], omega[:, 1]
        self.N = omega.shape[0]
        self.m_obs = M[self.rows, self.cols]
        self.gamma = float(np.sqrt(np.mean(self.m_obs**2)))
        self.dim = 2 * self.d * self.d
        self.hessian_rank = hessian_rank

    def split(self, params):
        params = as_vector(params, self.dim, "params")
        k = self.d * self.d
        return params[:k].reshape(self.d, self.d), params[k:].reshape(self.d, self.d)

    def _stats(self, params):
        U, V = self.split(params)
        W = U @ V.T
        a = W[self.rows, self.cols]
        sigma = float(np.sqrt(np.mean(a**2)))
        if not sigma > 1e-300:
            raise DomainError("observed entries of U V^T are all zero")
        return U, V, W, a, sigma

    def recovered(self, params):
        """The full predicted matrix ``(gamma / sigma) U V^T``."""
        _, _, W, _, sigma = self._stats(params)
        return (self.gamma / sigma) * W

    def value(self, params):
        _, _, _, a, sigma = self._stats(params)
        r = (self.gamma / sigma) * a - self.m_obs
        return float(np.mean(r**2))

    def test_value(self, params):
        _, _, W, _, sigma = self._stats(params)
        return float(np.mean(((self.gamma / sigma) * W - self.M) ** 2))

    def grad(self, params):
        U, V, _, a, sigma = self._stats(params)
        c = self.gamma / sigma
        r = c * a - self.m_obs
        # d/da of mean((c(a) a - m)^2), with c(a) = gamma sqrt(N) / ||a||
        ga = (2.0 / self.N) * c * (r - a * (a @ r) / (a @ a))
        G = np.zeros((self.d, self.d))
        np.add.at(G, (self.rows, self.cols), ga)
        return np.concatenate([(G @ V).ravel(), (G.T @ U).ravel()])


# ---------------------------------------------------------------------------
# Three dimensional example
# ---------------------------------------------------------------------------


def _F(p):
    x, y = p[0], p[1]
    q = x * x - x * y + y * y
    if not q > 1e-300:
        raise DomainError("x = y = 0 is a singular line of the 3D loss")
    return 2.0 - (x + y) / np.sqrt(q)


def _F_grad(p):
    x, y = p[0], p[1]
    q = x * x - x * y + y * y
    if not q > 1e-300:
        raise DomainError("x = y = 0 is a singular line of the 3D loss")
    s = x + y
    qx, qy = 2 * x - y, 2 * y - x
    r = q**-0.5
    r3 = q**-1.5
    return np.array([-r + 0.5 * s * r3 * qx, -r + 0.5 * s * r3 * qy, 0.0])


def _F_hess(p):
    x, y = p[0], p[1]
    q = x * x - x * y + y * y
    if not q > 1e-300:
        raise DomainError("x = y = 0 is a singular line of the 3D loss")
    s = x + y
    qx, qy = 2 * x - y, 2 * y - x
    r3, r5 = q**-1.5, q**-2.5
    fxx = r3 * (qx + s) - 0.75 * s * r5 * qx * qx
    fyy = r3 * (qy + s) - 0.75 * s * r5 * qy * qy
    fxy = -0.75 * s * r5 * qx * qy
    return np.array([[fxx, fxy, 0.0], [fxy, fyy, 0.0], [0.0, 0.0, 0.0]])


class Example3D(ScaleInvariantLoss):
    """``L(w) = F(Q w)`` with ``F(x, y, z) = 2 - (x + y) / sqrt(x^2 - xy + y^2)``.

    ``F`` ignores ``z`` and is minimised on the half plane ``x = y > 0``, so the
    minimisers on the sphere form a half circle parameterised by ``z``.
    """

    dim = 3
    hessian_rank = 1

    def __init__(self, Q=None, hvp_method="fd"):
        Q = np.eye(3) if Q is None else np.asarray(Q, dtype=float)
        if Q.shape != (3, 3) or not np.allclose(Q.T @ Q, np.eye(3), atol=1e-12):
            raise ValueError("Q must be a 3x3 orthogonal matrix")
        self.Q = Q
        self.hvp_method = hvp_method

    def to_f(self, w):
        """Coordinates of ``w`` in the domain of ``F``."""
        return self.Q @ as_vector(w, 3, "w")

    def from_f(self, p):
        return self.Q.T @ np.asarray(p, dtype=float)

    def value(self, w):
        return float(_F(self.to_f(w)))

    def grad(self, w):
        return self.Q.T @ _F_grad(self.to_f(w))

    def _hvp_analytic(self, w, v):
        return self.Q.T @ (_F_hess(self.to_f(w)) @ (self.Q @ v))

    def retract(self, w):
        p = self.to_f(w)
        m = 0.5 * (p[0] + p[1])
        if m <= 0.0:
            raise DomainError("direction lies on the repelling half of the plane")
        p = np.array([m, m, p[2]])
        return self.from_f(p / np.linalg.norm(p))

    def tangent_basis(self, w):
        p = self.to_f(w)
        p = p / np.linalg.norm(p)
        # tangent of the circle {x = y} through p
        t = np.array([-p[2] / np.sqrt(2.0), -p[2] / np.sqrt(2.0), np.sqrt(2.0) * p[0]])
        return self.from_f(t / np.linalg.norm(t))[:, None]
