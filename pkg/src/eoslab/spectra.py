"""Spectral tools over Hessian-vector product oracles."""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

__all__ = [
    "SpectrumResult",
    "LanczosError",
    "lanczos_top",
    "dense_top",
    "hessian_spectrum",
    "spherical_sharpness",
    "EigenGap",
    "eigen_gap",
    "pac_bayes_bound",
]


class LanczosError(RuntimeError):
    """Lanczos did not converge; ``best`` holds the last estimate."""

    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


@dataclass
class SpectrumResult:
    lambda1: float
    v1: np.ndarray
    lambda2: Optional[float] = None
    lambda_small: Optional[float] = None
    iters: int = 0
    residual: float = 0.0
    #: the ``n_eigs`` largest eigenvalues, descending
    values: Optional[np.ndarray] = None
    #: matching eigenvectors as columns
    vectors: Optional[np.ndarray] = None

    def __eq__(self, other):
        if not isinstance(other, SpectrumResult):
            return NotImplemented
        return (
            self.lambda1 == other.lambda1
            and np.array_equal(self.v1, other.v1)
            and self.lambda2 == other.lambda2
            and self.lambda_small == other.lambda_small
            and self.iters == other.iters
            and self.residual == other.residual
        )


def _orthogonalize(r, Q):
    # two passes of classical Gram-Schmidt
    for _ in range(2):
        r = r - Q @ (Q.T @ r)
    return r


def _fix_sign(v):
    i = int(np.argmax(np.abs(v)))
    return v if v[i] >= 0 else -v


def _result(values, vectors, rank, iters, residual):
    return SpectrumResult(
        lambda1=float(values[0]),
        v1=vectors[:, 0].copy(),
        lambda2=float(values[1]) if values.size > 1 else None,
        lambda_small=float(values[rank - 1]) if rank is not None and values.size >= rank else None,
        iters=iters,
        residual=float(residual),
        values=values.copy(),
        vectors=vectors.copy(),
    )


def lanczos_top(hvp, dim, k=None, seed=0, tol=1e-9, max_restarts=30, n_eigs=1, rank=None):
    """Largest eigenpairs of a symmetric operator by restarted Lanczos.

    Parameters
    ----------
    hvp : callable ``v -> H v``.
    dim : operator dimension.
    k : Krylov subspace size per cycle (default ``min(dim, max(30, 2 n_eigs + 10))``).
    seed : seeds the Gaussian start vector; results are deterministic.
    tol : convergence threshold on ``||H v - lambda v|| / max(|lambda1|, 1)``
        for each requested pair.
    n_eigs : number of top eigenpairs to return; ``max(n_eigs, 2)`` are
        tracked so that ``lambda2`` is always available when ``dim > 1``.
    rank : if given, ``lambda_small`` is the ``rank``-th largest eigenvalue.
        Forces ``n_eigs >= rank``.

    Raises
    ------
    LanczosError
        After ``max_restarts`` cycles without convergence.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if rank is not None:
        n_eigs = max(n_eigs, rank)
    want = min(dim, max(n_eigs, 2))
    k = min(dim, k if k is not None else max(30, 2 * want + 10))
    k = max(k, want)
    rng = np.random.default_rng(seed)
    start = rng.standard_normal(dim)
    total = 0
    best = None
    for cycle in range(max_restarts + 1):
        Q = np.zeros((dim, k))
        AQ = np.zeros((dim, k))
        q = start / np.linalg.norm(start)
        m = 0
        while m < k:
            Q[:, m] = q
            AQ[:, m] = hvp(q)
            total += 1
            m += 1
            if m == k:
                break
            r = _orthogonalize(AQ[:, m - 1], Q[:, :m])
            beta = np.linalg.norm(r)
            if beta <= 1e-12 * max(1.0, np.linalg.norm(AQ[:, m - 1])):
                # invariant subspace found; continue with a fresh direction
                r = _orthogonalize(rng.standard_normal(dim), Q[:, :m])
                beta = np.linalg.norm(r)
                if beta <= 1e-12:
                    break
            q = r / beta
        Q, AQ = Q[:, :m], AQ[:, :m]
        T = Q.T @ AQ
        T = 0.5 * (T + T.T)
        theta, Y = np.linalg.eigh(T)
        order = np.argsort(-theta, kind="stable")
        theta, Y = theta[order], Y[:, order]
        nv = min(want, m)
        vals = theta[:nv]
        vecs = Q @ Y[:, :nv]
        res = np.linalg.norm(AQ @ Y[:, :nv] - vecs * vals, axis=0)
        scale = max(abs(vals[0]), 1.0)
        vecs = np.column_stack([_fix_sign(vecs[:, i]) for i in range(nv)])
        best = _result(vals, vecs, rank, total, res[0])
        n_check = min(n_eigs, nv)
        if np.all(res[:n_check] <= tol * scale) or m == dim:
            return best
        # explicit restart from the unconverged wanted Ritz vectors
        bad = res[:n_check] > tol * scale
        start = vecs[:, :n_check][:, bad].sum(axis=1) + 1e-3 * vecs[:, :n_check].sum(axis=1)
    raise LanczosError(
        f"Lanczos did not converge after {max_restarts} restarts (residual {best.residual:.3e})", best
    )


def dense_top(H, n_eigs=1, rank=None):
    """Same contract as :func:`lanczos_top` for an explicit symmetric matrix."""
    H = 0.5 * (H + H.T)
    evals, evecs = np.linalg.eigh(H)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    nv = min(H.shape[0], max(n_eigs, rank or 0, 2))
    vecs = np.column_stack([_fix_sign(evecs[:, i]) for i in range(nv)])
    res = np.linalg.norm(H @ vecs[:, :1] - vecs[:, :1] * evals[0])
    return _result(evals[:nv], vecs, rank, H.shape[0], res)


def hessian_spectrum(oracle, w, n_eigs=1, rank=None, method="auto", seed=0, tol=1e-9):
    """Top Hessian eigenpairs of ``oracle`` at ``w`` (not rescaled).

    ``method="dense"`` assembles the Hessian from ``dim`` HVPs;
    ``"auto"`` picks dense for ``dim <= 64``.
    """
    w = np.asarray(w, dtype=float)
    if method == "auto":
        method = "dense" if oracle.dim <= 64 else "lanczos"
    if method == "dense":
        return dense_top(oracle.hessian(w), n_eigs=n_eigs, rank=rank)
    return lanczos_top(lambda v: oracle.hvp(w, v), oracle.dim, seed=seed, tol=tol, n_eigs=n_eigs, rank=rank)


def spherical_sharpness(oracle, w, method="auto", seed=0, tol=1e-9):
    """``||w||^2 * lambda1(Hess L(w))``, i.e. the top eigenvalue at ``w / ||w||``."""
    w = np.asarray(w, dtype=float)
    nrm2 = float(w @ w)
    if not nrm2 > 0:
        raise ValueError("w must be nonzero")
    return nrm2 * hessian_spectrum(oracle, w, method=method, seed=seed, tol=tol).lambda1


class EigenGap(NamedTuple):
    gamma: float
    top_unique: bool


def eigen_gap(spec, unique_rtol=1e-8):
    """Relative gap ``min(l1 - l2, l_small) / l1``.

    A top eigenvalue that is repeated (``l1 - l2 <= unique_rtol * l1``)
    yields ``gamma = 0`` and ``top_unique = False``.
    """
    if spec.lambda2 is None or spec.lambda_small is None:
        raise ValueError("eigen_gap needs lambda2 and lambda_small")
    l1 = spec.lambda1
    if not l1 > 0:
        raise ValueError("eigen_gap needs lambda1 > 0")
    top_gap = l1 - spec.lambda2
    if top_gap <= unique_rtol * l1:
        return EigenGap(0.0, False)
    # with rank 1 the top eigenvalue is alone in the nonzero block
    if spec.lambda_small == l1:
        top_gap = l1
    return EigenGap(min(top_gap, spec.lambda_small) / l1, True)


def pac_bayes_bound(lambda1, m3, ell_max, n, D, sigma, delta):
    """Generalisation bound from spherical sharpness.

    ``sigma^2 l1 / 2 + 16 sigma^3 m3 (1 + (ln n / D)^1.5) / 3
    + ell_max sqrt((D / sigma^2 + 2 ln(n / delta)) / (n - 1))``.
    ``m3`` bounds the third derivative on the sphere and must be supplied.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if D < 1:
        raise ValueError("D must be >= 1")
    ratio = np.log(n) / D
    if not 0.0 < sigma <= 1.0 / (2.0 + 2.0 * np.sqrt(ratio)):
        raise ValueError("sigma must satisfy 0 < sigma <= 1 / (2 + 2 sqrt(ln n / D))")
    sharp = 0.5 * sigma**2 * lambda1
    third = 16.0 * sigma**3 / 3.0 * m3 * (1.0 + ratio**1.5)
    complexity = ell_max * np.sqrt((D / sigma**2 + 2.0 * np.log(n / delta)) / (n - 1))
    return float(sharp + third + complexity)
