"""Seeded generators for the three problem families and the near-minimizer
initialisation."""

import warnings

import numpy as np

from ..dyn import GDWDConfig, OptState
from ..manifold import make_point
from ..silo import Example3D, LinRegBN, MatComBN

__all__ = ["gen_linreg", "linreg_inputs", "gen_matcom", "gen_example3d", "init_near_minimizer", "random_orthogonal"]

EXAMPLE3D_W0 = np.array([0.3, 1.3, 1.2])


def linreg_inputs(rng, n, d=40):
    """``n`` draws from ``N(0, diag(1/d, 2/d, ..., 1))``."""
    return rng.standard_normal((n, d)) * np.sqrt(np.arange(1, d + 1) / d)


def gen_linreg(seed, d=40, n=20, n_test=1000, bias_std=0.1, hvp_method="analytic"):
    """Noise-free linear data with covariance ``diag(1/d, 2/d, ..., 1)``.

    The true weight is uniform on the unit sphere and the bias is
    ``N(0, bias_std^2)``; the held-out set is drawn from the same model.
    """
    rng = np.random.default_rng(seed)
    w_gt = rng.standard_normal(d)
    w_gt /= np.linalg.norm(w_gt)
    b_gt = rng.normal(0.0, bias_std)
    X = linreg_inputs(rng, n, d)
    X_test = linreg_inputs(rng, n_test, d)
    return LinRegBN(X, X @ w_gt + b_gt, X_test, X_test @ w_gt + b_gt, hvp_method=hvp_method)


def gen_matcom(d=50, rank=2, N=800, seed=0, hessian_rank=None):
    """Rank-``rank`` ground truth with unit entry second moment and ``N``
    observed entries drawn without replacement."""
    if N > d * d:
        raise ValueError(f"cannot observe {N} entries of a {d}x{d} matrix")
    rng = np.random.default_rng(seed)
    U = rng.uniform(-1.0, 1.0, (d, rank))
    V = rng.uniform(-1.0, 1.0, (d, rank))
    M = U @ V.T
    M *= d / np.linalg.norm(M)
    flat = rng.choice(d * d, size=N, replace=False)
    omega = np.stack([flat // d, flat % d], axis=1)
    return MatComBN(M, omega, hessian_rank=hessian_rank)


def random_orthogonal(rng, dim=3):
    Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
    # sign fix makes the draw Haar distributed
    return Q * np.sign(np.diag(R))


def gen_example3d(seed, hvp_method="analytic"):
    """Return ``(problem, w0)`` with ``w0 = Q^T (0.3, 1.3, 1.2)``."""
    Q = random_orthogonal(np.random.default_rng(seed))
    problem = Example3D(Q, hvp_method=hvp_method)
    return problem, problem.from_f(EXAMPLE3D_W0)


def init_near_minimizer(zeta0, sigma0, eta_hat, lambda_hat, oracle, seed=0, offset=0.0, lambda1=None):
    """Perturb a minimizer and scale it so the first effective LR sits at
    ``2 / lambda1(zeta0) + offset``.

    The direction is ``(zeta0 + xi) / ||zeta0 + xi||`` with
    ``xi ~ N(0, sigma0^2 I / D)``.
    """
    cfg = GDWDConfig(eta_hat, lambda_hat)
    zeta0 = np.asarray(zeta0, dtype=float)
    zeta0 = zeta0 / np.linalg.norm(zeta0)
    D = zeta0.shape[0]
    if sigma0 == 0:
        warnings.warn("sigma0 = 0 starts exactly on the manifold; no oscillation can develop",
                      RuntimeWarning, stacklevel=2)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(D) * (sigma0 / np.sqrt(D))
    theta = zeta0 + xi
    theta /= np.linalg.norm(theta)
    if lambda1 is None:
        lambda1 = make_point(oracle, zeta0).spectrum.lambda1
    target = 2.0 / lambda1 + offset
    if not target > 0:
        raise ValueError("target effective LR must be positive")
    norm = np.sqrt(eta_hat / ((1.0 - cfg.eta_in) * target))
    return OptState(w=theta * norm)
