"""scikit-learn style wrapper around GD+WD on the batch-normalised linear model."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state, validate_data

from .dyn import GDWDConfig, run
from .manifold import gf_project
from .silo import LinRegBN
from .spectra import spherical_sharpness

__all__ = ["BNLinearRegression"]


class BNLinearRegression(RegressorMixin, BaseEstimator):
    """Linear regression with a batch-normalised output, trained by GD with
    weight decay on the scale-invariant parameterisation.

    Parameters
    ----------
    eta_hat : learning rate.
    lambda_hat : weight decay.
    n_steps : number of GD+WD steps.
    init_ratio : the first effective LR is ``init_ratio * 2 / lambda1`` where
        ``lambda1`` is the spherical sharpness at the random start.
    project : if True, the fitted coefficients come from the gradient-flow
        projection of the last iterate instead of the iterate itself.  This
        removes the period-2 oscillation once training is at the edge of
        stability.  Only meaningful when the model can interpolate
        (more features than samples).
    record_every : cadence of ``loss_curve_``.
    random_state : seed or ``numpy.random.Generator``-compatible state.

    Attributes
    ----------
    coef_, intercept_ : equivalent unnormalised linear model.
    w_ : final raw parameter.
    loss_curve_ : list of ``(step, train_loss, effective_lr)``.
    """

    def __init__(self, eta_hat=0.5, lambda_hat=2e-4, n_steps=5000, init_ratio=0.8, project=False,
                 record_every=100, random_state=None):
        self.eta_hat = eta_hat
        self.lambda_hat = lambda_hat
        self.n_steps = n_steps
        self.init_ratio = init_ratio
        self.project = project
        self.record_every = record_every
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        if not 0 < self.init_ratio:
            raise ValueError("init_ratio must be > 0")
        problem = LinRegBN(X, y, hvp_method="analytic")
        rng = check_random_state(self.random_state)
        theta = rng.standard_normal(problem.dim)
        theta /= np.linalg.norm(theta)
        cfg = GDWDConfig(self.eta_hat, self.lambda_hat)
        lam = spherical_sharpness(problem, theta)
        # ||w||^2 = eta_hat / ((1 - eta_in) * eff0) puts the first effective LR at eff0
        eff0 = self.init_ratio * 2.0 / lam
        w0 = theta * np.sqrt(self.eta_hat / ((1.0 - cfg.eta_in) * eff0))
        snaps = run(cfg, problem, w0, int(self.n_steps), record_every=int(self.record_every))
        w = snaps[-1].w
        if self.project:
            w = gf_project(w / np.linalg.norm(w), problem, spectrum=False).phi
        self.w_ = w
        self.coef_, self.intercept_ = problem.coefficients(w)
        self.loss_curve_ = [(s.t, s.loss, s.eff_lr) for s in snaps]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.coef_.shape[0]:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.coef_.shape[0]}")
        return X @ self.coef_ + self.intercept_
