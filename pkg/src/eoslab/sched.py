"""RMSprop-family learning-rate schedulers.

A scheduler reads a stream of gradients and emits one effective learning
rate per step.  Steps are pure: they take a :class:`SchedulerState` and
return ``(eff_lr, new_state)``.  The effective learning rate always uses the
moment estimate *before* the update, ``1 / sqrt(v_t)``.
"""

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SchedulerState",
    "rmsprop_step",
    "gwsi_step",
    "gwsi_from_gdwd",
    "qrms_hyperparams",
    "qrms_residuals",
]


@dataclass(frozen=True)
class SchedulerState:
    v_tilde: float
    eta: float
    beta: float
    t: int = 0

    def __post_init__(self):
        if not self.v_tilde > 0:
            raise ValueError(f"v_tilde must be > 0, got {self.v_tilde}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")

    @property
    def eff_lr(self):
        return 1.0 / np.sqrt(self.v_tilde)


def _gbar_sq(state, g):
    g = np.asarray(g, dtype=float)
    return float(g @ g) / state.eta**2


def rmsprop_step(state, g):
    gb2 = _gbar_sq(state, g)
    v = state.v_tilde
    new_v = state.beta * v + (1.0 - state.beta) * gb2
    return 1.0 / np.sqrt(v), replace(state, v_tilde=new_v, t=state.t + 1)


def gwsi_step(state, g):
    """One step of the scheduler induced by GD+WD on a scale-invariant loss."""
    gb2 = _gbar_sq(state, g)
    v, b = state.v_tilde, state.beta
    new_v = b * v + (1.0 - b) * gb2 + (1.0 - b) ** 2 * gb2 * gb2 / (4.0 * b * v)
    return 1.0 / np.sqrt(v), replace(state, v_tilde=new_v, t=state.t + 1)


def gwsi_from_gdwd(eta_hat, lambda_hat, w0_norm):
    """GWSI state whose effective LRs coincide with those of GD+WD.

    With ``c = 1 - eta_hat * lambda_hat`` the hyperparameters are
    ``v0 = c^2 ||w0||^4 / eta_hat^2``, ``beta = c^4`` and
    ``eta = sqrt((1/beta - 1) / 2)``.  Without weight decay ``beta = 1`` and
    ``eta`` is irrelevant; it is set to 1.
    """
    eta_in = eta_hat * lambda_hat
    if not 0.0 <= eta_in < 1.0 or eta_hat <= 0:
        raise ValueError(f"need eta_hat > 0 and 0 <= eta_hat*lambda_hat < 1, got {eta_in}")
    c = 1.0 - eta_in
    beta = c**4
    eta = np.sqrt((1.0 / beta - 1.0) / 2.0) if beta < 1.0 else 1.0
    v0 = c**2 * w0_norm**4 / eta_hat**2
    return SchedulerState(v_tilde=v0, eta=float(eta), beta=beta)


def qrms_hyperparams(eta_in):
    """Quasi-RMSprop hyperparameters ``(eta, beta) = (sqrt(2 eta_in), 1 - 4 eta_in)``."""
    if not 0.0 < eta_in < 0.25:
        raise ValueError("eta_in must lie in (0, 1/4)")
    return np.sqrt(2.0 * eta_in), 1.0 - 4.0 * eta_in


def qrms_residuals(etas, vtilde, grads, eta, beta):
    """Deviations of a scheduler trace from the exact RMSprop recursion.

    Parameters
    ----------
    etas : effective LRs ``eta_t`` for ``t = 0..T-1``.
    vtilde : moment estimates ``v_t`` for ``t = 0..T`` (one longer).
    grads : the ``T`` gradients fed to the scheduler.

    Returns
    -------
    d1, d2 : arrays of ``|eta_t - 1/sqrt(v_t)|`` and
        ``|v_{t+1} - (beta v_t + (1 - beta) gbar_t^2)|``.
    """
    etas = np.asarray(etas, dtype=float)
    vtilde = np.asarray(vtilde, dtype=float)
    T = etas.shape[0]
    if len(grads) != T or vtilde.shape[0] != T + 1:
        raise ValueError("need len(etas) == len(grads) == len(vtilde) - 1")
    gb2 = np.array([float(np.dot(g, g)) for g in grads]) / eta**2
    d1 = np.abs(etas - 1.0 / np.sqrt(vtilde[:-1]))
    d2 = np.abs(vtilde[1:] - (beta * vtilde[:-1] + (1.0 - beta) * gb2))
    return d1, d2
