"""Update rules: GD with weight decay, projected GD on the sphere, and
Scalar RMSprop, plus a small sequential run loop.

Step order is fixed everywhere: gradient at the current iterate, update,
then record.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from ._validation import NonFiniteError, as_vector, check_finite, check_positive
from .sched import SchedulerState, rmsprop_step

__all__ = [
    "GDWDConfig",
    "OptState",
    "gdwd_step",
    "pgd_step",
    "scalar_rmsprop_step",
    "run",
    "Snapshot",
    "project_sphere",
]


def project_sphere(x):
    n = np.linalg.norm(x)
    if not n > 0.0:
        raise ZeroDivisionError("projection onto the sphere is undefined at 0")
    return x / n


@dataclass(frozen=True)
class GDWDConfig:
    eta_hat: float
    lambda_hat: float = 0.0

    def __post_init__(self):
        check_positive(self.eta_hat, "eta_hat")
        check_positive(self.lambda_hat, "lambda_hat", strict=False)
        if self.eta_in >= 1.0:
            raise ValueError("eta_hat * lambda_hat must be < 1")

    @property
    def eta_in(self):
        return self.eta_hat * self.lambda_hat

    def eff_lr(self, w_norm):
        return self.eta_hat / ((1.0 - self.eta_in) * w_norm**2)


@dataclass(frozen=True)
class OptState:
    w: np.ndarray
    t: int = 0

    @property
    def w_norm(self):
        return float(np.linalg.norm(self.w))

    @property
    def theta(self):
        return project_sphere(self.w)


def gdwd_step(state, config, oracle, grad=None):
    """``w <- (1 - eta_hat lambda_hat) w - eta_hat grad L(w)``.

    ``grad`` may be passed when the caller has already evaluated it at
    ``state.w``.
    """
    w = state.w
    g = oracle.grad(w) if grad is None else grad
    check_finite(g, "gradient", state.t)
    w_new = (1.0 - config.eta_in) * w - config.eta_hat * g
    check_finite(w_new, "iterate", state.t)
    return OptState(w=w_new, t=state.t + 1)


def pgd_step(theta, eff_lr, oracle, grad=None):
    """``theta <- Pi(theta - eff_lr * grad L(theta))`` on the unit sphere."""
    g = oracle.grad(theta) if grad is None else grad
    x = theta - eff_lr * g
    n = np.linalg.norm(x)
    if not n > 0.0:
        raise ZeroDivisionError("PGD step landed on the origin")
    return x / n


def scalar_rmsprop_step(theta, sched_state, oracle):
    """Ambient GD whose LR comes from an RMSprop scheduler.

    With the reparameterisation ``v_tilde = v / eta^2`` this is
    ``theta <- theta - eta / sqrt(v) grad``; ``v <- beta v + (1-beta)||grad||^2``.
    """
    g = oracle.grad(theta)
    eff_lr, new_state = rmsprop_step(sched_state, g)
    return theta - eff_lr * g, new_state


@dataclass
class Snapshot:
    """What the run loop hands to observers after each recorded step."""

    t: int
    w: np.ndarray
    loss: float
    grad_norm: float
    eff_lr: float
    sched: Optional[SchedulerState] = None


def run(driver, oracle, w0, steps, record_every=1, observers=(), sched=None,
        record_also: Optional[Callable[[int], bool]] = None):
    """Run ``steps`` updates and return the list of recorded snapshots.

    ``driver`` is either a :class:`GDWDConfig` (GD+WD in the ambient space)
    or the string ``"scalar-rms"``, in which case ``sched`` must be a
    :class:`SchedulerState`.  Observers are called as ``obs(snapshot)`` on
    every recorded step, including ``t = 0``; an observer exception aborts the
    run with the step attached.  ``record_also(t)`` adds extra recorded
    steps on top of the cadence.
    """
    w = as_vector(w0, oracle.dim, "w0").copy()
    state = OptState(w=w)
    out: List[Snapshot] = []

    def due(t):
        return t % record_every == 0 or t == steps or (record_also is not None and record_also(t))

    def record(t, w, g, eff_lr, s):
        snap = Snapshot(t=t, w=w.copy(), loss=oracle.value(w), grad_norm=float(np.linalg.norm(g)),
                        eff_lr=eff_lr, sched=s)
        for obs in observers:
            try:
                obs(snap)
            except Exception as exc:
                raise RuntimeError(f"observer {obs!r} failed at step {t}") from exc
        out.append(snap)

    if isinstance(driver, GDWDConfig):
        for t in range(steps + 1):
            g = oracle.grad(state.w)
            check_finite(g, "gradient", t)
            if due(t):
                record(t, state.w, g, driver.eff_lr(state.w_norm), None)
            if t == steps:
                break
            state = gdwd_step(state, driver, oracle, grad=g)
    elif driver == "scalar-rms":
        if sched is None:
            raise ValueError("scalar-rms driver needs a SchedulerState")
        theta = w
        for t in range(steps + 1):
            g = oracle.grad(theta)
            check_finite(g, "gradient", t)
            if due(t):
                record(t, theta, g, sched.eff_lr, sched)
            if t == steps:
                break
            eff_lr, sched = rmsprop_step(sched, g)
            theta = theta - eff_lr * g
            if not np.all(np.isfinite(theta)):
                raise NonFiniteError("non-finite iterate", step=t)
    else:
        raise ValueError(f"unknown driver {driver!r}")
    return out
