"""Experiment configurations, the trace-recording runner and reports."""

import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .. import __version__
from .._validation import NonFiniteError
from ..driftsim import DriftState, HamiltonianParams, average_h2, simulate
from ..dyn import GDWDConfig, run
from ..manifold import extract_observables, gf_project, min_norm_oracle
from ..sched import SchedulerState, qrms_hyperparams
from ..silo import Example3D, LinRegBN, MatComBN
from ..spectra import LanczosError, lanczos_top
from .data import gen_example3d, gen_linreg, gen_matcom
from .detect import detect_eos_entry, detect_period2
from .trace import TraceRow, dumps_csv, trace_to_json, write_report, write_table

__all__ = ["ExperimentConfig", "ExperimentResult", "run_experiment", "DEFAULTS", "KINDS"]

KINDS = ("linreg", "matcom", "example3d", "driftsim")

DEFAULTS = {
    "linreg": dict(eta_hat=0.5, lambda_hat=2e-4, steps=100_000, record_every=100, project_every=500),
    "matcom": dict(eta_hat=0.1, lambda_hat=0.01, steps=200_000, record_every=100, project_every=1000),
    "example3d": dict(eta_hat=0.5, lambda_hat=0.08, steps=50_000, record_every=100, project_every=100),
    "driftsim": dict(eta_hat=0.01, lambda_hat=0.0, steps=10_000, record_every=1, project_every=1),
}


@dataclass
class ExperimentConfig:
    """What to run.  ``None`` fields take the per-kind defaults.

    For ``driftsim`` ``eta_hat`` is the drift-process step size ``eta``.
    ``init_ratio`` (linreg) sets the first effective LR to
    ``init_ratio * 2 / lambda1`` at the projection of the random start;
    ``init_scale`` (matcom) is the std of the Gaussian factor entries.
    """

    kind: str
    eta_hat: Optional[float] = None
    lambda_hat: Optional[float] = None
    steps: Optional[int] = None
    seed: int = 0
    record_every: Optional[int] = None
    project_every: Optional[int] = None
    out: Optional[str] = None
    fmt: str = "csv"
    sched: str = "gdwd"
    init_ratio: float = 0.8
    init_scale: float = 0.1
    inner_lr: Optional[float] = None
    c_b: float = 1.0
    K: float = 2.0
    h0: float = 0.3
    u0: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        for k, v in DEFAULTS[self.kind].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.record_every < 1 or self.project_every < 1:
            raise ValueError("cadences must be >= 1")
        if self.fmt not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        if self.sched not in ("gdwd", "scalar-rms"):
            raise ValueError("sched must be gdwd or scalar-rms")


@dataclass
class ExperimentResult:
    rows: list
    report: dict
    extra: dict = field(default_factory=dict)


def _seq(seed, stream):
    return np.random.default_rng([seed, stream])


class _Observer:
    """Turns snapshots into trace rows, running projections on the pair
    cadence ``t % project_every in {0, 1}``."""

    def __init__(self, cfg, oracle, eta_in, sched_eta):
        self.cfg = cfg
        self.oracle = oracle
        self.eta_in = eta_in
        self.sched_eta = sched_eta
        self.rows: List[TraceRow] = []
        self.ref_v1 = None
        self.lam_prev = None
        self.target = None
        if isinstance(oracle, LinRegBN):
            self.target = min_norm_oracle(oracle)

    def projecting(self, t):
        return t % self.cfg.project_every in (0, 1)

    def __call__(self, snap):
        o = self.oracle
        w = snap.w
        nrm = float(np.linalg.norm(w))
        if snap.sched is None:
            eff = snap.eff_lr
        else:
            eff = snap.eff_lr / nrm**2
        row = TraceRow(t=snap.t, train_loss=snap.loss, test_loss=o.test_value(w), w_norm=nrm,
                       eff_lr=eff, two_over_eff_lr=2.0 / eff)
        if self.projecting(snap.t):
            theta = w / nrm
            if isinstance(o, MatComBN):
                self._theta_observables(row, theta)
            else:
                self._phi_observables(row, theta, eff)
        self.rows.append(row)

    def _theta_observables(self, row, theta):
        o = self.oracle
        try:
            spec = lanczos_top(lambda v: o.hvp(theta, v), o.dim, seed=self.cfg.seed, tol=1e-6)
        except LanczosError as exc:
            spec = exc.best
        row.sph_sharpness = spec.lambda1
        row.sharpness_at = "theta"
        s = np.linalg.svd(o.recovered(theta), compute_uv=False)
        row.dist_to_target = float(s[1] / s[2]) if s[2] > 0 else float("inf")

    def _phi_observables(self, row, theta, eff):
        o = self.oracle
        lr = self.cfg.inner_lr
        if lr is None:
            lr = 0.05 if self.lam_prev is None else min(0.05, 0.5 / self.lam_prev)
        pt = gf_project(theta, o, inner_lr=lr)
        self.lam_prev = pt.spectrum.lambda1
        row.sph_sharpness = pt.spectrum.lambda1
        row.sharpness_at = "phi"
        if self.sched_eta is not None:
            ob = extract_observables(theta, 1.0 / eff**2, self.sched_eta, pt, ref_v1=self.ref_v1)
            if self.ref_v1 is None:
                self.ref_v1 = pt.spectrum.v1
            elif pt.spectrum.v1 @ self.ref_v1 < 0:
                self.ref_v1 = -pt.spectrum.v1
            else:
                self.ref_v1 = pt.spectrum.v1
            row.h, row.u = ob.h, ob.u
            row.misalignment = None if np.isnan(ob.misalignment) else ob.misalignment
        if isinstance(o, LinRegBN):
            wt, bt = o.coefficients(pt.phi)
            ws, bs = self.target
            row.dist_to_target = float(np.sqrt(np.sum((wt - ws) ** 2) + (bt - bs) ** 2))
        elif isinstance(o, Example3D):
            p = o.to_f(pt.phi)
            row.dist_to_target = float(abs(p[2]))


def _problem(cfg):
    if cfg.kind == "linreg":
        return gen_linreg(cfg.seed), None
    if cfg.kind == "matcom":
        return gen_matcom(seed=cfg.seed), None
    return gen_example3d(cfg.seed)


def _initial_point(cfg, oracle, w0):
    if w0 is not None:
        return np.asarray(w0, dtype=float)
    rng = _seq(cfg.seed, 1)
    if cfg.kind == "matcom":
        return rng.standard_normal(oracle.dim) * cfg.init_scale
    theta = rng.standard_normal(oracle.dim)
    theta /= np.linalg.norm(theta)
    lam = gf_project(theta, oracle, inner_lr=0.05).spectrum.lambda1
    eff0 = cfg.init_ratio * 2.0 / lam
    eta_in = cfg.eta_hat * cfg.lambda_hat
    return theta * np.sqrt(cfg.eta_hat / ((1.0 - eta_in) * eff0))


def _summary(rows, cfg):
    rep = {}
    entry = detect_eos_entry(rows)
    rep["eos_entry_step"] = entry
    measured = [r for r in rows if r.sph_sharpness is not None]
    if entry is not None:
        at = next(r for r in rows if r.t == entry)
        window = [r for r in rows if r.t >= entry]
        rep["period2_fraction"] = detect_period2(window)
        rep["at_entry"] = {"sph_sharpness": at.sph_sharpness, "test_loss": at.test_loss,
                           "dist_to_target": at.dist_to_target}
    else:
        rep["period2_fraction"] = None
        rep["at_entry"] = None
    if measured:
        last = measured[-1]
        rep["final"] = {"t": last.t, "sph_sharpness": last.sph_sharpness, "test_loss": last.test_loss,
                        "dist_to_target": last.dist_to_target, "train_loss": last.train_loss}
        lam = np.array([r.sph_sharpness for r in measured])
        ts = np.array([r.t for r in measured], dtype=float)
        post = ts >= (entry if entry is not None else 0)
        rep["sharpness_trend"] = {
            "first": float(lam[0]),
            "min": float(lam.min()),
            "max": float(lam.max()),
            "last": float(lam[-1]),
            "slope_after_entry": float(np.polyfit(ts[post], np.log(lam[post]), 1)[0]) if post.sum() > 1 else None,
        }
    return rep


def _run_driftsim(cfg):
    params = HamiltonianParams(K=cfg.K, c_b=cfg.c_b)
    S0 = DriftState(h=cfg.h0, u=cfg.u0, grad_norm_sq=cfg.K**2 - 2.0 * cfg.c_b)
    tr = simulate(S0, cfg.eta_hat, params, cfg.steps)
    K2 = cfg.K**2
    E = 0.5 * tr.u**2 + K2 * tr.h**2 - cfg.c_b * np.log(np.abs(tr.h))
    rows = [{"t": t, "h": float(tr.h[t]), "u": float(tr.u[t]), "energy": float(E[t])}
            for t in range(0, cfg.steps + 1, cfg.record_every)]
    rep = {"energy_initial": float(E[0]), "energy_max_deviation": float(np.max(np.abs(E - E[0]))),
           "target_mean_h2": cfg.c_b / (2.0 * K2)}
    try:
        rep["mean_h2"] = average_h2(tr.h, tr.u)
    except ValueError as exc:
        rep["mean_h2"] = None
        rep["mean_h2_error"] = str(exc)
    return rows, rep


def run_experiment(config: ExperimentConfig, oracle=None, w0=None):
    """Run one experiment; writes the trace and report when ``config.out`` is set.

    ``oracle`` and ``w0`` override the seeded problem and start point.
    """
    cfg = config
    base = {"schema": 1, "version": __version__, "seed": cfg.seed, "config": asdict(cfg)}
    if cfg.kind == "driftsim":
        rows, rep = _run_driftsim(cfg)
        report = {**base, **rep}
        if cfg.out:
            _write(cfg, ["t", "h", "u", "energy"], rows, report)
        return ExperimentResult(rows=rows, report=report)

    problem, w_default = _problem(cfg) if oracle is None else (oracle, None)
    w0 = _initial_point(cfg, problem, w0 if w0 is not None else w_default)
    eta_in = cfg.eta_hat * cfg.lambda_hat
    if cfg.sched == "gdwd":
        driver = GDWDConfig(cfg.eta_hat, cfg.lambda_hat)
        sched = None
        sched_eta = np.sqrt(2.0 * eta_in) if eta_in > 0 else None
    else:
        eta, beta = qrms_hyperparams(eta_in)
        lr0 = cfg.eta_hat / (1.0 - eta_in)
        sched = SchedulerState(v_tilde=1.0 / lr0**2, eta=float(eta), beta=float(beta))
        driver = "scalar-rms"
        sched_eta = float(eta)
    obs = _Observer(cfg, problem, eta_in, sched_eta)
    diverged = None
    try:
        run(driver, problem, w0, cfg.steps, record_every=cfg.record_every, observers=(obs,), sched=sched,
            record_also=obs.projecting)
    except NonFiniteError as exc:
        diverged = {"step": exc.step, "message": str(exc)}
    except RuntimeError as exc:
        if isinstance(exc.__cause__, NonFiniteError):
            diverged = {"step": exc.__cause__.step, "message": str(exc.__cause__)}
        else:
            raise
    rows = obs.rows
    report = {**base, **_summary(rows, cfg), "diverged": diverged}
    if cfg.out:
        _write(cfg, None, rows, report)
    return ExperimentResult(rows=rows, report=report, extra={"oracle": problem, "w0": w0})


def _write(cfg, columns, rows, report):
    out = cfg.out
    d = os.path.dirname(out)
    if d:
        os.makedirs(d, exist_ok=True)
    if cfg.fmt == "json":
        payload = dict(report)
        payload["trace"] = rows if columns is not None else trace_to_json(rows)
        write_report(out, payload)
        return
    with open(out, "w", newline="") as fh:
        if columns is None:
            fh.write(dumps_csv(rows))
        else:
            write_table(fh, columns, rows)
    write_report(out + ".report.json", report)
