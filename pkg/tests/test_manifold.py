import numpy as np
import pytest

from eoslab import DomainError, Example3D, spherical_sharpness
from eoslab.harness import gen_linreg
from eoslab.manifold import (FlowState, extract_observables, flow_step, gf_project, grad_log_sharpness,
                             integrate_flow, linreg_hessian_on_manifold, make_point, min_norm_oracle,
                             sharpness_field, tangent_project)


@pytest.fixture(scope="module")
def linreg():
    return gen_linreg(0)


@pytest.fixture(scope="module")
def ex3d():
    return Example3D(np.eye(3), hvp_method="analytic")


ZETA_STAR = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)


def _on_manifold(p, seed):
    return p.retract(np.random.default_rng([seed, 99]).standard_normal(p.dim))


def test_project_fixed_point(linreg):
    zeta = _on_manifold(linreg, 0)
    pt = gf_project(zeta, linreg)
    np.testing.assert_allclose(pt.phi, zeta, atol=1e-8)


def test_project_lands_on_linreg_manifold(linreg):
    theta = np.random.default_rng(1).standard_normal(linreg.dim)
    pt = gf_project(theta / np.linalg.norm(theta), linreg, inner_lr=0.05)
    # normalised-direction form of the interpolation conditions
    assert linreg.manifold_residual(pt.phi) <= 1e-6
    assert abs(np.linalg.norm(pt.phi) - 1) <= 1e-12


@pytest.mark.parametrize("method", ["pgd", "ode"])
def test_project_example3d_on_line(ex3d, method):
    pt = gf_project(np.array([0.3, 1.3, 1.2]) / np.linalg.norm([0.3, 1.3, 1.2]), ex3d, method=method)
    assert abs(pt.phi[0] - pt.phi[1]) <= 1e-6 and pt.phi[0] > 0


def test_tangent_project_normal_directions(ex3d):
    pt = make_point(ex3d, ZETA_STAR, rank=1)
    assert np.linalg.norm(tangent_project(pt, pt.phi)) <= 1e-12
    assert np.linalg.norm(tangent_project(pt, pt.spectrum.v1)) <= 1e-12
    v = np.array([0.4, -1.2, 0.9])
    np.testing.assert_allclose(tangent_project(pt, v), [0.0, 0.0, 0.9], atol=1e-12)


def test_grad_log_sharpness_zero_at_flattest_point(ex3d):
    pt = make_point(ex3d, ZETA_STAR, rank=1)
    assert np.linalg.norm(grad_log_sharpness(pt, ex3d, method="fd")) <= 1e-4


def test_grad_log_sharpness_example3d_closed_form(ex3d):
    # lambda1 = 6 / (1 - z^2) along the minimizer circle
    z = 0.4
    r = np.sqrt((1 - z * z) / 2)
    pt = make_point(ex3d, np.array([r, r, z]), rank=1)
    g = grad_log_sharpness(pt, ex3d, method="fd")
    t = ex3d.tangent_basis(pt.phi)[:, 0]
    # d/ds log(6/(1-z^2)) along unit-speed t, with dz/ds = t_z
    assert g @ t == pytest.approx(2 * z / (1 - z * z) * t[2], rel=1e-5)


def test_grad_log_sharpness_fd_vs_analytic(linreg):
    pt = make_point(linreg, _on_manifold(linreg, 2), rank=linreg.hessian_rank)
    an = grad_log_sharpness(pt, linreg, method="analytic")
    fd = grad_log_sharpness(pt, linreg, method="fd")
    assert np.linalg.norm(fd - an) <= 1e-3 * np.linalg.norm(an)


def test_grad_log_sharpness_zero_at_min_norm(linreg):
    ws, _ = min_norm_oracle(linreg)
    pt = make_point(linreg, ws / np.linalg.norm(ws), rank=linreg.hessian_rank)
    assert np.linalg.norm(grad_log_sharpness(pt, linreg)) <= 1e-4


def test_flow_step_stationary_under_zero_field(linreg):
    zeta = _on_manifold(linreg, 3)
    out = flow_step(FlowState(zeta=zeta), 0.5, linreg, field=lambda z: np.zeros_like(z))
    np.testing.assert_allclose(out.zeta, zeta, atol=1e-14)
    assert out.tau == 0.5


def test_flow_reduces_log_sharpness_at_chain_rule_rate(linreg):
    field = sharpness_field(linreg)
    lam = lambda z: np.log(spherical_sharpness(linreg, z))
    states = integrate_flow(FlowState(zeta=_on_manifold(linreg, 4)), 3.0, 0.25, linreg, field=field)
    logs = [lam(s.zeta) for s in states]
    assert all(b <= a + 1e-12 for a, b in zip(logs, logs[1:]))
    z, dtau = states[4].zeta, 1e-3
    g = field(z)
    fwd = flow_step(FlowState(zeta=z), dtau, linreg, field=field).zeta
    bwd = flow_step(FlowState(zeta=z), -dtau, linreg, field=field).zeta
    # the flow clock runs at twice the rate of the clock in which the display holds
    rate = (lam(fwd) - lam(bwd)) / (2 * dtau) * 2.0
    gg = g @ g
    assert rate == pytest.approx(-2 * gg / (4 + gg), rel=0.05)


def test_flow_reaches_min_norm(linreg):
    field = sharpness_field(linreg)
    st = FlowState(zeta=_on_manifold(linreg, 5))
    for _ in range(2000):
        if np.linalg.norm(field(st.zeta)) <= 1e-4:
            break
        st = flow_step(st, 0.5, linreg, field=field)
    ws, bs = min_norm_oracle(linreg)
    wt, bt = linreg.coefficients(st.zeta)
    assert np.sqrt(np.sum((wt - ws) ** 2) + (bt - bs) ** 2) <= 1e-3


def test_observables_zero_at_projection(linreg):
    pt = make_point(linreg, _on_manifold(linreg, 6), rank=linreg.hessian_rank)
    ob = extract_observables(pt.phi, 1.0 / pt.mu**2, 0.1, pt)
    assert ob.h == 0.0 and ob.u == pytest.approx(0.0, abs=1e-12)
    assert ob.misalignment == 0.0 and ob.p0_residual == 0.0


def test_observables_along_top_eigenvector(linreg):
    pt = make_point(linreg, _on_manifold(linreg, 7), rank=linreg.hessian_rank)
    for eps in (1e-3, 1e-4):
        theta = pt.phi + eps * pt.spectrum.v1
        theta /= np.linalg.norm(theta)
        ob = extract_observables(theta, 1.0, 0.1, pt)
        assert ob.h == pytest.approx(eps, rel=1e-5)
        assert ob.misalignment <= 10 * eps**2


def test_min_norm_toy_and_constant():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    w, b = min_norm_oracle((X, np.array([1.0, -1.0])))
    np.testing.assert_allclose(w, [1.0, -1.0], atol=1e-14)
    assert b == pytest.approx(0.0, abs=1e-14) and w @ w == pytest.approx(2.0)
    w, b = min_norm_oracle((X, np.array([2.5, 2.5])))
    assert np.all(w == 0) and b == 2.5


def test_min_norm_generated_instance(linreg):
    ws, bs = min_norm_oracle(linreg)
    assert np.max(np.abs(linreg.X @ ws + bs - linreg.y)) <= 1e-10
    _, _, Vt = np.linalg.svd(linreg.Xc)
    null = Vt[np.linalg.matrix_rank(linreg.Xc):]
    rng = np.random.default_rng(0)
    for _ in range(100):
        delta = null.T @ rng.standard_normal(null.shape[0])
        assert np.linalg.norm(ws + delta) > np.linalg.norm(ws)


def test_min_norm_rejects_infeasible():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 3))
    with pytest.raises(ValueError):
        min_norm_oracle((X, rng.standard_normal(10)))


def test_hessian_on_manifold(linreg):
    w = _on_manifold(linreg, 8)
    H = linreg_hessian_on_manifold(linreg, w)
    dense = linreg.hessian(w)
    assert np.linalg.norm(H - dense) <= 1e-5 * np.linalg.norm(dense)
    assert np.linalg.eigvalsh(H)[0] >= -1e-8
    assert np.linalg.eigvalsh(H)[-1] == pytest.approx(spherical_sharpness(linreg, w), rel=1e-4)
    with pytest.raises(DomainError):
        linreg_hessian_on_manifold(linreg, np.random.default_rng(17).standard_normal(linreg.dim))
