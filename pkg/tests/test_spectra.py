import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eoslab import Example3D, lanczos_top, spherical_sharpness
from eoslab.harness import gen_linreg
from eoslab.spectra import (EigenGap, LanczosError, SpectrumResult, dense_top, eigen_gap, hessian_spectrum,
                            pac_bayes_bound)


def test_diagonal_operator():
    D = np.diag([1.0, 2.0, 3.0])
    res = lanczos_top(lambda v: D @ v, 3)
    assert res.lambda1 == pytest.approx(3.0)
    assert abs(res.v1[2]) == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.integers(10, 80))
def test_random_symmetric_matches_dense(seed, dim):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((dim, dim))
    A = A + A.T
    ev = np.linalg.eigvalsh(A)
    res = lanczos_top(lambda v: A @ v, dim, seed=seed, tol=1e-10, n_eigs=3)
    assert abs(res.lambda1 - ev[-1]) <= 1e-8 * abs(ev[-1])
    np.testing.assert_allclose(res.values, ev[::-1][:3], rtol=1e-8)


def test_deterministic_given_seed():
    A = np.random.default_rng(0).standard_normal((40, 40))
    A = A + A.T
    a = lanczos_top(lambda v: A @ v, 40, seed=5)
    b = lanczos_top(lambda v: A @ v, 40, seed=5)
    assert a == b


def test_low_rank_operator_with_breakdown():
    rng = np.random.default_rng(1)
    U = np.linalg.qr(rng.standard_normal((60, 2)))[0]
    A = U @ np.diag([5.0, 2.0]) @ U.T
    res = lanczos_top(lambda v: A @ v, 60, rank=2)
    assert res.lambda1 == pytest.approx(5.0)
    assert res.lambda_small == pytest.approx(2.0)


def test_nonconvergence_raises_with_estimate():
    A = np.diag(np.linspace(0, 1, 400))
    with pytest.raises(LanczosError) as info:
        lanczos_top(lambda v: A @ v, 400, k=3, max_restarts=1, tol=1e-15)
    assert 0.0 < info.value.best.lambda1 <= 1.0


def test_example3d_sharpness_on_minimizer_line():
    p = Example3D(np.eye(3), hvp_method="analytic")
    res = hessian_spectrum(p, np.array([1.0, 1.0, 0.0]) / np.sqrt(2), method="lanczos")
    assert res.lambda1 == pytest.approx(6.0)
    for z in (0.0, 0.3, -0.6):
        r = np.sqrt((1 - z * z) / 2)
        w = np.array([r, r, z])
        assert spherical_sharpness(p, w) == pytest.approx(6 / (1 - z * z), rel=1e-5)


def test_spherical_sharpness_scale_invariant():
    p = gen_linreg(0)
    w = np.random.default_rng(0).standard_normal(p.dim)
    assert spherical_sharpness(p, 3 * w) == pytest.approx(spherical_sharpness(p, w), rel=1e-6)


def test_spherical_sharpness_linreg_closed_form():
    p = gen_linreg(0)
    w = p.retract(np.random.default_rng(4).standard_normal(p.dim))
    wt, _ = p.coefficients(w)
    closed = 2 * (wt @ wt) * np.linalg.eigvalsh(p.Sigma_x - np.outer(p.z, p.z))[-1]
    for method in ("dense", "lanczos"):
        assert spherical_sharpness(p, w, method=method) == pytest.approx(closed, rel=1e-4)


def test_eigen_gap_cases():
    spec = SpectrumResult(lambda1=2.0, v1=np.zeros(3), lambda2=1.0, lambda_small=1.0)
    assert eigen_gap(spec) == EigenGap(0.5, True)
    spec = SpectrumResult(lambda1=2.0, v1=np.zeros(3), lambda2=2.0, lambda_small=2.0)
    assert eigen_gap(spec) == EigenGap(0.0, False)


def test_eigen_gap_example3d():
    p = Example3D(np.eye(3), hvp_method="analytic")
    H = p.hessian(np.array([1.0, 1.0, 0.0]) / np.sqrt(2))
    spec = dense_top(H, rank=1)
    gap = eigen_gap(spec)
    assert gap.top_unique and gap.gamma == pytest.approx(1.0)


def test_pac_bayes_bound():
    n, D, sigma, delta = 1000, 50, 0.1, 0.05
    pure = 1.0 * np.sqrt((D / sigma**2 + 2 * np.log(n / delta)) / (n - 1))
    assert pac_bayes_bound(0.0, 0.0, 1.0, n, D, sigma, delta) == pytest.approx(pure)
    vals = [pac_bayes_bound(l1, 0.5, 1.0, n, D, sigma, delta) for l1 in (0.0, 1.0, 5.0, 10.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    # hand evaluation of one tuple
    l1, m3 = 3.0, 2.0
    ratio = np.log(n) / D
    expect = 0.5 * 0.01 * 3.0 + 16 * 0.001 / 3 * 2.0 * (1 + ratio**1.5) + pure
    assert pac_bayes_bound(l1, m3, 1.0, n, D, sigma, delta) == pytest.approx(expect, rel=1e-12)


def test_pac_bayes_preconditions():
    with pytest.raises(ValueError):
        pac_bayes_bound(1.0, 0.0, 1.0, 100, 10, 0.9, 0.05)
    with pytest.raises(ValueError):
        pac_bayes_bound(1.0, 0.0, 1.0, 100, 10, 0.1, 1.5)
