import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from conftest import random_network
from tvbeta.estimator import newton_solve
from tvbeta.exceptions import NoDataError, ParameterError
from tvbeta.inference import (
    VarianceReport,
    asymptotic_covariance,
    base_jacobian,
    confidence_band,
    sandwich,
    theoretical_bias,
    variance_estimate,
)
from tvbeta.kernel import density_estimate
from tvbeta.network import DynamicNetwork, ParamTrajectory
from tvbeta.simlab import ParamFamily


def uniform_times_net(n, N, seed=0):
    r = np.random.default_rng(seed)
    A = (r.random((N, n, n)) < 0.5).astype(np.uint8)
    A[:, range(n), range(n)] = 0
    return DynamicNetwork(A, np.linspace(0, 1, N), (0, 1))


def test_variance_structure_at_symmetric_point():
    n = 20
    net = uniform_times_net(n, 101)
    rep = variance_estimate(net, 0.5, np.zeros(2 * n - 1), 0.1)
    f_hat = density_estimate(net, 0.5, 0.1)
    v11 = rep.V_hat.diag_alpha[0]
    assert v11 == pytest.approx(f_hat * (n - 1) * 0.25 / n, rel=1e-12)
    sig = rep.sigma_hat
    assert sig[0, 0] == pytest.approx(1 / v11 + 1 / rep.V_hat.corner, rel=0.1)
    np.testing.assert_allclose(sig, sig.T, atol=1e-10)
    assert np.all(np.diag(sig) >= 0)
    assert rep.scale == pytest.approx(0.6 / (101 * n * 0.1))
    np.testing.assert_allclose(rep.se, np.sqrt(rep.scale * np.diag(sig)))


def test_symmetric_point_leading_term_sharpens_with_n():
    gaps = []
    for n in (20, 80):
        rep = variance_estimate(uniform_times_net(n, 51), 0.5, np.zeros(2 * n - 1), 0.2)
        lead = 1 / rep.V_hat.diag_alpha[0] + 1 / rep.V_hat.corner
        gaps.append(abs(rep.sigma_hat[0, 0] / lead - 1))
    assert gaps[1] < gaps[0] / 2


def test_scale_halves_when_n_doubles():
    theta = np.zeros(9)
    a = variance_estimate(uniform_times_net(5, 50), 0.5, theta, 0.2)
    b = variance_estimate(uniform_times_net(5, 100), 0.5, theta, 0.2)
    assert b.scale == a.scale / 2


def test_variance_requires_mass():
    net = DynamicNetwork(np.zeros((1, 3, 3), np.uint8), [0.1], (0, 1))
    with pytest.raises(NoDataError):
        variance_estimate(net, 0.9, np.zeros(5), 0.1)


@settings(max_examples=25)
@given(st.integers(3, 25), st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_sandwich_psd_and_scale_free(n, seed, c):
    theta = np.random.default_rng(seed).uniform(-2, 2, 2 * n - 1)
    V = base_jacobian(theta)
    M = sandwich(V)
    np.testing.assert_allclose(M, M.T, atol=1e-10)
    assert np.linalg.eigvalsh(M).min() >= -1e-10 * np.abs(M).max()
    # S(cV) = S(V) / c, hence S(cV) cV S(cV)^T = S V S^T / c
    np.testing.assert_allclose(sandwich(V.scaled(c)) * c, M, rtol=1e-9)


def test_kernel_weight_rescaling_leaves_sigma_unchanged(rng):
    # weights times c scale V_hat by c; the sandwich then scales by exactly 1/c
    net = random_network(rng, 6, 40)
    rep = newton_solve(net, 0.5, 0.3)
    v1 = variance_estimate(net, 0.5, rep.theta, 0.3)
    V2 = v1.V_hat.scaled(3.0)
    np.testing.assert_allclose(sandwich(V2) * 3.0, v1.sigma_hat, rtol=1e-10)


def test_confidence_band_examples():
    traj = ParamTrajectory([0.2, 0.5], np.array([[0.0, 1.0, -1.0], [0.5, 0.5, 0.5]]))
    se = np.full((2, 3), 0.1)
    lo, hi = confidence_band(traj, se, 0.95)
    np.testing.assert_allclose((hi - lo) / 2, 1.959964 * 0.1, atol=1e-6)
    lo, hi = confidence_band(traj, np.zeros((2, 3)))
    np.testing.assert_array_equal(lo, traj.theta)
    np.testing.assert_array_equal(hi, traj.theta)
    with pytest.raises(ParameterError):
        confidence_band(traj, se, 1.0)


def test_confidence_band_accepts_reports():
    net = uniform_times_net(4, 30)
    theta = np.zeros(7)
    reps = [variance_estimate(net, t, theta, 0.3) for t in (0.4, 0.6)]
    traj = ParamTrajectory([0.4, 0.6], np.zeros((2, 7)))
    lo, _ = confidence_band(traj, reps)
    np.testing.assert_allclose(lo[0], -1.959963984540054 * reps[0].se)


def test_bias_zero_for_constant_truth():
    fam = ParamFamily("constant", 8, c=0.4)
    res = theoretical_bias(fam, 0.5, density=1.25)
    np.testing.assert_allclose(res.mu, 0.0, atol=1e-6)
    assert isinstance(res.mu_pairs, np.ndarray) and res.u.shape == (8, 8)


def test_bias_linear_alpha_against_analytic_second_derivative():
    n, c, t, f = 5, 0.8, 0.5, 1.25

    def truth(s):
        th = np.zeros(2 * n - 1)
        th[0] = c * s
        return th

    res = theoretical_bias(truth, t, density=f, window=(0.0, 1.0))
    # u_1j = expit(c s): u'' = c^2 u (1 - u)(1 - 2u); other pairs constant
    u = expit(c * t)
    d2 = c ** 2 * u * (1 - u) * (1 - 2 * u)
    pairs = np.zeros((n, n))
    pairs[0, 1:] = 0.5 * d2 * f
    np.testing.assert_allclose(res.mu_pairs, pairs, atol=1e-6)
    V0 = base_jacobian(truth(t))
    shared = pairs[: n - 1, n - 1].sum() / n / (f * V0.corner)
    expected = np.empty(2 * n - 1)
    expected[:n] = pairs.sum(axis=1) / n / (f * V0.diagonal[:n]) + shared
    expected[n:] = pairs[:, : n - 1].sum(axis=0) / n / (f * V0.diagonal[n:]) - shared
    np.testing.assert_allclose(res.mu, expected, atol=1e-6)


def test_bias_uses_density_slope():
    fam = ParamFamily("table1", 8)
    flat = theoretical_bias(fam, 0.5, 1.25, 0.0)
    sloped = theoretical_bias(fam, 0.5, 1.25, 2.0)
    assert not np.allclose(sloped.mu, flat.mu)


def test_bias_edge_guard():
    with pytest.raises(ParameterError):
        theoretical_bias(ParamFamily("table1", 8), 0.1, 1.25)


def test_asymptotic_covariance_scales_inversely_with_density():
    theta = np.random.default_rng(3).uniform(-1, 1, 11)
    np.testing.assert_allclose(asymptotic_covariance(theta, 2.0) * 2.0, asymptotic_covariance(theta, 1.0), rtol=1e-10)


def test_plugin_covariance_approaches_truth_as_n_grows():
    from tvbeta.simlab import SimDesign, generate

    fam = ParamFamily("table1", 40)
    errs = []
    for N in (100, 400):
        h = 0.23 * (100 / N) ** 0.2
        design = SimDesign(40, N, h, seed=4)
        net = generate(design, fam)
        rep = newton_solve(net, 0.5, h)
        sig_hat = variance_estimate(net, 0.5, rep.theta, h).sigma_hat
        errs.append(np.abs(sig_hat - asymptotic_covariance(fam.theta(0.5), design.density)).max())
    assert errs[1] < errs[0]


def test_report_type():
    rep = variance_estimate(uniform_times_net(4, 20), 0.5, np.zeros(7), 0.3)
    assert isinstance(rep, VarianceReport)
