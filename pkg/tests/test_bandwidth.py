import numpy as np
import pytest

from conftest import random_network
from tvbeta.bandwidth import DEFAULT_H_GRID, loo_cv, rate_bandwidth
from tvbeta.estimator import newton_solve
from tvbeta.exceptions import NoDataError, ParameterError
from tvbeta.network import DynamicNetwork, edge_prob_matrix


def brute_force_terms(net, h):
    off = ~np.eye(net.n, dtype=bool)
    terms = []
    for ell in range(net.N):
        keep = np.ones(net.N, bool)
        keep[ell] = False
        rep = newton_solve(net.subset(keep), net.times[ell], h)
        W = edge_prob_matrix(rep.theta.alpha, rep.theta.beta)
        terms.append(np.sum((net.snapshots[ell] - W)[off] ** 2))
    return np.array(terms)


@pytest.fixture
def small_net():
    return random_network(np.random.default_rng(21), 7, 25, density=0.45)


def test_default_grid():
    assert DEFAULT_H_GRID.size == 26
    assert DEFAULT_H_GRID[0] == pytest.approx(0.05) and DEFAULT_H_GRID[-1] == pytest.approx(0.3)


def test_loo_matches_brute_force(small_net):
    res = loo_cv(small_net, [0.3, 0.5])
    for k, h in enumerate([0.3, 0.5]):
        np.testing.assert_allclose(res.terms[k], brute_force_terms(small_net, h), atol=1e-8)
    assert np.all(res.losses >= 0)
    assert res.h_opt == res.grid[np.argmin(res.losses)]


def test_single_candidate(small_net):
    assert loo_cv(small_net, [0.4]).h_opt == 0.4


def test_invariant_to_snapshot_order(small_net):
    perm = np.random.default_rng(0).permutation(small_net.N)
    shuffled = DynamicNetwork(small_net.snapshots[perm], small_net.times[perm], small_net.window)
    a, b = loo_cv(small_net, [0.3, 0.4]), loo_cv(shuffled, [0.3, 0.4])
    np.testing.assert_allclose(a.losses, b.losses, rtol=1e-12)


def test_left_out_snapshot_only_enters_as_target(small_net):
    ell = 10
    A = small_net.snapshots.copy()
    A[ell] = 1 - A[ell]
    A[ell, range(7), range(7)] = 0
    poisoned = DynamicNetwork(A, small_net.times, small_net.window)
    base, pois = loo_cv(small_net, [0.3]), loo_cv(poisoned, [0.3])
    # recover W_h(T_ell) from the clean fit and score the poisoned target
    keep = np.arange(small_net.N) != ell
    rep = newton_solve(small_net.subset(keep), small_net.times[ell], 0.3)
    W = edge_prob_matrix(rep.theta.alpha, rep.theta.beta)
    off = ~np.eye(7, dtype=bool)
    assert pois.terms[0, ell] == pytest.approx(np.sum((A[ell] - W)[off] ** 2), abs=1e-8)
    assert base.terms[0, ell] != pytest.approx(pois.terms[0, ell])


def test_failure_policies():
    r = np.random.default_rng(4)
    A = (r.random((12, 5, 5)) < 0.5).astype(np.uint8)
    A[:, range(5), range(5)] = 0
    times = np.linspace(0, 1, 12)
    times[-1] = 3.0  # isolated snapshot: no neighbour within any candidate h
    net = DynamicNetwork(A, times, (0, 3))
    with pytest.raises(NoDataError):
        loo_cv(net, [0.3, 0.5], policy="inf")
    skip = loo_cv(net, [0.3, 0.5], policy="skip")
    assert np.all(np.isfinite(skip.losses)) and np.all(skip.failures == 1)
    np.testing.assert_allclose(skip.losses, np.nansum(skip.terms, axis=1) * 12 / 11)
    with pytest.raises(ParameterError):
        loo_cv(net, [0.3], policy="other")
    with pytest.raises(ParameterError):
        loo_cv(net, [0.0])


def test_inf_policy_marks_only_failing_candidates():
    r = np.random.default_rng(8)
    A = (r.random((31, 8, 8)) < 0.5).astype(np.uint8)
    A[:, range(8), range(8)] = 0
    times = np.append(np.linspace(0, 1, 30), 1.35)
    net = DynamicNetwork(A, times, (0, 1.35))
    res = loo_cv(net, [0.2, 0.5])  # the last snapshot has no neighbour within 0.2
    assert np.isinf(res.losses[0]) and np.isfinite(res.losses[1])
    assert res.h_opt == 0.5


@pytest.mark.parametrize("n, N, expected", [(40, 100, 0.23), (160, 200, 0.23 * (4000 / 32000) ** 0.2)])
def test_rate_bandwidth(n, N, expected):
    assert rate_bandwidth(n, N) == pytest.approx(expected, rel=1e-12)


def test_rate_ratio_prediction():
    assert rate_bandwidth(160, 200) / rate_bandwidth(40, 100) == pytest.approx(0.659, abs=1e-3)
    assert rate_bandwidth(160, 200) == pytest.approx(0.1517, abs=1e-4)
    with pytest.raises(ParameterError):
        rate_bandwidth(0, 10)
