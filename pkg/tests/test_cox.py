import math
import warnings

import numpy as np
import pytest
from conftest import make_dataset
from hypothesis import given, settings, strategies as st
from oracles import naive_c_index, naive_partial_loglik

from sslcox import cox
from sslcox.cox import AllCensoredWarning, SurvivalDataset
from sslcox.exceptions import InputError, UndefinedMetricError


def ds(time, status, X=None):
    return SurvivalDataset(np.asarray(time, float), np.asarray(status), X)


# ------------------------------------------------------------ dataset


def test_dataset_validation():
    with pytest.raises(InputError):
        ds([1.0, -1.0], [1, 0])
    with pytest.raises(InputError):
        ds([1.0, 2.0], [1, 2])
    with pytest.raises(InputError):
        ds([1.0, np.nan], [1, 0])
    d = ds([1.0, 2.0], [1, 0], np.zeros((2, 3)))
    assert d.names == ["x1", "x2", "x3"] and d.p == 3 and d.n_events == 1


def test_risk_set_index_nested():
    d = make_dataset(n=40, ties=True)
    idx = cox.RiskSetIndex.build(d.time, d.status)
    sizes = [len(r) for r in idx.risk_membership]
    assert sizes == sorted(sizes, reverse=True)
    for t, members in zip(idx.event_times, idx.risk_membership):
        assert set(np.flatnonzero((d.time == t) & (d.status == 1))) <= set(members)


# ------------------------------------------------------------ partial likelihood


def test_partial_loglik_hand_values():
    assert cox.partial_loglik(ds([5.0], [1]), [3.7]) == 0.0
    assert cox.partial_loglik(ds([1, 2], [1, 1]), [0, 0]) == pytest.approx(-0.693147, abs=1e-6)
    assert cox.partial_loglik(ds([1, 2], [1, 0]), [math.log(3), 0]) == pytest.approx(-0.287682, abs=1e-6)
    # Breslow ties: two events at t=1 share the full risk set of three
    assert cox.partial_loglik(ds([1, 1, 2], [1, 1, 1]), [0, 0, 0]) == pytest.approx(-2 * math.log(3), abs=1e-12)
    # censored at the same time as an event stays in its risk set
    assert cox.partial_loglik(ds([1, 1], [1, 0]), [0, 0]) == pytest.approx(-math.log(2), abs=1e-12)


def test_all_censored_returns_zero_with_warning():
    d = ds([1, 2, 3], [0, 0, 0])
    with pytest.warns(AllCensoredWarning):
        assert cox.partial_loglik(d, [0.1, 0.2, 0.3]) == 0.0
    assert cox.deviance(d, [0, 0, 0]) == 0.0


def test_log_sum_exp_stability():
    d = make_dataset(n=30, seed=2)
    eta = np.random.default_rng(0).standard_normal(30)
    assert cox.partial_loglik(d, eta + 800.0) == pytest.approx(cox.partial_loglik(d, eta), abs=1e-9)


def test_matches_naive_oracle():
    for seed in range(5):
        d = make_dataset(n=50, seed=seed, ties=seed % 2 == 0)
        eta = np.random.default_rng(seed).standard_normal(50)
        assert cox.partial_loglik(d, eta) == pytest.approx(naive_partial_loglik(d.time, d.status, eta), abs=1e-10)


def test_rejects_bad_eta():
    d = ds([1, 2], [1, 1])
    with pytest.raises(InputError):
        cox.partial_loglik(d, [0.0])
    with pytest.raises(InputError):
        cox.partial_loglik(d, [0.0, np.inf])


# ------------------------------------------------------------ score and curvature


def test_score_single_subject():
    u, w = cox.score_and_hessdiag(ds([1.0], [1]), [0.4])
    assert u[0] == pytest.approx(0.0, abs=1e-15)
    assert w[0] == cox.CURVATURE_FLOOR


def test_score_two_events():
    u, _ = cox.score_and_hessdiag(ds([1, 2], [1, 1]), [0, 0])
    np.testing.assert_allclose(u, [0.5, -0.5], atol=1e-15)


def _fd_grad(d, eta, h=1e-5):
    g = np.empty_like(eta)
    for i in range(eta.size):
        e = np.zeros_like(eta)
        e[i] = h
        g[i] = (cox.partial_loglik(d, eta + e) - cox.partial_loglik(d, eta - e)) / (2 * h)
    return g


@pytest.mark.parametrize("ties", [False, True])
def test_score_matches_finite_differences(ties):
    for seed in range(5):
        d = make_dataset(n=30, seed=seed, ties=ties)
        eta = np.random.default_rng(seed + 10).standard_normal(30)
        u, _ = cox.score_and_hessdiag(d, eta)
        fd = _fd_grad(d, eta)
        assert np.linalg.norm(u - fd) / np.linalg.norm(fd) < 1e-6


def test_curvature_matches_second_differences():
    d = make_dataset(n=25, seed=4, ties=True)
    eta = np.random.default_rng(4).standard_normal(25)
    _, w = cox.score_and_hessdiag(d, eta)
    h = 1e-4
    for i in range(25):
        e = np.zeros(25)
        e[i] = h
        up, _ = cox.score_and_hessdiag(d, eta + e)
        dn, _ = cox.score_and_hessdiag(d, eta - e)
        assert max(-(up[i] - dn[i]) / (2 * h), cox.CURVATURE_FLOOR) == pytest.approx(w[i], abs=1e-6)


# ------------------------------------------------------------ Breslow baseline


def test_breslow_hand_values():
    b = cox.breslow_baseline(ds([1.0], [1]), [0.0])
    np.testing.assert_allclose(b.increments, [1.0])
    b = cox.breslow_baseline(ds([1, 2], [1, 1]), [0, 0])
    np.testing.assert_allclose(b.increments, [0.5, 1.0])
    np.testing.assert_allclose(b.cumulative_at([0.5, 1.0, 1.5, 2.0, 9.0]), [0.0, 0.5, 0.5, 1.5, 1.5])


def test_breslow_scale_equivariance_and_nelson_aalen():
    d = make_dataset(n=40, ties=True, seed=5)
    eta = np.random.default_rng(5).standard_normal(40)
    b1 = cox.breslow_baseline(d, eta)
    b2 = cox.breslow_baseline(d, eta + math.log(2.0))
    np.testing.assert_allclose(b2.increments, b1.increments / 2.0, rtol=1e-12)
    assert np.all(b1.increments >= 0) and np.all(np.diff(b1.cumulative) >= 0)
    b0 = cox.breslow_baseline(d, np.zeros(40))
    na = [np.sum((d.time == t) & (d.status == 1)) / np.sum(d.time >= t) for t in b0.event_times]
    np.testing.assert_allclose(b0.increments, na, rtol=1e-12)


# ------------------------------------------------------------ deviance and C-index


def test_deviance_definition():
    assert cox.deviance(ds([1, 2], [1, 1]), [0, 0]) == pytest.approx(1.386294, abs=1e-6)
    d = make_dataset(n=30, seed=6)
    eta = np.random.default_rng(6).standard_normal(30)
    assert cox.deviance(d, eta) == -2.0 * cox.partial_loglik(d, eta)


def test_c_index_hand_values():
    d = ds([1, 2, 3], [1, 1, 1])
    assert cox.c_index(d, [3, 2, 1]) == 1.0
    assert cox.c_index(d, [1, 2, 3]) == 0.0
    assert cox.c_index(d, [1, 1, 1]) == 0.5


def test_c_index_undefined():
    with pytest.raises(UndefinedMetricError):
        cox.c_index(ds([1, 2], [0, 0]), [0, 1])
    with pytest.raises(UndefinedMetricError):
        cox.c_index(ds([2, 2], [1, 1]), [0, 1])


def test_c_index_matches_naive():
    d = make_dataset(n=40, seed=7, ties=True)
    risk = np.round(np.random.default_rng(7).standard_normal(40), 1)
    assert cox.c_index(d, risk) == pytest.approx(naive_c_index(d.time, d.status, risk), abs=1e-14)


# ------------------------------------------------------------ KM and grouping


def test_kaplan_meier_hand_values():
    t, s = cox.kaplan_meier([1.0, 2.0], [1, 0])
    np.testing.assert_allclose(t, [0, 1, 2])
    np.testing.assert_allclose(s, [1, 0.5, 0.5])
    _, s = cox.kaplan_meier([1.0, 2.0, 3.0], [0, 0, 0])
    assert np.all(s == 1.0)
    _, s = cox.kaplan_meier([4.0, 1.0, 3.0, 2.0], [1, 1, 1, 1])
    np.testing.assert_allclose(s, [1, 0.75, 0.5, 0.25, 0.0])


def test_median_risk_groups():
    assert list(cox.median_risk_groups([1, 2, 3, 4])) == ["low", "low", "high", "high"]
    assert list(cox.median_risk_groups([2, 2, 2])) == ["low"] * 3
    assert list(cox.median_risk_groups([5, 1, 3])) == ["high", "low", "low"]


# ------------------------------------------------------------ properties

survival_data = st.integers(2, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(1, 12), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
        st.lists(st.floats(-4, 4), min_size=n, max_size=n),
    )
)


@settings(max_examples=60, deadline=None)
@given(survival_data, st.floats(-50, 50))
def test_location_invariance_and_zero_score_sum(args, c):
    t, s, eta = args
    d = ds(t, s)
    eta = np.array(eta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AllCensoredWarning)
        assert abs(cox.partial_loglik(d, eta) - cox.partial_loglik(d, eta + c)) < 1e-9
        assert cox.partial_loglik(d, eta) <= 1e-12
    u, w = cox.score_and_hessdiag(d, eta)
    assert abs(u.sum()) < 1e-9
    assert np.all(w >= cox.CURVATURE_FLOOR)


@settings(max_examples=60, deadline=None)
@given(survival_data)
def test_c_index_antisymmetry(args):
    t, s, eta = args
    d = ds(t, s)
    risk = np.arange(len(t), dtype=float)
    np.random.default_rng(len(t)).shuffle(risk)
    try:
        c = cox.c_index(d, risk)
    except UndefinedMetricError:
        return
    assert 0.0 <= c <= 1.0
    assert c + cox.c_index(d, -risk) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(survival_data)
def test_kaplan_meier_properties(args):
    t, s, _ = args
    times, surv = cox.kaplan_meier(np.array(t, float), np.array(s))
    assert surv[0] == 1.0
    assert np.all((surv >= 0) & (surv <= 1))
    assert np.all(np.diff(surv) <= 0)
    assert np.all(np.diff(times) > 0)
