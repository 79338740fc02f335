import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affine_selinf.diagnostics import (InfluenceSummary, RateConfig, SmoothedMaxParams,
                                       StateCounter, correlation_check, influence_constant,
                                       log_p_rate, smoothed_max, sparsity_bound,
                                       sparsity_bound_from_design, submatrix_influence_check,
                                       theorem2_bound, theorem3_condition)
from affine_selinf.events import LassoState, SelectionEvent, coefficient_contrast, lasso_event
from affine_selinf.lasso import lambda_four_sigma_sqrt_log_p, solve_lasso

from conftest import normalized_design


def ev(A):
    A = np.array(A, float)
    return SelectionEvent(A, np.zeros(A.shape[0]), None)


# -- influence constant --------------------------------------------------------

def test_influence_examples():
    assert influence_constant(ev([[1, 0]]), 1.0, np.array([1.0, 0])).M == 2.0
    s = influence_constant(ev([[1, 0]]), 1.0, np.array([0.5, 0]))
    assert s.M == 2.5 and s.r == 1
    empty = influence_constant(SelectionEvent.unconstrained(3), 1.0, np.array([0.2, -0.7, 0]))
    assert empty.M == 0.7 and empty.r == 0


def test_influence_direct_formula(rng):
    A = rng.standard_normal((5, 6))
    sig = rng.uniform(0.5, 2, 6)
    eta = rng.standard_normal(6)
    proj = A @ (sig * eta)
    expected = max(abs(A[i, j] / proj[i]) for i in range(5) for j in range(6)) + np.abs(eta).max()
    got = influence_constant(ev(A), sig, eta)
    assert got.M == pytest.approx(expected, rel=1e-12)
    assert got.M >= np.abs(eta).max()


def test_influence_orthogonal_row_is_infinite():
    s = influence_constant(ev([[1, 0], [0, 1]]), 1.0, np.array([1.0, 0]))
    assert s.M == np.inf
    assert s.infinite_rows == (1,)


def test_influence_skips_all_zero_rows():
    s = influence_constant(ev([[0, 0], [2, 0]]), 1.0, np.array([1.0, 0]))
    assert s.M == 2.0 and s.r == 2


def test_influence_requires_positive_variance():
    with pytest.raises(ValueError):
        influence_constant(ev([[1, 0]]), 1.0, np.zeros(2))


def test_influence_merge():
    a = InfluenceSummary(1.0, 3, 2)
    b = InfluenceSummary(2.0, 1, 5)
    m = a.merge(b)
    assert (m.M, m.r, m.observed_state_count) == (2.0, 3, 5)


# -- smoothed maximum ----------------------------------------------------------

def test_smoothed_max_examples():
    assert smoothed_max([0, 0], SmoothedMaxParams(1)) == pytest.approx(math.log(2), abs=1e-15)
    assert smoothed_max([0, 10], 1.0) == pytest.approx(10 + math.log1p(math.exp(-10)),
                                                       abs=1e-14)
    v = np.random.default_rng(0).normal(size=50)
    assert abs(smoothed_max(v, 1e6) - v.max()) <= 1e-5


def test_smoothed_max_no_overflow():
    assert smoothed_max([1e5, 1e5 - 1], 1e3) == pytest.approx(1e5, abs=1e-12)


def test_smoothed_max_input_errors():
    with pytest.raises(ValueError):
        smoothed_max([], 1.0)
    with pytest.raises(ValueError):
        SmoothedMaxParams(0.5)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=100), st.floats(1, 1e3))
def test_smoothed_max_sandwich(values, beta):
    g = smoothed_max(values, beta)
    top = max(values)
    assert -1e-12 * max(1, abs(top)) <= g - top <= math.log(len(values)) / beta + \
        1e-12 * max(1, abs(top))


# -- rate expressions ----------------------------------------------------------

def test_rate_kernel_examples():
    assert theorem2_bound(1.0, 1, math.e, 1.0) == pytest.approx(1.0)
    for n in (4, 100, 10000):
        assert theorem2_bound(n ** -0.5, n, math.e, 1.0) == pytest.approx(n ** -0.1)


def test_condition_examples():
    cfg = RateConfig(1.0, 1)
    assert theorem3_condition(cfg, 1.0, math.e, math.e) == pytest.approx(16.0)
    a = theorem3_condition(RateConfig(0.3, 50), 0.2, 7, 11)
    b = theorem3_condition(RateConfig(0.3, 100), 0.2, 7, 11)
    assert b == pytest.approx(2 * a)


@pytest.mark.parametrize("c,K,kappa", [(1.0, 2, 0.1), (0.4, 5, 0.5)])
def test_condition_in_log_p_regime_matches_shared_rate(c, K, kappa):
    # M = c n^{-1/2}, r = p, |S| = p^{cK}: the condition is
    # c^3 (1 + cK)^4 n^{-1/2} (log p)^{7 + 3 kappa}
    for n, p in [(100, 50), (400, 50), (100, 1000), (2500, 7)]:
        cfg = RateConfig.log_p_regime(n, p, kappa)
        val = theorem3_condition(cfg, c * n ** -0.5, p, p ** (c * K))
        assert val / log_p_rate(n, p, kappa) == pytest.approx(c ** 3 * (1 + c * K) ** 4,
                                                              rel=1e-10)


@pytest.mark.parametrize("arg", ["M", "n", "r", "card_S", "inv_delta"])
def test_rate_expressions_monotone(arg):
    base = dict(M=0.3, n=50, r=8, card_S=20, inv_delta=3.0)

    def both(d):
        cfg = RateConfig(1 / d["inv_delta"], d["n"])
        return (theorem2_bound(d["M"], d["n"], d["r"], d["card_S"]),
                theorem3_condition(cfg, d["M"], d["r"], d["card_S"]))

    lo = both(base)
    hi = both(dict(base, **{arg: base[arg] * 1.5}))
    if arg != "inv_delta":
        assert hi[0] > lo[0]
    assert hi[1] > lo[1]


def test_rate_input_validation():
    with pytest.raises(ValueError):
        theorem2_bound(0, 1, 2, 2)
    with pytest.raises(ValueError):
        RateConfig(0.0, 10)


# -- sparsity and influence checks ---------------------------------------------

def test_sparsity_bound_examples():
    assert sparsity_bound(2.0, 2.0, 1).support_bound == 16
    assert sparsity_bound(2.0, 2.0, 0).support_bound == 0
    sb = sparsity_bound(3.0, 1.5, 2)
    assert sb.c == 64 and sb.log_state_bound(10) == pytest.approx(128 * math.log(10))


def test_sparsity_bound_holds_in_simulation():
    rng = np.random.default_rng(21)
    n, p, K = 100, 30, 3
    X = normalized_design(rng, n, p)
    bound = sparsity_bound_from_design(X, range(K))
    assert bound.proxy
    lam = lambda_four_sigma_sqrt_log_p(1.0, p)
    beta = np.zeros(p)
    beta[:K] = 5.0
    ok = 0
    for _ in range(1000):
        y = X @ beta + rng.standard_normal(n)
        ok += len(solve_lasso(X, y, lam).active) <= bound.support_bound
    assert ok >= 990


def test_submatrix_influence_examples(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((10, 3)))
    chk = submatrix_influence_check(Q, [0, 1, 2], 1.0)
    assert chk.lhs == pytest.approx(np.abs(Q).max())
    assert chk.rhs == pytest.approx(3 * np.abs(Q).max())
    assert chk.holds and chk.precondition_met
    X = rng.standard_normal((10, 3))
    one = submatrix_influence_check(X, [1], 0.5)
    assert one.lhs == pytest.approx(np.abs(X[:, 1]).max() / (X[:, 1] @ X[:, 1]))
    assert one.rhs == pytest.approx(np.abs(X).max() / 0.25)


def test_submatrix_influence_sweep():
    rng = np.random.default_rng(9)
    for _ in range(500):
        X = rng.standard_normal((12, 5))
        E = sorted(rng.choice(5, rng.integers(1, 5), replace=False))
        nu = math.sqrt(np.linalg.eigvalsh(X[:, E].T @ X[:, E])[0]) * (1 - 1e-9)
        chk = submatrix_influence_check(X, E, nu)
        assert chk.holds and chk.precondition_met


def test_submatrix_precondition_reported():
    X = np.array([[1.0, 0.99], [0.0, 0.14]])
    chk = submatrix_influence_check(X, [0, 1], 1.0)
    assert not chk.precondition_met


def test_correlation_check(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((8, 4)))
    c = correlation_check(Q)
    assert c.rho_sq == pytest.approx(0, abs=1e-12) and c.holds
    assert c.influence_bound == pytest.approx(2 * np.abs(Q).max())
    X = normalized_design(rng, 8, 4)
    assert not correlation_check(X, rho_sq=0.0).holds


def test_first_knot_influence_within_correlation_bound(rng):
    from affine_selinf.events import first_knot_event, knot_contrast
    X = normalized_design(rng, 400, 5)
    chk = correlation_check(X)
    for _ in range(20):
        y = rng.standard_normal(400)
        e, _ = first_knot_event(X, y)
        M = influence_constant(e, 1.0, knot_contrast(X, e.label)).M
        assert M <= chk.influence_bound + np.abs(X).max() + 1e-12


def test_fixed_subset_influence_scales_like_inverse_root_n():
    rng = np.random.default_rng(2)
    meds = {}
    for n in (100, 400):
        vals = []
        for _ in range(50):
            X = normalized_design(rng, n, 10)
            E = (0, 1, 2)
            e = SelectionEvent.unconstrained(n)
            vals.append(influence_constant(e, 1.0, coefficient_contrast(X, E, 0)).M * n ** 0.5)
        meds[n] = np.median(vals)
    assert 0.7 <= meds[400] / meds[100] <= 1.43


def test_state_counter_merge():
    a, b = StateCounter(), StateCounter()
    a.add(LassoState((0,), (1,)))
    b.add(LassoState((0,), (1,)))
    b.add(LassoState((1,), (-1,)))
    assert len(a.merge(b)) == 2
