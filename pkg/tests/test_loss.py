import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import grid_leaf_fit, refined_grid_leaf_fit
from robust_boosting.loss import (LossKind, WeightedCase, fit_leaf_weights,
                                  fit_leaf_weights_offsets, fixed_case_objective, margin_loss,
                                  sigma_aggregates, total_loss)


def test_margin_loss_values():
    assert margin_loss("exponential", 0.0) == 1.0
    assert margin_loss("logistic", 0.0) == pytest.approx(math.log(2))
    big = margin_loss("exponential", -700.0)
    assert math.isfinite(big) and big > 1e300
    assert math.isfinite(margin_loss("exponential", -5000.0))
    assert margin_loss("logistic", 1000.0) == pytest.approx(0.0, abs=1e-300)
    assert margin_loss("logistic", -1000.0) == pytest.approx(1000.0)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_losses_decreasing(u, v):
    for kind in LossKind:
        lo, hi = min(u, v), max(u, v)
        assert margin_loss(kind, hi) <= margin_loss(kind, lo)


def test_total_loss_is_sum():
    m = np.array([0.0, 1.0, -2.0])
    assert total_loss("exponential", m) == pytest.approx(1 + math.exp(-1) + math.exp(2))


def test_weighted_case_validation():
    with pytest.raises(ValueError):
        WeightedCase(0.0, 1, 1)
    with pytest.raises(ValueError):
        WeightedCase(float("inf"), 1, 1)
    with pytest.raises(ValueError):
        WeightedCase(1.0, 2, 1)
    with pytest.raises(ValueError):
        WeightedCase(1.0, 1, 0)


def test_sigma_aggregates_buckets():
    cases = [WeightedCase(1.0, 1, 1), WeightedCase(2.0, 1, -1), WeightedCase(3.0, 0, 1),
             WeightedCase(4.0, 0, -1), WeightedCase(0.5, 1, 1)]
    s = sigma_aggregates(cases)
    assert (s.sigma_11, s.sigma_1m1, s.sigma_01, s.sigma_0m1) == (1.5, 2.0, 3.0, 4.0)


def test_symmetric_buckets_give_zero_left_weight(backend):
    cases = [WeightedCase(1.0, 0, 1), WeightedCase(1.0, 0, 1), WeightedCase(2.0, 0, -1)]
    fit = fit_leaf_weights(cases)
    assert fit.w_l == pytest.approx(0.0, abs=1e-12)


def test_balanced_right_bucket(backend):
    cases = [WeightedCase(1.0, 1, 1), WeightedCase(1.0, 1, -1)]
    for method in ("closed_form", "profile", "bisection"):
        fit = fit_leaf_weights(cases, method=method)
        assert fit.w_l + fit.w_r == pytest.approx(0.0, abs=1e-7)


def test_empty_bucket_clamps_to_w_max(backend):
    # only positive labels on the right: optimum at +inf, clamped
    cases = [WeightedCase(1.0, 1, 1), WeightedCase(1.0, 0, 1), WeightedCase(1.0, 0, -1)]
    fit = fit_leaf_weights(cases, w_max=0.7)
    assert fit.w_l + fit.w_r == pytest.approx(0.7)
    assert abs(fit.w_l) <= 0.7 + 1e-12


def _random_cases(rng, n, kind):
    gam = np.exp(rng.normal(0, 1, n))
    ind = rng.integers(0, 2, n)
    y = rng.choice([-1, 1], n)
    return [WeightedCase(float(g), int(i), int(l)) for g, i, l in zip(gam, ind, y)]


@pytest.mark.parametrize("kind", ["exponential", "logistic"])
def test_fixed_case_fit_matches_grid(kind, backend):
    rng = np.random.default_rng(7)
    for _ in range(50):
        cases = _random_cases(rng, 20, kind)
        fit = fit_leaf_weights(cases, kind=kind)
        off = np.array([-math.log(c.gamma) for c in cases])
        ind = np.array([c.indicator for c in cases])
        a = np.where(ind == 0, off, np.inf)
        b = np.where(ind == 1, off, np.inf)
        g, _, _ = refined_grid_leaf_fit(a, b, [c.label for c in cases], kind, 1.0)
        assert abs(fit.loss - g) <= 2e-3
        assert fit.loss == pytest.approx(fixed_case_objective(cases, kind, fit.w_l, fit.w_r),
                                         rel=1e-9)
        assert abs(fit.w_l) <= 1 + 1e-12 and abs(fit.w_l + fit.w_r) <= 1 + 1e-12


def test_closed_form_matches_bisection(backend):
    rng = np.random.default_rng(3)
    for _ in range(100):
        cases = _random_cases(rng, int(rng.integers(2, 30)), "exponential")
        for sign in ("free", "nonneg", "neg"):
            cf = fit_leaf_weights(cases, sign_domain=sign, method="closed_form")
            bi = fit_leaf_weights(cases, sign_domain=sign, method="bisection")
            assert cf.loss == pytest.approx(bi.loss, rel=1e-6, abs=1e-9)


def test_sign_domain_respected(backend):
    rng = np.random.default_rng(11)
    for _ in range(30):
        cases = _random_cases(rng, 15, "exponential")
        assert fit_leaf_weights(cases, sign_domain="nonneg").w_r >= 0
        assert fit_leaf_weights(cases, sign_domain="neg").w_r <= 0


def test_never_worse_than_zero(backend):
    rng = np.random.default_rng(5)
    for kind in ("exponential", "logistic"):
        for _ in range(30):
            cases = _random_cases(rng, 12, kind)
            fit = fit_leaf_weights(cases, kind=kind)
            assert fit.loss <= fixed_case_objective(cases, kind, 0.0, 0.0) * (1 + 1e-12)


def test_offsets_solver_with_unreachable_sides(backend):
    a = np.array([0.0, np.inf, 0.5, -0.2])
    b = np.array([np.inf, 0.3, 0.1, np.inf])
    y = np.array([1.0, -1.0, 1.0, -1.0])
    for kind in ("exponential", "logistic"):
        fit = fit_leaf_weights_offsets(a, b, y, kind)
        g, _, _ = grid_leaf_fit(a, b, y, kind, 1.0, step=2e-3)
        assert fit.loss <= g + 2e-3
    with pytest.raises(ValueError):
        fit_leaf_weights_offsets([np.inf], [np.inf], [1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([-1.0, 1.0])),
                min_size=1, max_size=12),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_min_of_sides_objective_midpoint_convex(pts, u1, u2, v1, v2):
    """The robust objective as a function of (w_l, w_r) is convex (1e-9 slack)."""
    a = np.array([p[0] for p in pts])
    b = np.array([p[1] for p in pts])
    y = np.array([p[2] for p in pts])

    def obj(wl, wr):
        return float(np.exp(-np.minimum(a + y * wl, b + y * (wl + wr))).sum())

    lhs = obj((u1 + v1) / 2, (u2 + v2) / 2)
    assert lhs <= (obj(u1, u2) + obj(v1, v2)) / 2 + 1e-9 * (1 + lhs)
