import math

import numpy as np
import pytest

from oracles import brute_min_margin, stump_cuts, stump_value
from robust_boosting._backend import set_num_threads
from robust_boosting.errors import DimensionMismatch
from robust_boosting.stumps import (NU, Stump, StumpBooster, StumpEnsemble, boost_round_stumps,
                                    candidate_thresholds, certify_stumps_batch,
                                    certify_stumps_exact, fit_stump, min_perturbation_stumps,
                                    robust_stump_objective_terms, stump_margin, stumpwise_bound)


def random_stumps(rng, T, d):
    return [Stump(int(rng.integers(d)), float(rng.uniform(0.05, 0.95)),
                  float(rng.uniform(-1, 1)), float(rng.uniform(-1.5, 1.5))) for _ in range(T)]


def as_tuples(stumps):
    return [(s.coord, s.threshold, s.w_l, s.w_r) for s in stumps]


ONE = StumpEnsemble([Stump(0, 0.5, -1.0, 2.0)], n_features=1)


# ---------------------------------------------------------------- evaluation

def test_empty_ensemble_margin_is_zero(backend):
    assert stump_margin(StumpEnsemble(n_features=3), [0.1, 0.2, 0.3]) == 0.0


def test_single_stump_margin(backend):
    assert stump_margin(ONE, [0.9]) == 1.0
    assert stump_margin(ONE, [0.1]) == -1.0
    assert stump_margin(ONE, [0.5]) == 1.0  # x >= b goes right


def test_margin_is_sum_of_members(backend, rng):
    stumps = random_stumps(rng, 5, 3)
    ens = StumpEnsemble(stumps, n_features=3)
    X = rng.random((50, 3))
    expected = [sum(s.predict(x) for s in stumps) for x in X]
    np.testing.assert_allclose(ens.margin(X), expected, rtol=0, atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        ONE.margin(np.zeros((2, 3)))
    with pytest.raises(DimensionMismatch):
        StumpEnsemble([Stump(4, 0.5, 0, 1)], n_features=2)


def test_coord_index_partitions_stumps(rng):
    stumps = random_stumps(rng, 12, 4)
    idx = StumpEnsemble(stumps, n_features=4).coord_index
    flat = sorted(t for v in idx.values() for t in v)
    assert flat == list(range(12))
    for k, ts in idx.items():
        assert all(stumps[t].coord == k for t in ts)


# ---------------------------------------------------------------- certification

def test_certify_examples(backend):
    ens = StumpEnsemble([Stump(0, 0.5, 0.0, 1.0)], n_features=1)
    r = certify_stumps_exact(ens, [0.9], 1, 0.3)
    assert r.margin_min == 1.0 and r.robust and r.exact
    r = certify_stumps_exact(ens, [0.9], 1, 0.5)
    assert r.margin_min == 0.0 and not r.robust


def test_certify_matches_piece_brute_force(backend):
    rng = np.random.default_rng(2024)
    for _ in range(100):
        stumps = random_stumps(rng, 8, 3)
        ens = StumpEnsemble(stumps, n_features=3)
        x = rng.random(3)
        y = int(rng.choice([-1, 1]))
        eps = float(rng.uniform(0, 0.4))
        r = certify_stumps_exact(ens, x, y, eps)
        expected = brute_min_margin(as_tuples(stumps), stump_cuts(as_tuples(stumps)), 3, x, y, eps)
        assert r.margin_min == expected
        # the stored minimiser realises the minimum and is feasible
        z = x + r.delta_star
        assert np.all(np.abs(r.delta_star) <= eps)
        assert y * stump_value(as_tuples(stumps), z) == r.margin_min


def test_certify_merges_duplicate_thresholds(backend):
    ens = StumpEnsemble([Stump(0, 0.5, 0.0, 1.0), Stump(0, 0.5, 0.0, -3.0)], n_features=1)
    assert certify_stumps_exact(ens, [0.3], 1, 0.3).margin_min == -2.0


def test_certify_eps_zero_is_clean_margin(backend, rng):
    ens = StumpEnsemble(random_stumps(rng, 10, 4), n_features=4)
    X = rng.random((40, 4))
    y = rng.choice([-1.0, 1.0], 40)
    m, _ = certify_stumps_batch(ens, X, y, 0.0)
    np.testing.assert_array_equal(m, y * ens.margin(X))


def test_certify_rejects_negative_eps():
    with pytest.raises(ValueError):
        certify_stumps_exact(ONE, [0.5], 1, -0.1)


# ---------------------------------------------------------------- minimal radius

def test_min_perturbation_single_threshold(backend):
    r, delta = min_perturbation_stumps(ONE, [0.9], 1)
    assert r == pytest.approx(0.4 + NU, abs=1e-15)
    assert delta[0] == pytest.approx(-0.4 - NU, abs=1e-12)
    assert ONE.margin([0.9 + delta[0]])[0] <= 0


def test_min_perturbation_unanimous_is_inf(backend):
    ens = StumpEnsemble([Stump(0, 0.5, 1.0, 0.5), Stump(1, 0.3, 0.5, 0.0)], n_features=2)
    r, delta = min_perturbation_stumps(ens, [0.4, 0.6], 1)
    assert math.isinf(r) and delta is None


def test_min_perturbation_misclassified_is_zero(backend):
    r, delta = min_perturbation_stumps(ONE, [0.1], 1)
    assert r == 0.0 and np.all(delta == 0)


def test_min_perturbation_contract_and_grid_scan(backend):
    rng = np.random.default_rng(99)
    checked = 0
    while checked < 25:
        ens = StumpEnsemble(random_stumps(rng, 6, 2), n_features=2)
        x = rng.random(2)
        y = 1 if ens.margin(x)[0] > 0 else -1
        if ens.margin(x)[0] == 0:
            continue
        r, delta = min_perturbation_stumps(ens, x, y)
        if math.isinf(r):
            continue
        checked += 1
        assert certify_stumps_exact(ens, x, y, r).margin_min <= 0
        assert certify_stumps_exact(ens, x, y, max(r - 2 * NU, 0.0)).margin_min > 0
        assert y * ens.margin(x + delta)[0] <= 0 and np.max(np.abs(delta)) <= r
        # first grid radius (step 1e-4) at which the point is non-robust
        grid = np.arange(0, 1.0001, 1e-4)
        first = next(e for e in grid if certify_stumps_exact(ens, x, y, e).margin_min <= 0)
        assert abs(first - r) <= 1e-4 + 2 * NU


# ---------------------------------------------------------------- objective terms

def test_objective_terms_examples():
    assert robust_stump_objective_terms([], 0.5, 1, 0.1, 0.55) == (0.0, 0.0)
    old = [Stump(0, 0.5, 0.0, -2.0)]
    h_l, h_r = robust_stump_objective_terms(old, 0.5, 1, 0.1, 0.7)
    assert h_l == -2.0 and math.isinf(h_r)


def test_objective_terms_match_dense_grid():
    rng = np.random.default_rng(8)
    for _ in range(60):
        old = [Stump(0, float(t), 0.0, float(w)) for t, w in
               zip(rng.uniform(0.1, 0.9, 5), rng.uniform(-1, 1, 5))]
        x = float(rng.uniform(0.2, 0.8))
        y = int(rng.choice([-1, 1]))
        eps = float(rng.uniform(0.01, 0.3))
        b = float(rng.uniform(0.0, 1.0))
        h_l, h_r = robust_stump_objective_terms(old, x, y, eps, b)
        # evaluate the ensemble part on a dense grid plus every breakpoint
        zs = np.concatenate((np.linspace(x - eps, x + eps, 2001),
                             [s.threshold for s in old], [b]))
        zs = zs[(zs >= x - eps) & (zs <= x + eps)]
        vals = np.array([y * sum(s.w_r for s in old if z >= s.threshold) for z in zs])
        left, right = vals[zs < b], vals[zs >= b]
        assert h_l == (left.min() if left.size else math.inf)
        assert h_r == (right.min() if right.size else math.inf)


# ---------------------------------------------------------------- fitting

def test_candidate_thresholds_inside_unit_interval():
    c = candidate_thresholds(np.array([0.0, 0.5, 1.0]), 0.1)
    assert np.all((c > 0) & (c < 1))
    np.testing.assert_allclose(c, [0.1 + NU, 0.4 - NU, 0.6 + NU, 0.9 - NU])


def test_plain_fit_separable(backend):
    X = np.array([[0.3], [0.3], [0.7], [0.7]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    s = fit_stump(X, y, StumpEnsemble(n_features=1), 0, 0.0, mode="plain")
    assert 0.3 < s.threshold <= 0.7 and s.w_r > 0
    ens = StumpEnsemble([Stump(0, s.threshold, s.w_l, s.w_r)], n_features=1)
    assert np.all(y * ens.margin(X) > 0)


def test_exact_fit_picks_middle_and_is_robust(backend):
    # boxes of radius 0.15 around 0.3 and 0.7 do not overlap
    X = np.array([[0.3], [0.7]])
    y = np.array([-1.0, 1.0])
    s = fit_stump(X, y, StumpEnsemble(n_features=1), 0, 0.15, mode="exact")
    assert s.threshold == pytest.approx(0.5, abs=1e-9)
    ens = StumpEnsemble([Stump(0, s.threshold, s.w_l, s.w_r)], n_features=1)
    m, _ = certify_stumps_batch(ens, X, y, 0.15)
    assert np.all(m > 0)
    # every other candidate is no better
    for b in candidate_thresholds(X[:, 0], 0.15):
        booster = StumpBooster(X, y, 0.15, mode="robust_exact")
        _, evaluate = booster._exact_search()
        assert evaluate(0, np.array([b]))[0, 0] >= s.loss - 1e-12


def test_exact_fit_with_eps_zero_equals_plain(backend, rng):
    X = rng.random((60, 3))
    y = np.where(X[:, 0] + 0.2 * rng.standard_normal(60) > 0.5, 1.0, -1.0)
    base = StumpEnsemble(random_stumps(rng, 4, 3), n_features=3)
    for j in range(3):
        e = fit_stump(X, y, base, j, 0.0, mode="exact")
        p = fit_stump(X, y, base, j, 0.0, mode="plain")
        assert e.loss == pytest.approx(p.loss, rel=1e-9)


def test_exact_fit_loss_is_training_objective(backend, rng):
    X = rng.random((40, 2))
    y = np.where(X[:, 1] > 0.4, 1.0, -1.0)
    base = StumpEnsemble(random_stumps(rng, 3, 2), n_features=2)
    s = fit_stump(X, y, base, 1, 0.1, mode="exact")
    new = base.append(Stump(1, s.threshold, s.w_l, s.w_r))
    m, _ = certify_stumps_batch(new, X, y, 0.1)
    assert np.exp(-m).sum() == pytest.approx(s.loss, rel=1e-9)


def test_stumpwise_bound_below_exact(backend, rng):
    ens = StumpEnsemble(random_stumps(rng, 10, 2), n_features=2)
    X = rng.random((100, 2))
    y = rng.choice([-1.0, 1.0], 100)
    exact, _ = certify_stumps_batch(ens, X, y, 0.2)
    assert np.all(stumpwise_bound(ens, X, y, 0.2) <= exact + 1e-12)


@pytest.mark.parametrize("mode", ["robust_exact", "robust_bound", "plain"])
def test_rounds_never_increase_objective(mode, backend, rng):
    X = rng.random((80, 3))
    y = np.where(X[:, 0] - X[:, 2] + 0.1 * rng.standard_normal(80) > 0, 1.0, -1.0)
    b = StumpBooster(X, y, 0.08, mode=mode)
    prev = b.objective()
    for _ in range(15):
        info = b.step()
        assert info.objective_after <= prev
        assert b.objective() == pytest.approx(info.objective_after, rel=1e-12)
        prev = info.objective_after
    for s in b.ensemble.stumps:
        assert abs(s.w_l) <= 1 + 1e-12 and abs(s.w_l + s.w_r) <= 1 + 1e-12


def test_incremental_residuals_match_fresh(backend, rng):
    X = rng.random((50, 3))
    y = rng.choice([-1.0, 1.0], 50)
    b = StumpBooster(X, y, 0.1)
    for _ in range(6):
        b.step()
    fresh = StumpBooster(X, y, 0.1, ensemble=b.ensemble)
    np.testing.assert_allclose(b.Gk, fresh.Gk, rtol=0, atol=1e-12)


def test_thread_count_does_not_change_result(rng):
    X = rng.random((120, 4))
    y = np.where(X[:, 1] + X[:, 3] > 1, 1.0, -1.0)
    out = []
    for n in (1, 2):
        set_num_threads(n)
        ens = StumpEnsemble(n_features=4)
        for _ in range(5):
            ens = boost_round_stumps(X, y, ens, 0.05)
        out.append(ens)
    set_num_threads(64)
    assert out[0] == out[1]
