import itertools

import numpy as np
import pytest

from robust_boosting.attack import AttackConfig, cube_attack_batch
from robust_boosting.certify import (MultiClassModel, certify_multiclass,
                                     certify_multiclass_batch, evaluate, exact_margin_oracle)
from robust_boosting.errors import TooManyCells, UnknownClass
from robust_boosting.stumps import Stump, StumpEnsemble, certify_stumps_batch
from robust_boosting.trees import Tree, TreeEnsemble, TreeNode, tree_min_margin


def random_stumps(rng, T, d):
    return StumpEnsemble([Stump(int(rng.integers(d)), float(rng.uniform(0.05, 0.95)),
                                float(rng.uniform(-1, 1)), float(rng.uniform(-1.5, 1.5)))
                          for _ in range(T)], n_features=d)


def test_oracle_eps_zero_is_clean_margin(rng):
    model = random_stumps(rng, 10, 3)
    for x in rng.random((20, 3)):
        assert exact_margin_oracle(model, x, -1, 0.0) == -model.margin(x)[0]


def test_oracle_matches_exact_stump_certificate(backend):
    rng = np.random.default_rng(77)
    for _ in range(100):
        model = random_stumps(rng, 10, 3)
        x, y, eps = rng.random(3), int(rng.choice([-1, 1])), float(rng.uniform(0, 0.4))
        m, _ = certify_stumps_batch(model, x[None], [y], eps)
        assert exact_margin_oracle(model, x, y, eps) == m[0]


def test_oracle_single_tree_matches_bound():
    node = TreeNode(0, 0.5, -0.3, 0.9, left=TreeNode(1, 0.3, 0.2, -0.6),
                    right=TreeNode(1, 0.7, 0.4, 0.1))
    ens = TreeEnsemble([Tree(node)], n_features=2)
    rng = np.random.default_rng(1)
    for x in rng.random((50, 2)):
        assert exact_margin_oracle(ens, x, 1, 0.2) == tree_min_margin(Tree(node), x, 1, 0.2)


def test_oracle_cell_guard(rng):
    model = random_stumps(rng, 200, 4)
    with pytest.raises(TooManyCells):
        exact_margin_oracle(model, np.full(4, 0.5), 1, 0.5, max_cells=1000)


def test_evaluate_separable_eps_zero():
    model = StumpEnsemble([Stump(0, 0.5, -1.0, 2.0)], n_features=1)
    X = np.array([[0.1], [0.2], [0.8], [0.9]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    rep = evaluate(model, X, y, 0.0)
    assert rep.te == rep.lrte == rep.urte == rep.rte_exact == 0.0


def test_evaluate_sandwich_trees(rng):
    ens = TreeEnsemble([Tree(TreeNode(int(rng.integers(2)), float(rng.uniform(0.2, 0.8)),
                                      *rng.uniform(-1, 1, 2))) for _ in range(6)], n_features=2)
    X = rng.random((80, 2))
    y = np.where(ens.margin(X) > 0, 1.0, -1.0)
    y[:10] *= -1
    rep = evaluate(ens, X, y, 0.1, AttackConfig(n_iters=20), want_exact=True)
    assert rep.te <= rep.lrte <= rep.rte_exact <= rep.urte
    assert np.all(rep.clean_margin >= rep.attack_margin)
    assert np.all(rep.attack_margin >= rep.exact_margin)
    assert np.all(rep.exact_margin >= rep.bound_margin - 1e-12)


def test_evaluate_stumps_exact_equals_bound(rng):
    model = random_stumps(rng, 8, 3)
    X = rng.random((30, 3))
    y = rng.choice([-1.0, 1.0], 30)
    rep = evaluate(model, X, y, 0.1)
    assert rep.rte_exact == rep.urte
    rows = list(rep.per_point_rows())
    assert len(rows) == 30 and rows[0][0] == 0


def test_evaluate_is_deterministic(rng):
    model = random_stumps(rng, 8, 3)
    X = rng.random((30, 3))
    y = rng.choice([-1.0, 1.0], 30)
    a, b = evaluate(model, X, y, 0.1), evaluate(model, X, y, 0.1)
    assert a.summary() == b.summary()
    np.testing.assert_array_equal(a.attack_margin, b.attack_margin)


# ---------------------------------------------------------------- multiclass

def test_mirrored_pair_doubles_binary_margin(backend, rng):
    pos = random_stumps(rng, 8, 2)
    model = MultiClassModel([pos.negated(), pos], [-1, 1])
    for x in rng.random((30, 2)):
        binary, _ = certify_stumps_batch(pos, x[None], [1], 0.1)
        _, m = certify_multiclass(model, x, 1, 0.1)
        assert m == pytest.approx(2 * binary[0], abs=1e-12)


def test_multiclass_eps_zero_is_argmax_gap(rng):
    model = MultiClassModel([random_stumps(rng, 6, 2) for _ in range(3)], ["a", "b", "c"])
    X = rng.random((40, 2))
    pred = model.predict(X)
    for x, p in zip(X, pred):
        robust, m = certify_multiclass(model, x, p, 0.0)
        F = model.margins(x[None])[0]
        assert m == pytest.approx(np.sort(F)[-1] - np.sort(F)[-2], abs=1e-12)
        assert robust == (m > 0)


def test_multiclass_matches_cell_brute_force(backend):
    rng = np.random.default_rng(21)
    for _ in range(40):
        members = [random_stumps(rng, 5, 2) for _ in range(3)]
        model = MultiClassModel(members, [0, 1, 2])
        x, y, eps = rng.random(2), int(rng.integers(3)), float(rng.uniform(0.02, 0.3))
        _, m = certify_multiclass(model, x, y, eps)
        cuts = model.thresholds_by_coord()
        axes = []
        for k in range(2):
            lo, hi = max(x[k] - eps, 0.0), min(x[k] + eps, 1.0)
            pts = sorted({lo, hi, *[t for t in cuts.get(k, []) if lo < t < hi]})
            reps = [0.5 * (a + b) for a, b in zip(pts, pts[1:])] or [x[k]]
            reps += [t for t in cuts.get(k, []) if lo < t <= hi]
            axes.append(reps)
        # the minimum over pairs of exact pair minima
        pair = min(min(members[y].margin(np.array(z))[0] - members[c].margin(np.array(z))[0]
                       for z in itertools.product(*axes)) for c in range(3) if c != y)
        assert m == pytest.approx(pair, abs=1e-12)


def test_multiclass_sound_against_attack(rng):
    model = MultiClassModel([random_stumps(rng, 6, 2) for _ in range(3)], [0, 1, 2])
    X = rng.random((60, 2))
    y = np.array(model.predict(X), dtype=int)
    m = certify_multiclass_batch(model, X, y, 0.1)
    _, att, _ = cube_attack_batch(model, X, y, 0.1, AttackConfig(n_iters=30))
    assert np.all(att[m > 0] > 0)
    assert np.all(att >= m - 1e-12)


def test_multiclass_trees_use_bound(rng):
    mk = lambda: TreeEnsemble([Tree(TreeNode(0, float(rng.uniform(0.2, 0.8)),  # noqa: E731
                                             *rng.uniform(-1, 1, 2)))], n_features=1)
    model = MultiClassModel([mk(), mk()], ["x", "y"])
    m = certify_multiclass_batch(model, np.array([[0.5]]), ["x"], 0.05)
    assert np.isfinite(m[0])


def test_unknown_class(rng):
    model = MultiClassModel([random_stumps(rng, 3, 2) for _ in range(2)], [0, 1])
    with pytest.raises(UnknownClass):
        certify_multiclass(model, [0.5, 0.5], 7, 0.1)
