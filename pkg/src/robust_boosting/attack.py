"""Black-box l-inf corner search attack and radius estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class AttackConfig:
    n_iters: int = 20
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if not 0 < self.flip_prob <= 1:
            raise ValueError("flip_prob must be in (0, 1]")


@dataclass
class AttackResult:
    delta: np.ndarray
    margin: float
    success: bool
    queries: int


def functional_margin(model, X, y) -> np.ndarray:
    """y * F(X) for ensembles, multiclass models or plain callables F(X)."""
    if hasattr(model, "functional_margin"):
        return np.asarray(model.functional_margin(X, y), dtype=float)
    return np.asarray(y, dtype=float) * np.asarray(model(X), dtype=float)


def _project(X0, Z, eps):
    """Delta such that X0 + delta is the projection of Z, exactly feasible in floats."""
    P = np.clip(np.clip(Z - X0, -eps, eps) + X0, 0.0, 1.0)
    delta = P - X0
    while True:
        pt = X0 + delta
        bad = (pt > 1.0) | (pt < 0.0) | (np.abs(delta) > eps) | (np.abs(pt - X0) > eps)
        if not bad.any():
            return delta
        delta = np.where(bad, np.nextafter(delta, 0.0), delta)


def cube_attack_batch(model, X, y, eps: float, cfg: AttackConfig, init_delta=None,
                      stream_ids=None, observer=None):
    """Run the attack on every row of X; row i draws from stream (seed, id_i).

    Returns (deltas, margins, queries per point).  ``observer`` is called
    with every batch of evaluated points (used by tests to audit feasibility).
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y)
    n, d = X.shape
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    ids = np.arange(n) if stream_ids is None else np.asarray(stream_ids)
    rngs = [np.random.default_rng([cfg.seed, int(i)]) for i in ids]
    best = np.zeros_like(X) if init_delta is None else _project(X, X + init_delta, eps)
    if observer is not None:
        observer(X + best)
    best_m = functional_margin(model, X + best, y)
    p = cfg.flip_prob
    two_eps = 2.0 * eps
    for _ in range(cfg.n_iters):
        u = np.stack([r.random(d) for r in rngs]) if n else np.zeros((0, d))
        step = np.where(u < 0.5 * p, -two_eps, np.where(u < p, two_eps, 0.0))
        cand = _project(X, X + best + step, eps)
        if observer is not None:
            observer(X + cand)
        m = functional_margin(model, X + cand, y)
        better = m < best_m
        best[better] = cand[better]
        best_m = np.where(better, m, best_m)
    return best, best_m, np.full(n, cfg.n_iters + 1)


def cube_attack(model, x, y: int, eps: float, cfg: AttackConfig = AttackConfig(),
                init_delta=None, stream_id: int = 0) -> AttackResult:
    x = np.asarray(x, dtype=float)[None, :]
    init = None if init_delta is None else np.asarray(init_delta, dtype=float)[None, :]
    delta, m, q = cube_attack_batch(model, x, [y], eps, cfg, init, [stream_id])
    return AttackResult(delta[0], float(m[0]), bool(m[0] <= 0), int(q[0]))


def min_radius_estimate(model, x, y: int, eps_max: float, cfg: AttackConfig = AttackConfig(),
                        resolution: float = 1e-3) -> float:
    """Upper estimate of the minimal adversarial radius by bisection over eps.

    Returns 0 for a misclassified point and inf when the attack does not
    succeed even at eps_max.
    """
    x = np.asarray(x, dtype=float)
    if functional_margin(model, x[None, :], [y])[0] <= 0:
        return 0.0

    def success(r, probe):
        return cube_attack(model, x, y, r, cfg, stream_id=probe).success

    probe = 0
    if not success(eps_max, probe):
        return math.inf
    lo, hi = 0.0, float(eps_max)
    while hi - lo > resolution:
        probe += 1
        mid = 0.5 * (lo + hi)
        if success(mid, probe):
            hi = mid
        else:
            lo = mid
    return hi


def make_adversarial_batch(model, X, y, eps: float, cfg: AttackConfig,
                           warm_start: Optional[np.ndarray] = None):
    """Clean points followed by their attacked copies.

    Returns (X_aug, y_aug, deltas); pass ``deltas`` back as ``warm_start``
    on the next round.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    delta, _, _ = cube_attack_batch(model, X, y, eps, cfg, init_delta=warm_start)
    return np.vstack((X, X + delta)), np.concatenate((y, y)), delta
