"""Boosted decision stumps: evaluation, exact certification and robust fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from ._backend import kernels
from ._split import CandidateSplit, NoValidThreshold, choose_split, summarise_coordinate
from .errors import DimensionMismatch
from .loss import LossKind, as_loss_kind, total_loss

NU = 1e-6
MODES = ("plain", "adversarial", "robust_bound", "robust_exact")


@dataclass(frozen=True)
class Stump:
    coord: int
    threshold: float
    w_l: float
    w_r: float

    def predict(self, x) -> float:
        return self.w_l + self.w_r if x[self.coord] >= self.threshold else self.w_l


@dataclass(frozen=True)
class CertResult:
    margin_min: float
    robust: bool
    delta_star: Optional[np.ndarray]
    exact: bool


def _as_matrix(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise DimensionMismatch(f"expected {d} features, got shape {X.shape}")
    return np.ascontiguousarray(X)


class StumpEnsemble:
    """Ordered, immutable collection of stumps; F(x) is the sum of their outputs."""

    model_kind = "stumps"

    def __init__(self, stumps: Iterable[Stump] = (), n_features: Optional[int] = None,
                 loss_kind="exponential", eps_trained: float = 0.0, w_max: float = 1.0,
                 shrinkage: float = 1.0):
        self.stumps = tuple(stumps)
        if n_features is None:
            n_features = max((s.coord for s in self.stumps), default=0) + 1
        if any(not 0 <= s.coord < n_features for s in self.stumps):
            raise DimensionMismatch("stump coordinate outside the feature range")
        self.n_features = int(n_features)
        self.loss_kind = as_loss_kind(loss_kind)
        self.eps_trained = float(eps_trained)
        self.w_max = float(w_max)
        self.shrinkage = float(shrinkage)
        T = len(self.stumps)
        self.coord = np.array([s.coord for s in self.stumps], dtype=np.int64).reshape(T)
        self.thr = np.array([s.threshold for s in self.stumps], dtype=float).reshape(T)
        self.wl = np.array([s.w_l for s in self.stumps], dtype=float).reshape(T)
        self.wr = np.array([s.w_r for s in self.stumps], dtype=float).reshape(T)
        self._merged = None

    def __len__(self):
        return len(self.stumps)

    def __eq__(self, other):
        return (isinstance(other, StumpEnsemble) and self.stumps == other.stumps
                and self.n_features == other.n_features)

    def __repr__(self):
        return f"StumpEnsemble(T={len(self)}, d={self.n_features})"

    def _meta(self):
        return dict(n_features=self.n_features, loss_kind=self.loss_kind,
                    eps_trained=self.eps_trained, w_max=self.w_max, shrinkage=self.shrinkage)

    def replace(self, stumps=None, **meta) -> "StumpEnsemble":
        kw = self._meta()
        kw.update(meta)
        return StumpEnsemble(self.stumps if stumps is None else stumps, **kw)

    def append(self, *stumps: Stump) -> "StumpEnsemble":
        return self.replace(self.stumps + tuple(stumps))

    def truncate(self, n: int) -> "StumpEnsemble":
        return self.replace(self.stumps[:n])

    def negated(self) -> "StumpEnsemble":
        return self.replace(tuple(Stump(s.coord, s.threshold, -s.w_l, -s.w_r) for s in self.stumps))

    @property
    def coord_index(self) -> dict:
        out = {}
        for t, s in enumerate(self.stumps):
            out.setdefault(s.coord, []).append(t)
        return {k: tuple(v) for k, v in out.items()}

    def margin(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return kernels().stump_margins(X, self.coord, self.thr, self.wl, self.wr)

    decision_function = margin

    def functional_margin(self, X, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.margin(X)

    def merged_index(self):
        """Per-coordinate sorted thresholds with merged w_r (CSR over all coordinates)."""
        if self._merged is None:
            d = self.n_features
            ptr = np.zeros(d + 1, dtype=np.int64)
            ts, ws = [], []
            wl_sum = np.zeros(d)
            index = self.coord_index
            for k in range(d):
                members = index.get(k, ())
                for t in members:
                    wl_sum[k] += self.wl[t]
                by_thr = {}
                for t in sorted(members, key=lambda t: self.thr[t]):
                    by_thr[self.thr[t]] = by_thr.get(self.thr[t], 0.0) + self.wr[t]
                ts.extend(by_thr.keys())
                ws.extend(by_thr.values())
                ptr[k + 1] = len(ts)
            self._merged = (ptr, np.array(ts, dtype=float), np.array(ws, dtype=float), wl_sum)
        return self._merged

    def thresholds_by_coord(self) -> dict:
        ptr, t, _, _ = self.merged_index()
        return {k: t[ptr[k]:ptr[k + 1]] for k in range(self.n_features) if ptr[k + 1] > ptr[k]}

    def split_points(self):
        return [(s.coord, s.threshold) for s in self.stumps]

    def leaf_values(self) -> np.ndarray:
        return np.concatenate((self.wl, self.wl + self.wr))

    def as_tree_arrays(self):
        """Each stump as a depth-1 tree, for the tree-wise kernels."""
        T = len(self)
        none = np.full(T, -1, dtype=np.int64)
        return (self.coord, self.thr, self.wl, self.wr, none, none, np.arange(T, dtype=np.int64))


def stump_margin(ens: StumpEnsemble, x) -> float:
    return float(ens.margin(x)[0])


def certify_stumps_batch(ens: StumpEnsemble, X, y, eps: float):
    """Exact minimal margins and minimisers for many points at once."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    X = _as_matrix(X, ens.n_features)
    y = np.asarray(y, dtype=float).reshape(X.shape[0])
    ptr, t, wrm, _ = ens.merged_index()
    return kernels().stump_certify(X, y, float(eps), ens.coord, ens.thr, ens.wl, ens.wr, ptr, t, wrm)


def certify_stumps_exact(ens: StumpEnsemble, x, y: int, eps: float) -> CertResult:
    m, delta = certify_stumps_batch(ens, x, [y], eps)
    return CertResult(float(m[0]), bool(m[0] > 0), delta[0], True)


def min_perturbation_stumps(ens: StumpEnsemble, x, y: int, nu: float = NU):
    """Smallest l-inf radius (up to nu) at which the point can be misclassified.

    Returns (radius, delta); (inf, None) when no perturbation changes the
    class and (0, zeros) when the point is already misclassified.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    x = _as_matrix(x, ens.n_features)
    if y * ens.margin(x)[0] <= 0:
        return 0.0, np.zeros(ens.n_features)
    dist = np.abs(ens.thr - x[0, ens.coord]) + nu
    cands = np.unique(np.concatenate(([0.0], dist)))

    def probe(r):
        m, delta = certify_stumps_batch(ens, x, [y], r)
        return m[0], delta[0]

    if probe(cands[-1])[0] > 0:
        return math.inf, None
    lo, hi = 0, len(cands) - 1  # cands[lo] robust, cands[hi] not
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(cands[mid])[0] > 0:
            lo = mid
        else:
            hi = mid
    return float(cands[hi]), probe(cands[hi])[1]


def robust_stump_objective_terms(stumps_j: Sequence[Stump], x_ij: float, y: int, eps: float,
                                 b: float):
    """(h_l, h_r): worst-case w_r contribution of existing stumps on one side of b."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    lo, hi = x_ij - eps, x_ij + eps

    def phi(z):
        return sum(s.w_r for s in stumps_j if z >= s.threshold)

    def side_min(z0, stop, closed):
        vals = [y * phi(z0)]
        for s in stumps_j:
            t = s.threshold
            if z0 < t and (t <= stop if closed else t < stop):
                vals.append(y * phi(t))
        return float(min(vals))

    h_l = side_min(lo, min(b, hi), b > hi) if b > lo else math.inf
    h_r = side_min(max(b, lo), hi, True) if b <= hi else math.inf
    return h_l, h_r


def candidate_thresholds(x_col, eps: float, nu: float = NU, lo: float = 0.0, hi: float = 1.0):
    off = eps + nu
    c = np.unique(np.concatenate((x_col - off, x_col + off)))
    return c[(c > lo) & (c < hi)]


def stumpwise_bound(ens: StumpEnsemble, X, y, eps: float) -> np.ndarray:
    """Sum over stumps of the per-stump minimal margin (sound lower bound)."""
    X = _as_matrix(X, ens.n_features)
    y = np.asarray(y, dtype=float)
    return kernels().tree_min_margins(X, y, float(eps), *ens.as_tree_arrays())


@dataclass
class RoundInfo:
    split: Optional[CandidateSplit]
    accepted: bool
    objective_before: float
    objective_after: float


@dataclass
class StumpBooster:
    """Training state for one binary stump ensemble.

    Keeps per-point residual caches for the active mode so each round only
    updates the column of the coordinate that received the new stump.
    """

    X: np.ndarray
    y: np.ndarray
    eps: float
    mode: str = "robust_exact"
    loss_kind: str = "exponential"
    w_max: float = 1.0
    shrinkage: float = 1.0
    ensemble: Optional[StumpEnsemble] = None
    attack_cfg: object = None
    nu: float = NU
    min_leaf: int = 1
    _warm: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float)
        self.loss_kind = as_loss_kind(self.loss_kind)
        n, d = self.X.shape
        if self.ensemble is None:
            self.ensemble = StumpEnsemble(n_features=d, loss_kind=self.loss_kind,
                                          eps_trained=self.eps, w_max=self.w_max,
                                          shrinkage=self.shrinkage)
        self.XT = np.ascontiguousarray(self.X.T)
        self.order = np.ascontiguousarray(np.argsort(self.X, axis=0, kind="stable").T)
        self._refresh()

    # residuals -------------------------------------------------------------
    def _refresh(self):
        ens = self.ensemble
        if self.mode == "robust_exact":
            ptr, t, wrm, wls = ens.merged_index()
            self.Gk = kernels().stump_coord_terms(self.X, self.y, float(self.eps), ptr, t, wrm, wls)
        elif self.mode == "robust_bound":
            self.g = stumpwise_bound(ens, self.X, self.y, self.eps)
        else:
            self.g = ens.functional_margin(self.X, self.y)

    def objective(self, ens: Optional[StumpEnsemble] = None) -> float:
        """Training loss the active mode minimises (clean loss for adversarial)."""
        ens = self.ensemble if ens is None else ens
        if self.mode == "robust_exact":
            m, _ = certify_stumps_batch(ens, self.X, self.y, self.eps)
        elif self.mode == "robust_bound":
            m = stumpwise_bound(ens, self.X, self.y, self.eps)
        else:
            m = ens.functional_margin(self.X, self.y)
        return total_loss(self.loss_kind, m)

    # search ----------------------------------------------------------------
    def _bound_search(self, XT, order, g, y, eps):
        K = kernels()
        d, n = XT.shape
        mask = np.ones(n, dtype=bool)
        shift = float(g.min())
        zeros, ones = np.zeros(d), np.ones(d)
        code = self.loss_kind.code
        summary = K.bound_split_search(XT, order, mask, g, y, shift, float(eps), self.nu,
                                       zeros, ones, self.min_leaf, self.w_max, code)

        def evaluate(j, ts):
            return K.bound_threshold_losses(XT, order, mask, g, y, shift, float(eps),
                                            self.min_leaf, self.w_max, code, j,
                                            np.ascontiguousarray(ts, dtype=float))
        return summary, evaluate

    def _exact_search(self):
        K = kernels()
        ptr, t, wrm, wls = self.ensemble.merged_index()
        G = self.Gk.sum(axis=1)
        shift = float(G.min())
        args = (self.XT, self.order, self.y, G, self.Gk, wls, ptr, t, wrm, float(self.eps))
        code = self.loss_kind.code
        summary = K.exact_split_search(*args, self.nu, self.min_leaf, self.w_max, code, shift)

        def evaluate(j, ts):
            return K.exact_threshold_losses(*args, self.min_leaf, self.w_max, code, shift, j,
                                            np.ascontiguousarray(ts, dtype=float))
        return summary, evaluate

    def _adversarial_data(self):
        from .attack import AttackConfig, make_adversarial_batch

        cfg = self.attack_cfg or AttackConfig(n_iters=10, flip_prob=0.5, seed=0)
        Xa, ya, self._warm = make_adversarial_batch(self.ensemble, self.X, self.y, self.eps, cfg,
                                                    warm_start=self._warm)
        return Xa, ya

    def search(self) -> Optional[CandidateSplit]:
        if self.mode == "robust_exact":
            summary, evaluate = self._exact_search()
        elif self.mode == "adversarial":
            Xa, ya = self._adversarial_data()
            XT = np.ascontiguousarray(Xa.T)
            order = np.ascontiguousarray(np.argsort(Xa, axis=0, kind="stable").T)
            summary, evaluate = self._bound_search(XT, order, self.ensemble.functional_margin(Xa, ya),
                                                   ya, 0.0)
        else:
            eps = self.eps if self.mode == "robust_bound" else 0.0
            summary, evaluate = self._bound_search(self.XT, self.order, self.g, self.y, eps)
        return choose_split(summary, evaluate)

    def fit_coordinate(self, j: int) -> CandidateSplit:
        """Best split restricted to one coordinate."""
        if self.mode == "robust_exact":
            _, evaluate = self._exact_search()
            eps = self.eps
        else:
            eps = self.eps if self.mode == "robust_bound" else 0.0
            _, evaluate = self._bound_search(self.XT, self.order, self.g, self.y, eps)
        cand = candidate_thresholds(self.X[:, j], eps, self.nu)
        if cand.size == 0:
            raise NoValidThreshold(f"coordinate {j} has no threshold inside (0, 1)")
        res = evaluate(j, cand)
        row = summarise_coordinate(cand, res[:, 0], res[:, 1], res[:, 2])
        d = self.X.shape[1]
        summary = np.full((d, 8), np.nan)
        summary[:, 0] = np.inf
        summary[j] = row
        split = choose_split(summary, evaluate)
        if split is None:
            raise NoValidThreshold(f"coordinate {j} has no valid split")
        if self.loss_kind is LossKind.EXPONENTIAL:
            # the search works in a frame shifted by the smallest residual
            base = self.Gk.sum(axis=1) if self.mode == "robust_exact" else self.g
            split = replace(split, loss=split.loss * math.exp(-float(base.min())))
        return split

    # rounds ----------------------------------------------------------------
    def step(self) -> RoundInfo:
        before = self.objective()
        split = self.search()
        if split is None:
            return RoundInfo(None, False, before, before)
        a = self.shrinkage
        stump = Stump(split.coord, split.threshold, a * split.w_l, a * split.w_r)
        new = self.ensemble.append(stump)
        after = self.objective(new)
        # the zero stump is always feasible, so only rounding can make this fail
        if self.mode != "adversarial" and after > before:
            return RoundInfo(split, False, before, before)
        self.ensemble = new
        self._update(stump)
        return RoundInfo(split, True, before, after)

    def _update(self, stump: Stump):
        if self.mode == "robust_exact":
            ptr, t, wrm, wls = self.ensemble.merged_index()
            j = stump.coord
            sub_ptr = np.array([0, ptr[j + 1] - ptr[j]], dtype=np.int64)
            col = kernels().stump_coord_terms(
                np.ascontiguousarray(self.X[:, j:j + 1]), self.y, float(self.eps), sub_ptr,
                np.ascontiguousarray(t[ptr[j]:ptr[j + 1]]),
                np.ascontiguousarray(wrm[ptr[j]:ptr[j + 1]]), wls[j:j + 1].copy())
            self.Gk[:, j] = col[:, 0]
        elif self.mode == "robust_bound":
            single = StumpEnsemble([stump], n_features=self.X.shape[1])
            self.g = self.g + stumpwise_bound(single, self.X, self.y, self.eps)
        else:
            self.g = self.ensemble.functional_margin(self.X, self.y)


def fit_stump(X, y, ens: StumpEnsemble, coord: int, eps: float, mode: str = "robust_exact",
              w_max: float = 1.0, loss_kind="exponential", nu: float = NU) -> CandidateSplit:
    """Best robust stump on a single coordinate given the current ensemble."""
    mode = {"exact": "robust_exact", "bound": "robust_bound"}.get(mode, mode)
    booster = StumpBooster(X, y, eps, mode=mode, loss_kind=loss_kind, w_max=w_max,
                           ensemble=ens, nu=nu)
    return booster.fit_coordinate(coord)


def boost_round_stumps(X, y, ens: StumpEnsemble, eps: float, mode: str = "robust_exact",
                       shrinkage: float = 1.0, w_max: float = 1.0, loss_kind="exponential",
                       attack_cfg=None) -> StumpEnsemble:
    booster = StumpBooster(X, y, eps, mode=mode, loss_kind=loss_kind, w_max=w_max,
                           shrinkage=shrinkage, ensemble=ens, attack_cfg=attack_cfg)
    booster.step()
    return booster.ensemble
